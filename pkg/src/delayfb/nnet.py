"""Minimal embedding + MLP engine with hand-rolled backprop and Adam.

Everything is float64 and purely functional: `adam_step` returns fresh
parameter/state objects, so a training run is a deterministic function of
its inputs and seed. The elapsed-time input of the label-correction model is
encoded as one extra embedding lookup over log-spaced duration buckets; both
model kinds allocate the same embedding-table shape so the bottom
representation can be transferred between them verbatim.

Checkpoint format ("delayfb-ckpt-v1"): a single JSON document with a
`tensors` map of {name: {shape, values}} (row-major float lists) plus the
elapsed-input metadata. Stable and diffable; see README.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, NumericError

LEAKY_SLOPE = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-12  # log-argument floor used by every loss
_OUT_CLIP = 1e-15  # keeps forward() strictly inside (0,1)

LOSS_KINDS = ("oracle", "vanilla", "lc", "bce")


# ---------------------------------------------------------------------------
# parameters


def elapsed_bucket_edges(w_a: int) -> tuple[float, ...]:
    """Upper edges of the elapsed-time buckets: 1h doubling up to w_a.

    Bucket i holds e in [edges[i-1], edges[i]); one overflow bucket catches
    e >= w_a (labels there are final).
    """
    edges = []
    e = 3600.0
    while e < w_a:
        edges.append(e)
        e *= 2.0
    edges.append(float(w_a))
    return tuple(edges)


def num_elapsed_buckets(w_a: int) -> int:
    return len(elapsed_bucket_edges(w_a)) + 1


@dataclass(frozen=True)
class ModelParams:
    """Embedding table plus dense layers; logically immutable."""

    embedding: np.ndarray  # (rows, dim) float64
    mlp_layers: tuple[tuple[np.ndarray, np.ndarray], ...]  # ((W, b), ...)
    has_elapsed_input: bool
    elapsed_edges: tuple[float, ...]

    @property
    def embedding_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def num_rows(self) -> int:
        return self.embedding.shape[0]

    @property
    def elapsed_row_offset(self) -> int:
        return self.num_rows - (len(self.elapsed_edges) + 1)

    @property
    def num_fields(self) -> int:
        in_width = self.mlp_layers[0][0].shape[0]
        return in_width // self.embedding_dim - (1 if self.has_elapsed_input else 0)


def init_params(
    num_categories: int,
    num_fields: int,
    embedding_dim: int,
    hidden_sizes: Sequence[int],
    has_elapsed_input: bool,
    w_a: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Fresh random parameters; embeddings U(+-1/sqrt(d)), dense fan-in uniform."""
    edges = elapsed_bucket_edges(w_a)
    rows = num_categories + len(edges) + 1
    d = embedding_dim
    emb = rng.uniform(-1.0, 1.0, size=(rows, d)) / np.sqrt(d)
    num_inputs = num_fields + (1 if has_elapsed_input else 0)
    dims = [num_inputs * d, *hidden_sizes, 1]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        layers.append((W, b))
    return ModelParams(
        embedding=emb,
        mlp_layers=tuple(layers),
        has_elapsed_input=has_elapsed_input,
        elapsed_edges=edges,
    )


def tensors_of(params: ModelParams) -> tuple[np.ndarray, ...]:
    """Canonical flat ordering (embedding, W0, b0, W1, b1, ...) used by Adam."""
    flat = [params.embedding]
    for W, b in params.mlp_layers:
        flat.extend((W, b))
    return tuple(flat)


def rebuild_params(params: ModelParams, tensors: Sequence[np.ndarray]) -> ModelParams:
    layers = tuple(
        (tensors[1 + 2 * i], tensors[2 + 2 * i]) for i in range(len(params.mlp_layers))
    )
    return replace(params, embedding=tensors[0], mlp_layers=layers)


# ---------------------------------------------------------------------------
# forward / backward


def _input_rows(params: ModelParams, features: np.ndarray, elapsed) -> np.ndarray:
    feats = np.asarray(features, dtype=np.int64)
    if feats.ndim != 2:
        raise InputError("features must be a (n, num_fields) id matrix")
    if feats.shape[1] != params.num_fields:
        raise InputError(
            f"model expects {params.num_fields} feature fields, got {feats.shape[1]}"
        )
    if (feats < 0).any() or (feats >= params.elapsed_row_offset).any():
        raise InputError("feature id out of vocabulary range")
    if params.has_elapsed_input:
        if elapsed is None:
            raise InputError("model requires an elapsed-time input")
        e = np.asarray(elapsed, dtype=np.float64)
        if e.shape != (feats.shape[0],):
            raise InputError("elapsed must be one duration per sample")
        bucket = np.searchsorted(np.asarray(params.elapsed_edges), e, side="right")
        rows = np.concatenate(
            [feats, (params.elapsed_row_offset + bucket)[:, None]], axis=1
        )
    else:
        if elapsed is not None:
            raise InputError("model takes no elapsed-time input")
        rows = feats
    return rows


def _forward_cached(params: ModelParams, rows: np.ndarray):
    n = rows.shape[0]
    h = params.embedding[rows].reshape(n, -1)
    hs = [h]  # inputs to each dense layer
    zs = []
    L = len(params.mlp_layers)
    for l, (W, b) in enumerate(params.mlp_layers):
        z = h @ W + b
        if l < L - 1:
            zs.append(z)
            h = np.where(z > 0, z, LEAKY_SLOPE * z)
            hs.append(h)
        else:
            z_out = z[:, 0]
    p = np.clip(expit(z_out), _OUT_CLIP, 1.0 - _OUT_CLIP)
    return p, hs, zs


def forward(
    params: ModelParams,
    features: np.ndarray,
    elapsed: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Predicted probability for each row; strictly inside (0,1)."""
    rows = _input_rows(params, features, elapsed)
    p, _, _ = _forward_cached(params, rows)
    return p


def effective_target(
    loss_kind: str, targets: np.ndarray, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Collapse each objective to a soft binary target.

    All four objectives are cross-entropy against some target in [0,1]: the
    true label, the observed label, the corrected label v + w(1-v), or the
    LC model's (possibly fractional) training label.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise InputError("targets must be a nonempty vector")
    if loss_kind in ("oracle", "vanilla"):
        if not np.isin(t, (0.0, 1.0)).all():
            raise InputError(f"{loss_kind} labels must be binary")
        return t
    if loss_kind == "bce":
        if (t < 0).any() or (t > 1).any():
            raise InputError("bce targets must lie in [0,1]")
        return t
    if loss_kind == "lc":
        if weights is None:
            raise InputError("lc loss needs correction weights")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != t.shape:
            raise InputError("weights must match targets in length")
        if not np.isin(t, (0.0, 1.0)).all():
            raise InputError("observed labels must be binary")
        if (w < 0).any() or (w > 1).any():
            raise InputError("correction weights must lie in [0,1]")
        return t + w * (1.0 - t)
    raise InputError(f"unknown loss kind {loss_kind!r}")


def mean_cross_entropy(p: np.ndarray, a: np.ndarray) -> float:
    """Mean negated cross-entropy with clamped log arguments."""
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(a * np.log(pc) + (1.0 - a) * np.log(1.0 - pc)))


def batch_loss(
    params: ModelParams,
    features: np.ndarray,
    targets: np.ndarray,
    loss_kind: str,
    *,
    elapsed: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> float:
    a = effective_target(loss_kind, targets, weights)
    if len(a) != len(features):
        raise InputError("targets must match features in length")
    return mean_cross_entropy(forward(params, features, elapsed), a)


def grad(
    params: ModelParams,
    features: np.ndarray,
    targets: np.ndarray,
    loss_kind: str,
    *,
    elapsed: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> tuple[float, tuple[np.ndarray, ...]]:
    """Mean-batch-loss gradient for every parameter, in canonical order.

    Returns (loss, gradients); no parameter is mutated. The logit gradient of
    every objective collapses to (p - a)/n with a the effective target.
    """
    a = effective_target(loss_kind, targets, weights)
    rows = _input_rows(params, features, elapsed)
    if len(a) != rows.shape[0]:
        raise InputError("targets must match features in length")
    n = rows.shape[0]
    p, hs, zs = _forward_cached(params, rows)
    loss = mean_cross_entropy(p, a)

    L = len(params.mlp_layers)
    g_layers: list[tuple[np.ndarray, np.ndarray]] = [None] * L  # type: ignore
    d = ((p - a) / n)[:, None]
    for l in range(L - 1, -1, -1):
        W, _ = params.mlp_layers[l]
        g_layers[l] = (hs[l].T @ d, d.sum(axis=0))
        d = d @ W.T
        if l > 0:
            d = d * np.where(zs[l - 1] > 0, 1.0, LEAKY_SLOPE)

    dim = params.embedding_dim
    d_emb = d.reshape(n * rows.shape[1], dim)
    flat = rows.reshape(-1)
    g_emb = np.empty_like(params.embedding)
    for j in range(dim):
        g_emb[:, j] = np.bincount(flat, weights=d_emb[:, j], minlength=params.num_rows)

    flat_grads: list[np.ndarray] = [g_emb]
    for gW, gb in g_layers:
        flat_grads.extend((gW, gb))
    return loss, tuple(flat_grads)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0


def init_adam(params: ModelParams) -> OptimizerState:
    ts = tensors_of(params)
    return OptimizerState(
        m=tuple(np.zeros_like(t) for t in ts),
        v=tuple(np.zeros_like(t) for t in ts),
        step=0,
    )


def adam_step(
    params: ModelParams,
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    l2: float = 0.0,
) -> tuple[ModelParams, OptimizerState]:
    """One Adam update with L2 folded into the gradient; returns fresh objects."""
    ts = tensors_of(params)
    if len(grads) != len(ts) or any(g.shape != t.shape for g, t in zip(grads, ts)):
        raise ConfigError("gradient shapes do not match parameter shapes")
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient encountered")
    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    new_t, new_m, new_v = [], [], []
    for theta, g, m, v in zip(ts, grads, state.m, state.v):
        g_eff = g + l2 * theta
        m2 = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g_eff
        v2 = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g_eff * g_eff
        step = lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + ADAM_EPS)
        new_t.append(theta - step)
        new_m.append(m2)
        new_v.append(v2)
    return rebuild_params(params, new_t), OptimizerState(tuple(new_m), tuple(new_v), t)


def transfer_embeddings(source: ModelParams, target: ModelParams) -> ModelParams:
    """Give `target` a copy of `source`'s category embeddings; dense layers stay.

    Only the category region moves: the elapsed-time bucket rows belong to
    the target alone (a model without an elapsed input never trains its
    reserved rows, so copying them would inject noise). Neither input is
    mutated.
    """
    if source.embedding.shape != target.embedding.shape:
        raise ConfigError(
            f"embedding shapes differ: {source.embedding.shape} vs {target.embedding.shape}"
        )
    if source.elapsed_edges != target.elapsed_edges:
        raise ConfigError("elapsed bucket layouts differ between models")
    emb = target.embedding.copy()
    cut = source.elapsed_row_offset
    emb[:cut] = source.embedding[:cut]
    return replace(target, embedding=emb)


# ---------------------------------------------------------------------------
# checkpoints


def _tensor_names(params: ModelParams) -> list[str]:
    names = ["embedding"]
    for i in range(len(params.mlp_layers)):
        names.extend((f"mlp.{i}.weight", f"mlp.{i}.bias"))
    return names


def save_checkpoint(path: str | Path, params: ModelParams, meta: Optional[dict] = None) -> None:
    doc = {
        "format": "delayfb-ckpt-v1",
        "has_elapsed_input": params.has_elapsed_input,
        "elapsed_edges": list(params.elapsed_edges),
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(t.shape), "values": t.reshape(-1).tolist()}
            for name, t in zip(_tensor_names(params), tensors_of(params))
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "delayfb-ckpt-v1":
        raise ConfigError(f"{path}: unknown checkpoint format")
    tensors = doc["tensors"]

    def tensor(name: str) -> np.ndarray:
        entry = tensors[name]
        return np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])

    n_layers = sum(1 for name in tensors if name.endswith(".weight"))
    layers = tuple(
        (tensor(f"mlp.{i}.weight"), tensor(f"mlp.{i}.bias")) for i in range(n_layers)
    )
    return ModelParams(
        embedding=tensor("embedding"),
        mlp_layers=layers,
        has_elapsed_input=bool(doc["has_elapsed_input"]),
        elapsed_edges=tuple(float(x) for x in doc["elapsed_edges"]),
    )
