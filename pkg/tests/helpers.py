"""Shared test utilities: finite-difference oracle, tiny worlds, tiny models."""

import numpy as np

from delayfb import nnet
from delayfb.domain import DAY, FeatureSchema


def finite_diff_grads(params, feats, targets, kind, elapsed=None, weights=None, h=1e-5):
    """Central finite differences of the mean batch loss, every parameter."""
    ts = nnet.tensors_of(params)
    out = []
    for ti in range(len(ts)):
        g = np.zeros_like(ts[ti])
        it = np.nditer(ts[ti], flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            tp = [t.copy() for t in ts]
            tm = [t.copy() for t in ts]
            tp[ti][idx] += h / 2
            tm[ti][idx] -= h / 2
            lp = nnet.batch_loss(
                nnet.rebuild_params(params, tp), feats, targets, kind,
                elapsed=elapsed, weights=weights,
            )
            lm = nnet.batch_loss(
                nnet.rebuild_params(params, tm), feats, targets, kind,
                elapsed=elapsed, weights=weights,
            )
            g[idx] = (lp - lm) / h
            it.iternext()
        out.append(g)
    return tuple(out)


def max_rel_err(analytic, numeric) -> float:
    a = np.concatenate([t.ravel() for t in analytic])
    b = np.concatenate([t.ravel() for t in numeric])
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.maximum(np.abs(a), np.abs(b)))))


def tiny_params(
    rng,
    num_categories=10,
    num_fields=2,
    dim=3,
    hidden=(4, 3),
    has_elapsed=False,
    w_a=2 * DAY,
):
    return nnet.init_params(
        num_categories, num_fields, dim, hidden, has_elapsed, w_a, rng
    )


def zero_like_params(template: nnet.ModelParams) -> nnet.ModelParams:
    """Same shapes, all parameters zero: the network that always outputs 0.5."""
    return nnet.rebuild_params(
        template, [np.zeros_like(t) for t in nnet.tensors_of(template)]
    )


def random_batch(rng, params, n=8, kind="vanilla"):
    """A random valid batch for the given params and loss kind."""
    n_cat = params.elapsed_row_offset
    k = params.num_fields
    per_field = n_cat // k
    cols = [
        rng.integers(i * per_field, (i + 1) * per_field, (n, 1)) for i in range(k)
    ]
    feats = np.concatenate(cols, axis=1)
    elapsed = rng.uniform(100, 3 * DAY, n) if params.has_elapsed_input else None
    weights = None
    if kind in ("oracle", "vanilla"):
        targets = rng.integers(0, 2, n).astype(float)
    elif kind == "bce":
        targets = rng.random(n)
    else:
        targets = rng.integers(0, 2, n).astype(float)
        weights = rng.random(n)
    return feats, targets, elapsed, weights


def two_field_schema() -> FeatureSchema:
    return FeatureSchema(vocab_sizes=(5, 5))
