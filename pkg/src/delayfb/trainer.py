"""Model training: mini-batch loop with early stopping, and the alternating
CVR/LC retraining procedure with embedding transfer.

Each round re-initializes both models from round-indexed seeds (the LC model
keeps its embedding table across rounds, receiving the CVR model's table at
the end of every round), so any round can be replayed in isolation from the
recorded checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import losses, nnet
from .domain import ExperimentConfig, FeatureSchema, LcSample, ObservedSample
from .errors import ConfigError, InputError, NumericError

_EVAL_CHUNK = 32_768

STRATEGIES = ("hard", "soft", "drop")


@dataclass(frozen=True)
class ModelData:
    """A model-ready split: global feature ids plus loss-specific targets."""

    features: np.ndarray  # (n, fields) int64 global ids
    targets: np.ndarray  # (n,) labels (c, v or w depending on the loss kind)
    elapsed: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None  # lc-loss correction weights

    def __post_init__(self):
        n = self.features.shape[0]
        for arr in (self.targets, self.elapsed, self.weights):
            if arr is not None and len(arr) != n:
                raise InputError("all data columns must have equal length")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> "ModelData":
        return ModelData(
            features=self.features[idx],
            targets=self.targets[idx],
            elapsed=None if self.elapsed is None else self.elapsed[idx],
            weights=None if self.weights is None else self.weights[idx],
        )

    def with_weights(self, weights: np.ndarray) -> "ModelData":
        return replace(self, weights=weights)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    valid_metric: float


@dataclass(frozen=True)
class TrainResult:
    params: nnet.ModelParams
    trace: tuple[EpochStats, ...]
    best_epoch: int


def evaluate_loss(params: nnet.ModelParams, data: ModelData, loss_kind: str) -> float:
    """Full-dataset mean loss, computed in chunks."""
    if data.n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    total = 0.0
    for lo in range(0, data.n, _EVAL_CHUNK):
        idx = np.arange(lo, min(lo + _EVAL_CHUNK, data.n))
        part = data.subset(idx)
        total += nnet.batch_loss(
            params,
            part.features,
            part.targets,
            loss_kind,
            elapsed=part.elapsed if params.has_elapsed_input else None,
            weights=part.weights,
        ) * len(idx)
    return total / data.n


def predict(params: nnet.ModelParams, features: np.ndarray, elapsed=None) -> np.ndarray:
    """Chunked forward pass over a full dataset."""
    out = np.empty(len(features))
    for lo in range(0, len(features), _EVAL_CHUNK):
        hi = min(lo + _EVAL_CHUNK, len(features))
        out[lo:hi] = nnet.forward(
            params, features[lo:hi], None if elapsed is None else elapsed[lo:hi]
        )
    return out


def train_model(
    init: nnet.ModelParams,
    data: ModelData,
    loss_kind: str,
    config: ExperimentConfig,
    validation: ModelData,
    valid_metric: str,
    seed_salt: tuple[int, ...] = (),
) -> TrainResult:
    """Mini-batch Adam training with patience-based early stopping.

    Shuffles per epoch with a generator derived from (config.seed, salt);
    stops once the validation metric has failed to improve for more than
    `early_stop_patience` consecutive epochs (or at max_epochs) and returns
    the best-validation checkpoint plus the per-epoch trace.
    """
    if validation.n == 0:
        raise InputError("validation split must be nonempty")
    if data.n == 0:
        raise InputError("training split must be nonempty")
    rng = np.random.default_rng([config.seed, *seed_salt])
    params = init
    state = nnet.init_adam(params)
    best: tuple[float, nnet.ModelParams, int] = (np.inf, init, 0)
    bad = 0
    trace: list[EpochStats] = []
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(data.n)
        seen = 0
        loss_sum = 0.0
        for lo in range(0, data.n, config.batch_size):
            batch = data.subset(perm[lo : lo + config.batch_size])
            try:
                loss, grads = nnet.grad(
                    params,
                    batch.features,
                    batch.targets,
                    loss_kind,
                    elapsed=batch.elapsed if params.has_elapsed_input else None,
                    weights=batch.weights,
                )
                params, state = nnet.adam_step(
                    params, grads, state, config.learning_rate, config.l2_reg
                )
            except NumericError as err:
                raise NumericError(f"epoch {epoch}: {err}") from err
            loss_sum += loss * batch.n
            seen += batch.n
        train_loss = loss_sum / seen
        vm = evaluate_loss(params, validation, valid_metric)
        if not (np.isfinite(train_loss) and np.isfinite(vm)):
            raise NumericError(f"epoch {epoch}: non-finite loss")
        trace.append(EpochStats(epoch=epoch, train_loss=train_loss, valid_metric=vm))
        if vm < best[0]:
            best = (vm, params, epoch)
            bad = 0
        else:
            bad += 1
            if bad > config.early_stop_patience:
                break
    return TrainResult(params=best[1], trace=tuple(trace), best_epoch=best[2])


# ---------------------------------------------------------------------------
# dataset assembly helpers


def observed_to_arrays(
    samples: Sequence[ObservedSample], schema: FeatureSchema
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(global features, observed labels v, elapsed seconds) column arrays."""
    feats = schema.globalize(np.array([s.features for s in samples]))
    v = np.array([s.v for s in samples], dtype=np.float64)
    e = np.array([s.e for s in samples], dtype=np.float64)
    return feats, v, e


def lc_to_data(samples: Sequence[LcSample], schema: FeatureSchema) -> ModelData:
    feats = schema.globalize(np.array([s.features for s in samples]))
    w = np.array([s.w for s in samples], dtype=np.float64)
    e_cd = np.array([s.e_cd for s in samples], dtype=np.float64)
    return ModelData(features=feats, targets=w, elapsed=e_cd)


# ---------------------------------------------------------------------------
# alternating training


@dataclass(frozen=True)
class RoundCheckpoint:
    round: int
    lc_result: TrainResult
    cvr_result: TrainResult


@dataclass(frozen=True)
class AltTrainResult:
    cvr_params: nnet.ModelParams
    rounds: tuple[RoundCheckpoint, ...]

    @property
    def lc_params(self) -> nnet.ModelParams:
        """The LC model whose weights trained the returned CVR model."""
        return self.rounds[-1].lc_result.params


def _init_models(
    config: ExperimentConfig, schema: FeatureSchema, round_idx: int
) -> tuple[nnet.ModelParams, nnet.ModelParams]:
    cvr = nnet.init_params(
        schema.total_categories,
        schema.num_fields,
        config.embedding_dim,
        config.hidden_sizes,
        has_elapsed_input=False,
        w_a=config.w_a,
        rng=np.random.default_rng([config.seed, 11, round_idx]),
    )
    lc = nnet.init_params(
        schema.total_categories,
        schema.num_fields,
        config.embedding_dim,
        config.hidden_sizes,
        has_elapsed_input=True,
        w_a=config.w_a,
        rng=np.random.default_rng([config.seed, 12, round_idx]),
    )
    return cvr, lc


def run_round(
    round_idx: int,
    config: ExperimentConfig,
    schema: FeatureSchema,
    cvr_data: ModelData,
    cvr_valid: ModelData,
    lc_data: ModelData,
    lc_embedding: Optional[np.ndarray],
) -> RoundCheckpoint:
    """One alternating-training round, replayable in isolation.

    Both models are re-initialized from round-indexed seeds; the LC model's
    embedding table is overridden by `lc_embedding` when given (rounds >= 1
    pass the previous round's transferred table). The trained LC model
    produces the correction weights the CVR model trains against.
    """
    cvr_init, lc_init = _init_models(config, schema, round_idx)
    if lc_embedding is not None:
        lc_init = replace(lc_init, embedding=lc_embedding.copy())

    split_rng = np.random.default_rng([config.seed, 10])
    perm = split_rng.permutation(lc_data.n)
    n_holdout = max(1, lc_data.n // 10)
    lc_valid = lc_data.subset(perm[:n_holdout])
    lc_train = lc_data.subset(perm[n_holdout:])
    lc_result = train_model(
        lc_init, lc_train, "bce", config, lc_valid, "bce", seed_salt=(13, round_idx)
    )

    w_train = _infer_weights(lc_result.params, cvr_data, config)
    w_valid = _infer_weights(lc_result.params, cvr_valid, config)
    cvr_result = train_model(
        cvr_init,
        cvr_data.with_weights(w_train),
        "lc",
        config,
        cvr_valid.with_weights(w_valid),
        "lc",
        seed_salt=(14, round_idx),
    )
    return RoundCheckpoint(round=round_idx, lc_result=lc_result, cvr_result=cvr_result)


def _infer_weights(
    lc_params: nnet.ModelParams, data: ModelData, config: ExperimentConfig
) -> np.ndarray:
    """lc_weights over a ModelData split whose targets are v and elapsed is e."""
    return losses.lc_weights_arrays(
        lc_params, data.features, data.targets, data.elapsed, config.w_a, config.w_clip
    )


def alternative_train(
    D: Sequence[ObservedSample],
    D_lc: Sequence[LcSample],
    config: ExperimentConfig,
    schema: FeatureSchema,
    validation: Sequence[ObservedSample],
    strategy: Optional[str] = None,
    threshold: float = 0.5,
) -> AltTrainResult:
    """Run n_alt + 1 alternating rounds and return the final CVR model.

    Round 0 starts the LC model from fresh random embeddings; every later
    round starts it from the previous round's trained CVR embedding table.
    When a relabeling strategy is set, it reshapes the LC training data from
    round 1 on, using the previous round's CVR predictions.
    """
    if not D_lc:
        raise ConfigError("counterfactual labeling produced no LC training data")
    feats, v, e = observed_to_arrays(D, schema)
    cvr_data = ModelData(features=feats, targets=v, elapsed=e)
    vfeats, vv, ve = observed_to_arrays(validation, schema)
    cvr_valid = ModelData(features=vfeats, targets=vv, elapsed=ve)

    rounds: list[RoundCheckpoint] = []
    lc_embedding: Optional[np.ndarray] = None
    prev_cvr: Optional[nnet.ModelParams] = None
    for r in range(config.n_alt + 1):
        lc_samples = D_lc
        if strategy is not None and r >= 1:
            lc_samples = apply_strategy(D_lc, prev_cvr, strategy, threshold, schema)
            if not lc_samples:
                raise ConfigError(f"strategy {strategy!r} dropped every LC sample")
        lc_data = lc_to_data(lc_samples, schema)
        ckpt = run_round(r, config, schema, cvr_data, cvr_valid, lc_data, lc_embedding)
        rounds.append(ckpt)
        prev_cvr = ckpt.cvr_result.params
        transferred = nnet.transfer_embeddings(prev_cvr, ckpt.lc_result.params)
        lc_embedding = transferred.embedding
    return AltTrainResult(cvr_params=rounds[-1].cvr_result.params, rounds=tuple(rounds))


def apply_strategy(
    D_lc: Sequence[LcSample],
    cvr_model: nnet.ModelParams,
    strategy: str,
    threshold: float,
    schema: FeatureSchema,
) -> list[LcSample]:
    """Reshape LC training data using CVR predictions on its w=0 records.

    hard: relabel to 1 above the threshold; soft: use the prediction itself
    as the label; drop: remove records above the threshold. Records already
    labeled 1 are never touched.
    """
    if strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy in ("hard", "drop") and not 0.0 < threshold <= 1.0:
        raise InputError("threshold must lie in (0, 1]")
    neg_idx = [i for i, s in enumerate(D_lc) if s.w == 0.0]
    if not neg_idx:
        return list(D_lc)
    feats = schema.globalize(np.array([D_lc[i].features for i in neg_idx]))
    preds = predict(cvr_model, feats)
    f_of = dict(zip(neg_idx, preds))
    out: list[LcSample] = []
    for i, s in enumerate(D_lc):
        if s.w != 0.0:
            out.append(s)
        elif strategy == "hard":
            out.append(replace(s, w=1.0) if f_of[i] > threshold else s)
        elif strategy == "soft":
            out.append(replace(s, w=float(f_of[i])))
        elif f_of[i] <= threshold:  # drop
            out.append(s)
    return out
