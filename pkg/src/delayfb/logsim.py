"""Synthetic delayed-feedback click logs with fully known ground truth.

Every click belongs to one of a fixed set of contexts (distinct feature
tuples). A context carries its own conversion probability and exponential
delay rate, so every oracle quantity (true CVR, delay CDF, ideal correction
weights) is computable in closed form for tests. A two-component exponential
mixture and a linear popularity drift over the span are available for the
scenarios where the single-exponential assumption has to fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.special import ndtr

from .domain import DAY, ClickEvent, FeatureSchema, OracleLabel, require_key
from .errors import ConfigError

_NOISE_VOCAB = 8  # vocabulary of the non-identifying feature fields
_CHUNK = 20_000


@dataclass(frozen=True)
class Context:
    """One atomic context: feature tuple, base CVR, exponential delay rate(s)."""

    features: tuple[int, ...]
    base_cvr: float
    delay_rate: float  # per second
    delay_rate2: Optional[float] = None  # second mixture component
    mix: float = 1.0  # probability of drawing from delay_rate


@dataclass(frozen=True)
class GroundTruthWorld:
    contexts: tuple[Context, ...]
    context_weights: tuple[float, ...]
    w_a: int
    schema: FeatureSchema
    drift_weights: Optional[tuple[float, ...]] = None  # weights at end of span

    def __post_init__(self):
        if abs(sum(self.context_weights) - 1.0) > 1e-9:
            raise ConfigError("context_weights must sum to 1")
        if self.drift_weights is not None and abs(sum(self.drift_weights) - 1.0) > 1e-9:
            raise ConfigError("drift_weights must sum to 1")
        for c in self.contexts:
            if not 0.0 < c.base_cvr < 1.0:
                raise ConfigError(f"base_cvr must be in (0,1), got {c.base_cvr}")
            if c.delay_rate <= 0 or (c.delay_rate2 is not None and c.delay_rate2 <= 0):
                raise ConfigError("delay rates must be positive")


def delay_cdf(ctx: Context, t: float) -> float:
    """P(delay < t) for a converting click of this context."""
    if t <= 0:
        return 0.0
    f1 = 1.0 - math.exp(-ctx.delay_rate * t)
    if ctx.delay_rate2 is None:
        return f1
    f2 = 1.0 - math.exp(-ctx.delay_rate2 * t)
    return ctx.mix * f1 + (1.0 - ctx.mix) * f2


def true_conversion_prob(ctx: Context, w_a: int) -> float:
    """P(c=1 | x): base CVR times the in-window delay mass."""
    return ctx.base_cvr * delay_cdf(ctx, w_a)


def build_world(
    num_contexts: int,
    cvr_range: tuple[float, float],
    delay_range: tuple[float, float],
    seed: int,
    *,
    num_fields: int = 4,
    w_a: int = 30 * DAY,
    delay_cvr_corr: float = 0.0,
    drift: float = 0.0,
    mixture_spread: float = 1.0,
    delay_profile: str = "uniform",
    feature_mode: str = "id",
) -> GroundTruthWorld:
    """Deterministically sample a ground-truth world.

    `delay_range` is a (lambda_lo, lambda_hi) interval of per-second rates;
    contexts draw their mean delay uniformly over the matching interval of
    means ("uniform" profile) or from its endpoints ("bimodal": a fast and a
    slow population), optionally Gauss-copula-correlated with base CVR by
    `delay_cvr_corr` (positive = high-CVR contexts convert slowly). `drift`
    in [0,1) tilts the popularity of the two halves of the context list in
    opposite directions at the start vs. the end of the span.

    `feature_mode` picks how a context shows up in the features: "id" puts a
    unique id in field 0 (noise in the rest), "combo" identifies a context
    only through its combination of per-field ids, so a model has to learn
    composed representations.
    """
    if num_contexts < 1:
        raise ConfigError("num_contexts must be positive")
    lo_c, hi_c = cvr_range
    if not (0.0 < lo_c <= hi_c < 1.0):
        raise ConfigError(f"cvr_range must lie inside (0,1), got {cvr_range}")
    lo_r, hi_r = delay_range
    if not (0.0 < lo_r <= hi_r):
        raise ConfigError(f"delay_range must be positive, got {delay_range}")
    if not -1.0 <= delay_cvr_corr <= 1.0:
        raise ConfigError("delay_cvr_corr must be in [-1,1]")
    if not 0.0 <= drift < 1.0:
        raise ConfigError("drift must be in [0,1)")
    if mixture_spread < 1.0:
        raise ConfigError("mixture_spread must be >= 1")
    if delay_profile not in ("uniform", "bimodal"):
        raise ConfigError(f"unknown delay_profile {delay_profile!r}")
    if feature_mode not in ("id", "combo"):
        raise ConfigError(f"unknown feature_mode {feature_mode!r}")

    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(num_contexts)
    z2 = rng.standard_normal(num_contexts)
    rho = delay_cvr_corr
    u_cvr = ndtr(z1)
    u_del = ndtr(rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    cvrs = lo_c + u_cvr * (hi_c - lo_c)
    mean_lo, mean_hi = 1.0 / hi_r, 1.0 / lo_r
    if delay_profile == "bimodal":
        means = np.where(u_del < 0.5, mean_lo, mean_hi)
    else:
        means = mean_lo + u_del * (mean_hi - mean_lo)

    if feature_mode == "id":
        noise = rng.integers(0, _NOISE_VOCAB, size=(num_contexts, max(num_fields - 1, 0)))
        tuples = [(i, *noise[i]) for i in range(num_contexts)]
        vocab_sizes = (num_contexts, *([_NOISE_VOCAB] * max(num_fields - 1, 0)))
    else:
        # distinct tuples over a shared per-field vocabulary, >= 2x headroom
        vocab = max(2, math.ceil((2.0 * num_contexts) ** (1.0 / num_fields)))
        seen: set[tuple[int, ...]] = set()
        tuples = []
        while len(tuples) < num_contexts:
            cand = tuple(int(x) for x in rng.integers(0, vocab, num_fields))
            if cand not in seen:
                seen.add(cand)
                tuples.append(cand)
        vocab_sizes = tuple([vocab] * num_fields)

    contexts = []
    for i in range(num_contexts):
        rate = 1.0 / means[i]
        if mixture_spread > 1.0:
            ctx = Context(
                features=tuples[i],
                base_cvr=float(cvrs[i]),
                delay_rate=rate * mixture_spread,
                delay_rate2=rate / mixture_spread,
                mix=0.5,
            )
        else:
            ctx = Context(features=tuples[i], base_cvr=float(cvrs[i]), delay_rate=rate)
        contexts.append(ctx)

    base = rng.dirichlet(np.full(num_contexts, 3.0))
    if drift > 0.0 and num_contexts > 1:
        tilt = np.where(np.arange(num_contexts) < num_contexts / 2, 1.0, -1.0)
        start = base * (1.0 + drift * tilt)
        end = base * (1.0 - drift * tilt)
        start /= start.sum()
        end /= end.sum()
        drift_weights = tuple(float(x) for x in end)
        weights = tuple(float(x) for x in start)
    else:
        weights = tuple(float(x) for x in base)
        drift_weights = None

    schema = FeatureSchema(vocab_sizes=vocab_sizes)
    return GroundTruthWorld(
        contexts=tuple(contexts),
        context_weights=weights,
        w_a=w_a,
        schema=schema,
        drift_weights=drift_weights,
    )


def _draw_contexts(world: GroundTruthWorld, cts: np.ndarray, span: int, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF context draw; weights interpolate linearly when drifting."""
    k = len(world.contexts)
    start = np.asarray(world.context_weights)
    if world.drift_weights is None:
        cum = np.cumsum(start)
        idx = np.searchsorted(cum, u, side="right")
        return np.minimum(idx, k - 1)
    end = np.asarray(world.drift_weights)
    out = np.empty(len(cts), dtype=np.int64)
    for lo in range(0, len(cts), _CHUNK):
        hi = min(lo + _CHUNK, len(cts))
        frac = cts[lo:hi].astype(np.float64) / span
        w_t = start[None, :] + (end - start)[None, :] * frac[:, None]
        cum = np.cumsum(w_t, axis=1)
        out[lo:hi] = np.minimum((cum < u[lo:hi, None]).sum(axis=1), k - 1)
    return out


def simulate_log(
    world: GroundTruthWorld, n_clicks: int, span: int, seed: int
) -> tuple[list[ClickEvent], list[OracleLabel]]:
    """Simulate `n_clicks` uniform-in-time clicks over [0, span) seconds.

    A click converts with its context's base CVR; the conversion delay is
    exponential (or the context's two-component mixture), rounded to whole
    seconds. `cvt` is emitted only for delays inside the attribution window,
    and the oracle label is 1 exactly for those events.
    """
    if span <= 0:
        raise ConfigError("span must be positive")
    if n_clicks < 0:
        raise ConfigError("n_clicks must be >= 0")
    if n_clicks == 0:
        return [], []

    rng = np.random.default_rng(seed)
    cts = rng.integers(0, span, size=n_clicks)
    u_ctx = rng.random(n_clicks)
    ctx = _draw_contexts(world, cts, span, u_ctx)

    cvr = np.array([c.base_cvr for c in world.contexts])
    rate1 = np.array([c.delay_rate for c in world.contexts])
    rate2 = np.array(
        [c.delay_rate if c.delay_rate2 is None else c.delay_rate2 for c in world.contexts]
    )
    mix = np.array([c.mix for c in world.contexts])

    converts = rng.random(n_clicks) < cvr[ctx]
    comp1 = rng.random(n_clicks) < mix[ctx]
    rate = np.where(comp1, rate1[ctx], rate2[ctx])
    delay = np.maximum(1, np.rint(rng.exponential(1.0, n_clicks) / rate)).astype(np.int64)

    valid = converts & (delay < world.w_a)
    order = np.lexsort((np.arange(n_clicks), cts))

    feats = np.array([c.features for c in world.contexts], dtype=np.int64)[ctx][order]
    cts_o = cts[order]
    valid_o = valid[order]
    cvt_o = (cts + delay)[order]

    events = [
        ClickEvent(
            id=i,
            features=tuple(int(f) for f in feats[i]),
            cts=int(cts_o[i]),
            cvt=int(cvt_o[i]) if valid_o[i] else None,
        )
        for i in range(n_clicks)
    ]
    labels = [OracleLabel(id=i, c=int(valid_o[i])) for i in range(n_clicks)]
    return events, labels


# ---------------------------------------------------------------------------
# simulation config block (sim_* keys of the flat config file)


@dataclass(frozen=True)
class SimConfig:
    num_contexts: int = 96
    num_fields: int = 4
    n_clicks: int = 200_000
    train_days: int = 21
    valid_days: int = 1
    test_days: int = 1
    cvr_lo: float = 0.03
    cvr_hi: float = 0.45
    delay_mean_days_lo: float = 1.5
    delay_mean_days_hi: float = 10.0
    delay_cvr_corr: float = 0.6
    drift: float = 0.0
    mixture_spread: float = 1.0
    delay_profile: str = "uniform"
    feature_mode: str = "id"

    def __post_init__(self):
        if min(self.train_days, self.valid_days, self.test_days) < 1:
            raise ConfigError("train/valid/test days must be >= 1")
        if self.delay_mean_days_lo <= 0 or self.delay_mean_days_hi < self.delay_mean_days_lo:
            raise ConfigError("delay mean interval must be positive and ordered")

    @property
    def span_days(self) -> int:
        return self.train_days + self.valid_days + self.test_days

    @property
    def span(self) -> int:
        return self.span_days * DAY

    @property
    def delay_rate_range(self) -> tuple[float, float]:
        return (1.0 / (self.delay_mean_days_hi * DAY), 1.0 / (self.delay_mean_days_lo * DAY))

    @staticmethod
    def from_mapping(cfg: Mapping[str, str]) -> "SimConfig":
        return SimConfig(
            num_contexts=int(require_key(cfg, "sim_contexts")),
            num_fields=int(require_key(cfg, "sim_fields")),
            n_clicks=int(require_key(cfg, "sim_clicks")),
            train_days=int(require_key(cfg, "sim_train_days")),
            valid_days=int(require_key(cfg, "sim_valid_days")),
            test_days=int(require_key(cfg, "sim_test_days")),
            cvr_lo=float(require_key(cfg, "sim_cvr_lo")),
            cvr_hi=float(require_key(cfg, "sim_cvr_hi")),
            delay_mean_days_lo=float(require_key(cfg, "sim_delay_mean_days_lo")),
            delay_mean_days_hi=float(require_key(cfg, "sim_delay_mean_days_hi")),
            delay_cvr_corr=float(cfg.get("sim_delay_cvr_corr", "0.0")),
            drift=float(cfg.get("sim_drift", "0.0")),
            mixture_spread=float(cfg.get("sim_mixture_spread", "1.0")),
            delay_profile=cfg.get("sim_delay_profile", "uniform"),
            feature_mode=cfg.get("sim_feature_mode", "id"),
        )

    def build(self, seed: int, w_a: int) -> GroundTruthWorld:
        return build_world(
            self.num_contexts,
            (self.cvr_lo, self.cvr_hi),
            self.delay_rate_range,
            seed=seed,
            num_fields=self.num_fields,
            w_a=w_a,
            delay_cvr_corr=self.delay_cvr_corr,
            drift=self.drift,
            mixture_spread=self.mixture_spread,
            delay_profile=self.delay_profile,
            feature_mode=self.feature_mode,
        )
