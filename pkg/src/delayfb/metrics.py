"""Ranking/accuracy metrics and the delay-stratified evaluation protocols."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata, ttest_ind

from . import losses, nnet
from .domain import FeatureSchema, ObservedSample, OracleLabel
from .errors import DataError, InputError, MetricUndefinedError


def _check_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.size == 0 or y.shape != s.shape:
        raise InputError("scores and labels must be matching nonempty vectors")
    if not np.isfinite(s).all():
        raise InputError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise InputError("labels must be binary")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count half).

    Computed by rank-sum with average ranks, which equals exhaustive pair
    counting exactly.
    """
    s, y = _check_scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    num = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(num / (n_pos * n_neg))


def prauc(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve (average precision).

    Ties are grouped at distinct thresholds, so the value does not depend on
    any arbitrary within-tie ordering.
    """
    s, y = _check_scored(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("PRAUC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    ss = s[order]
    ll = y[order].astype(np.float64)
    ends = np.append(np.flatnonzero(np.diff(ss) != 0), ss.size - 1)
    tp = np.cumsum(ll)[ends]
    fp = (ends + 1.0) - tp
    prev_tp = np.concatenate(([0.0], tp[:-1]))
    terms = ((tp - prev_tp) / n_pos) * (tp / (tp + fp))
    return float(np.sum(terms))


def logloss(scores, labels) -> float:
    """Mean cross-entropy of the scores against binary labels."""
    return losses.oracle_loss(scores, labels)


def relative_improvement(m_f, m_vanilla, m_oracle) -> float:
    """Fraction of the Oracle-over-Vanilla gap recovered by the method.

    The same quotient works for higher-better and lower-better metrics; both
    endpoints map to 0 (Vanilla) and 1 (Oracle).
    """
    denom = m_oracle - m_vanilla
    if denom == 0:
        raise MetricUndefinedError("relative improvement undefined: oracle equals vanilla")
    return (m_f - m_vanilla) / denom


def seed_ttest_pvalue(a, b) -> float:
    """Two-sample t-test p-value between two per-seed metric samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InputError("t-test needs at least two runs per sample")
    return float(ttest_ind(a, b).pvalue)


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    prauc: float
    ll: float
    ri_auc: Optional[float] = None
    ri_prauc: Optional[float] = None
    ri_ll: Optional[float] = None
    per_group: tuple["MetricsReport", ...] = ()

    def to_dict(self) -> dict:
        doc = {
            "auc": self.auc,
            "prauc": self.prauc,
            "ll": self.ll,
            "ri_auc": self.ri_auc,
            "ri_prauc": self.ri_prauc,
            "ri_ll": self.ri_ll,
        }
        if self.per_group:
            doc["per_group"] = [g.to_dict() for g in self.per_group]
        return doc


def _score_report(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    return MetricsReport(
        auc=auc(scores, labels), prauc=prauc(scores, labels), ll=logloss(scores, labels)
    )


def _delay_groups(order: np.ndarray, k: int) -> list[np.ndarray]:
    # equal-size groups by ascending delay; the last absorbs the remainder
    base = order.size // k
    bounds = [i * base for i in range(k)] + [order.size]
    return [order[bounds[i] : bounds[i + 1]] for i in range(k)]


def delay_stratified_eval(scores, labels, delays, k: int = 5) -> list[MetricsReport]:
    """Per-delay-group test metrics.

    Positives are sorted by their true conversion delay and split into k
    groups; each group is evaluated against all test negatives, with every
    positive duplicated k times so the evaluation set keeps the original
    conversion rate (the log loss is sensitive to it).
    """
    s, y = _check_scored(scores, labels)
    d = np.asarray(delays, dtype=np.float64)
    if d.shape != s.shape:
        raise InputError("delays must match scores in length")
    if k < 1:
        raise InputError("k must be >= 1")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size < k:
        raise InputError(f"need at least {k} positives, got {pos.size}")
    order = pos[np.lexsort((pos, d[pos]))]
    reports = []
    for group in _delay_groups(order, k):
        sc = np.concatenate([np.repeat(s[group], k), s[neg]])
        lb = np.concatenate([np.ones(group.size * k, dtype=np.int64), np.zeros(neg.size, dtype=np.int64)])
        reports.append(_score_report(sc, lb))
    return reports


def lc_delay_eval(
    lc_model: nnet.ModelParams,
    samples: Sequence[ObservedSample],
    oracle: Mapping[int, int] | Sequence[OracleLabel],
    delays: Mapping[int, int],
    schema: FeatureSchema,
    k: int = 5,
) -> list[MetricsReport]:
    """How well the LC model separates false negatives from true negatives,
    per delay group.

    False negatives (observed 0, truly 1) in the training data are split
    into k groups by their true delay; each group plus all true negatives is
    scored with the LC model at the actual-deadline elapsed times.
    """
    if not isinstance(oracle, Mapping):
        oracle = {lab.id: lab.c for lab in oracle}
    v0 = [smp for smp in samples if smp.v == 0]
    for smp in v0:
        if smp.id not in oracle:
            raise DataError(f"sample {smp.id} has no oracle label")
    c = np.array([oracle[smp.id] for smp in v0], dtype=np.int64)
    fn = np.flatnonzero(c == 1)
    tn = np.flatnonzero(c == 0)
    if fn.size == 0:
        raise InputError("no false negatives in the training data")
    if fn.size < k:
        raise InputError(f"need at least {k} false negatives, got {fn.size}")
    for i in fn:
        if v0[i].id not in delays:
            raise DataError(f"false negative {v0[i].id} has no recorded delay")
    feats = schema.globalize(np.array([smp.features for smp in v0]))
    e = np.array([smp.e for smp in v0], dtype=np.float64)
    g = nnet.forward(lc_model, feats, e)
    fn_delay = np.array([delays[v0[i].id] for i in fn], dtype=np.float64)
    order = fn[np.lexsort((fn, fn_delay))]
    reports = []
    for group in _delay_groups(order, k):
        sc = np.concatenate([g[group], g[tn]])
        lb = np.concatenate([np.ones(group.size, dtype=np.int64), np.zeros(tn.size, dtype=np.int64)])
        reports.append(_score_report(sc, lb))
    return reports
