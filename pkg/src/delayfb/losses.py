"""The CVR training objectives and label-correction weight inference.

All objectives are negated (minimized) cross-entropies sharing one clamped
implementation, so the degeneracy identities hold bitwise: the corrected
loss with all-zero weights IS the observed-label loss, and with weights
equal to the true labels on negatives it IS the true-label loss.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import nnet
from .domain import FeatureSchema, ObservedSample
from .errors import InputError


def _check_pair(predictions, labels, binary: bool) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InputError("predictions must be a nonempty vector")
    if y.shape != p.shape:
        raise InputError(f"length mismatch: {p.shape} predictions vs {y.shape} labels")
    if not np.isfinite(p).all() or (p <= 0).any() or (p >= 1).any():
        raise InputError("predictions must lie strictly inside (0,1)")
    if binary:
        if not np.isin(y, (0.0, 1.0)).all():
            raise InputError("labels must be binary")
    elif (y < 0).any() or (y > 1).any():
        raise InputError("targets must lie in [0,1]")
    return p, y


def oracle_loss(predictions, c) -> float:
    """Mean cross-entropy against the true conversion labels."""
    p, y = _check_pair(predictions, c, binary=True)
    return nnet.mean_cross_entropy(p, y)


def vanilla_loss(predictions, v) -> float:
    """Mean cross-entropy against the observed-at-collection labels."""
    p, y = _check_pair(predictions, v, binary=True)
    return nnet.mean_cross_entropy(p, y)


def lc_loss(predictions, v, w) -> float:
    """Label-corrected loss: observed negatives count as positives with weight w.

    Per sample: -[v log f + w(1-v) log f + (1-w)(1-v) log(1-f)]. Weights are
    conventionally 0 where v=1 and are ignored there either way.
    """
    p, y = _check_pair(predictions, v, binary=True)
    wts = np.asarray(w, dtype=np.float64)
    if wts.shape != p.shape:
        raise InputError("weights must match predictions in length")
    if (wts < 0).any() or (wts > 1).any():
        raise InputError("correction weights must lie in [0,1]")
    return nnet.mean_cross_entropy(p, y + wts * (1.0 - y))


def bce_loss(predictions, w_labels) -> float:
    """Binary cross-entropy with (possibly fractional) targets in [0,1]."""
    p, y = _check_pair(predictions, w_labels, binary=False)
    return nnet.mean_cross_entropy(p, y)


def lc_weights(
    lc_model: nnet.ModelParams,
    samples: Sequence[ObservedSample],
    schema: FeatureSchema,
    w_a: int,
    w_clip: float,
) -> np.ndarray:
    """Correction weight for every sample, in input order.

    Observed positives need no correction (w=0); observed negatives get the
    LC model's probability at their actual elapsed time, clipped to w_clip.
    Samples past the attribution window keep w=0: their label is final.
    """
    if not samples:
        return np.zeros(0)
    feats = schema.globalize(np.array([s.features for s in samples]))
    e = np.array([s.e for s in samples], dtype=np.float64)
    v = np.array([s.v for s in samples], dtype=np.float64)
    return lc_weights_arrays(lc_model, feats, v, e, w_a, w_clip)


def lc_weights_arrays(
    lc_model: nnet.ModelParams,
    features_global: np.ndarray,
    v: np.ndarray,
    e: np.ndarray,
    w_a: int,
    w_clip: float,
) -> np.ndarray:
    """Array-level lc_weights for pre-globalized feature matrices."""
    if not lc_model.has_elapsed_input:
        raise InputError("lc_weights needs a model with an elapsed-time input")
    out = np.empty(len(features_global))
    for lo in range(0, len(features_global), 32_768):
        hi = min(lo + 32_768, len(features_global))
        out[lo:hi] = nnet.forward(lc_model, features_global[lo:hi], elapsed=e[lo:hi])
    w = np.minimum(out, w_clip)
    w[(np.asarray(v) == 1.0) | (np.asarray(e) >= w_a)] = 0.0
    return w
