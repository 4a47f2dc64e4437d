"""Materialize observed datasets at a collection timestamp and build LC data.

The counterfactual deadline (CD) is `T - tau`: samples clicked before the CD
that were not yet converted at the CD become label-correction training
records, labeled 1 exactly when their conversion landed between the CD and
the actual deadline T.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

from .domain import ClickEvent, LcSample, ObservedSample, OracleLabel
from .errors import ConfigError, DataError


def observe(log: Sequence[ClickEvent], T: int, w_a: int) -> list[ObservedSample]:
    """Snapshot the click log as it would look when collected at time T.

    Includes exactly the clicks before T. A sample is observed-positive when
    its conversion happened by T and inside the attribution window; the
    conversion timestamp is kept only in that case.
    """
    out = []
    for ev in log:
        if ev.cts >= T:
            continue
        v = int(ev.cvt is not None and ev.cvt <= T and ev.cvt - ev.cts < w_a)
        out.append(
            ObservedSample(
                id=ev.id,
                features=ev.features,
                v=v,
                e=T - ev.cts,
                cts=ev.cts,
                cvt=ev.cvt if v == 1 else None,
            )
        )
    return out


def counterfactual_label(
    D: Sequence[ObservedSample], T: int, tau: int
) -> list[LcSample]:
    """Generate LC training data by pretending collection happened at T - tau.

    A sample enters iff it was clicked before the CD and was not already
    converted at the CD; it is labeled 1 iff its observed conversion landed
    after the CD. The stored elapsed time is the one at the CD (e - tau).
    """
    if not D:
        return []
    max_e = max(s.e for s in D)
    if not 0 < tau < max_e:
        raise ConfigError(f"tau must lie in (0, {max_e}), got {tau}")
    cd = T - tau
    out = []
    for s in D:
        if s.cts >= cd:
            continue
        if s.v != 0 and not (s.cvt is not None and s.cvt > cd):
            continue  # already converted at the CD
        w = 1.0 if (s.cvt is not None and s.cvt > cd) else 0.0
        out.append(LcSample(id=s.id, features=s.features, e_cd=s.e - tau, w=w))
    return out


def labeling_recall(
    D_lc: Sequence[LcSample], oracle: Mapping[int, int] | Sequence[OracleLabel]
) -> float:
    """Fraction of the truly-converting LC records that got labeled w=1.

    Conversions that land after the actual deadline are invisible to the
    counterfactual labeler, so they drag recall below 1. Returns 1.0 when no
    LC record truly converts.
    """
    if not isinstance(oracle, Mapping):
        oracle = {lab.id: lab.c for lab in oracle}
    pos = hit = 0
    for s in D_lc:
        if s.id not in oracle:
            raise DataError(f"LC sample {s.id} has no oracle label")
        if oracle[s.id] == 1:
            pos += 1
            if s.w == 1.0:
                hit += 1
    return hit / pos if pos else 1.0


# ---------------------------------------------------------------------------
# LC-data CSV: id,f0,...,f{k-1},e_cd,w


def write_lc_data(path: str | Path, samples: Sequence[LcSample], num_fields: int) -> None:
    header = ["id"] + [f"f{i}" for i in range(num_fields)] + ["e_cd", "w"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples:
            w.writerow([s.id, *s.features, s.e_cd, repr(s.w)])


def read_lc_data(path: str | Path) -> list[LcSample]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header or header[-2:] != ["e_cd", "w"]:
            raise DataError(f"{path}: not an LC-data CSV")
        k = len(header) - 3
        return [
            LcSample(
                id=int(r[0]),
                features=tuple(int(x) for x in r[1 : 1 + k]),
                e_cd=int(r[1 + k]),
                w=float(r[2 + k]),
            )
            for r in rows
        ]
