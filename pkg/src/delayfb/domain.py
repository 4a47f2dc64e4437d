"""Core record types for delayed-feedback click logs, plus their file formats.

Timestamps are integer seconds on an epoch local to the simulation; a "day"
is 86400 of them. Feature ids are per-field local ids; `FeatureSchema` owns
the precomputed offsets that map them into the single global id space used
by the embedding table.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

DAY = 86400  # seconds


# ---------------------------------------------------------------------------
# feature schema


@dataclass(frozen=True)
class FeatureSchema:
    """Per-field vocabulary sizes with offsets into one global category space."""

    vocab_sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.vocab_sizes or any(v < 1 for v in self.vocab_sizes):
            raise ConfigError(f"vocab sizes must be positive, got {self.vocab_sizes}")

    @property
    def num_fields(self) -> int:
        return len(self.vocab_sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for v in self.vocab_sizes:
            out.append(acc)
            acc += v
        return tuple(out)

    @property
    def total_categories(self) -> int:
        return sum(self.vocab_sizes)

    def check_features(self, features: Sequence[int]) -> None:
        """Raise InputError unless `features` is one valid per-field id tuple."""
        if len(features) != self.num_fields:
            raise InputError(
                f"expected {self.num_fields} feature fields, got {len(features)}"
            )
        for i, (f, v) in enumerate(zip(features, self.vocab_sizes)):
            if not 0 <= f < v:
                raise InputError(f"feature id {f} out of range [0,{v}) in field {i}")

    def globalize(self, features: np.ndarray) -> np.ndarray:
        """Map an (n, num_fields) matrix of local ids to global ids."""
        feats = np.asarray(features, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] != self.num_fields:
            raise InputError(f"feature matrix must be (n,{self.num_fields})")
        sizes = np.asarray(self.vocab_sizes)
        if (feats < 0).any() or (feats >= sizes[None, :]).any():
            raise InputError("feature id out of vocabulary range")
        return feats + np.asarray(self.offsets, dtype=np.int64)[None, :]


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ClickEvent:
    """One logged click; `cvt` is present only when the click converted in-window."""

    id: int
    features: tuple[int, ...]
    cts: int
    cvt: Optional[int] = None

    def __post_init__(self):
        if self.cvt is not None and self.cvt <= self.cts:
            raise InputError(f"event {self.id}: cvt must be after cts")


@dataclass(frozen=True)
class ObservedSample:
    """A click as seen at collection time T: observed label v, elapsed time e.

    `cvt` is retained only for v=1 samples; an unconverted-so-far sample
    carries no conversion timestamp in this view.
    """

    id: int
    features: tuple[int, ...]
    v: int
    e: int
    cts: int
    cvt: Optional[int] = None


@dataclass(frozen=True)
class OracleLabel:
    """Ground-truth final conversion label (1 iff conversion within the window)."""

    id: int
    c: int


@dataclass(frozen=True)
class LcSample:
    """One artificial label-correction training record.

    `e_cd` is the elapsed time at the counterfactual deadline; `w` starts in
    {0,1} and may become fractional after the soft relabeling strategy.
    """

    id: int
    features: tuple[int, ...]
    e_cd: int
    w: float


@dataclass(frozen=True)
class ExperimentConfig:
    """Training-side knobs; world/simulation knobs live in logsim.SimConfig."""

    w_a: int = 30 * DAY
    tau: int = 7 * DAY
    n_alt: int = 1
    learning_rate: float = 1e-3
    l2_reg: float = 1e-6
    batch_size: int = 1024
    hidden_sizes: tuple[int, ...] = (64, 32)
    embedding_dim: int = 16
    seed: int = 0
    early_stop_patience: int = 2
    w_clip: float = 0.95
    max_epochs: int = 50  # safety cap on top of patience-based stopping

    def __post_init__(self):
        if self.w_a <= 0:
            raise ConfigError("w_a must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.n_alt < 0:
            raise ConfigError("n_alt must be >= 0")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.embedding_dim <= 0:
            raise ConfigError("rates and sizes must be positive")
        if self.l2_reg < 0:
            raise ConfigError("l2_reg must be >= 0")
        if self.max_epochs <= 0 or self.early_stop_patience < 0:
            raise ConfigError("epoch budget must be positive, patience >= 0")
        if not any(self.hidden_sizes) or any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be positive")
        if not 0.5 <= self.w_clip < 1.0:
            raise ConfigError("w_clip must lie in [0.5, 1)")

    @staticmethod
    def from_mapping(cfg: Mapping[str, str]) -> "ExperimentConfig":
        return ExperimentConfig(
            w_a=int(require_key(cfg, "w_a")),
            tau=int(require_key(cfg, "tau")),
            n_alt=int(require_key(cfg, "n_alt")),
            learning_rate=float(require_key(cfg, "learning_rate")),
            l2_reg=float(require_key(cfg, "l2_reg")),
            batch_size=int(require_key(cfg, "batch_size")),
            hidden_sizes=tuple(
                int(h) for h in require_key(cfg, "hidden_sizes").split(",") if h
            ),
            embedding_dim=int(require_key(cfg, "embedding_dim")),
            seed=int(require_key(cfg, "seed")),
            early_stop_patience=int(require_key(cfg, "early_stop_patience")),
            w_clip=float(require_key(cfg, "w_clip")),
            max_epochs=int(cfg.get("max_epochs", "50")),
        )


# ---------------------------------------------------------------------------
# dataset validation


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[tuple[int, str], ...] = ()


def validate_dataset(
    samples: Sequence[ObservedSample],
    T: int,
    w_a: Optional[int] = None,
) -> ValidationReport:
    """Check ObservedSample invariants against the collection timestamp T.

    Pure reporting: returns every (sample id, violated rule) pair instead of
    raising. The attribution-window rule is only checked when `w_a` is given.
    """
    bad: list[tuple[int, str]] = []
    for s in samples:
        if s.e != T - s.cts:
            bad.append((s.id, "e = T - cts"))
        if s.e <= 0:
            bad.append((s.id, "e > 0"))
        if s.v not in (0, 1):
            bad.append((s.id, "v in {0,1}"))
        if s.v == 1:
            if s.cvt is None:
                bad.append((s.id, "v=1 requires cvt"))
            else:
                if s.cvt > T:
                    bad.append((s.id, "v=1 requires cvt <= T"))
                if s.cvt <= s.cts:
                    bad.append((s.id, "cvt > cts"))
                if w_a is not None and s.cvt - s.cts >= w_a:
                    bad.append((s.id, "v=1 requires cvt - cts < w_a"))
        elif s.cvt is not None:
            bad.append((s.id, "v=0 implies cvt absent"))
    return ValidationReport(ok=not bad, violations=tuple(bad))


# ---------------------------------------------------------------------------
# CSV formats
#
# click log:     id,f0,...,f{k-1},cts,cvt      (cvt empty when absent)
# oracle labels: id,c
# (the LC-data CSV writer lives in snapshot.py next to its producer)


def write_click_log(path: str | Path, events: Sequence[ClickEvent], num_fields: int) -> None:
    header = ["id"] + [f"f{i}" for i in range(num_fields)] + ["cts", "cvt"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for ev in events:
            if len(ev.features) != num_fields:
                raise InputError(f"event {ev.id} has {len(ev.features)} fields, want {num_fields}")
            w.writerow(
                [ev.id, *ev.features, ev.cts, "" if ev.cvt is None else ev.cvt]
            )


def read_click_log(path: str | Path) -> list[ClickEvent]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header or header[0] != "id" or header[-2:] != ["cts", "cvt"]:
            raise InputError(f"{path}: not a click-log CSV")
        k = len(header) - 3
        out = []
        for row in rows:
            out.append(
                ClickEvent(
                    id=int(row[0]),
                    features=tuple(int(x) for x in row[1 : 1 + k]),
                    cts=int(row[1 + k]),
                    cvt=None if row[2 + k] == "" else int(row[2 + k]),
                )
            )
    return out


def write_oracle_labels(path: str | Path, labels: Sequence[OracleLabel]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "c"])
        for lab in labels:
            w.writerow([lab.id, lab.c])


def read_oracle_labels(path: str | Path) -> list[OracleLabel]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        if next(rows, None) != ["id", "c"]:
            raise InputError(f"{path}: not an oracle-label CSV")
        return [OracleLabel(id=int(r[0]), c=int(r[1])) for r in rows]


# ---------------------------------------------------------------------------
# flat key=value config files


def load_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value file; '#' starts a comment, blanks are skipped."""
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def dump_config(path: str | Path, cfg: Mapping[str, str]) -> None:
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def require_key(cfg: Mapping[str, str], key: str) -> str:
    if key not in cfg:
        raise ConfigError(f"missing config key: {key}")
    return cfg[key]


def config_hash(cfg: Mapping[str, str]) -> str:
    """Stable short digest of a config mapping, embedded in every artifact."""
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
