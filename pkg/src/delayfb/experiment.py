"""End-to-end experiment protocol on synthetic logs.

The temporal layout mirrors a production retraining cycle at configurable
scale: the first `train_days` of clicks are training data, the next day(s)
validation, the final day(s) test. Both training and validation are observed
at T = end of the validation window (final-conversion labels there are
treated as unknown); test clicks are evaluated against oracle labels.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import metrics, nnet, snapshot, trainer
from .domain import (
    DAY,
    ClickEvent,
    ExperimentConfig,
    FeatureSchema,
    ObservedSample,
    config_hash,
)
from .errors import ConfigError, InputError, PipelineError
from .logsim import GroundTruthWorld, SimConfig, simulate_log
from .trainer import ModelData

MODEL_KINDS = ("vanilla", "oracle", "ulc")
_LOG_SEED_OFFSET = 7919  # keeps log streams disjoint from the world stream


@dataclass(frozen=True)
class PreparedData:
    """Everything one seed's run needs, already split and materialized."""

    seed: int
    schema: FeatureSchema
    T: int
    train: tuple[ObservedSample, ...]
    valid: tuple[ObservedSample, ...]
    d_lc: tuple
    oracle_map: dict[int, int]
    delays: dict[int, int]  # true click->conversion delay for c=1 events
    recall: float
    test_features: np.ndarray  # global ids
    test_c: np.ndarray
    test_delays: np.ndarray


def split_events(
    events: Sequence[ClickEvent],
    oracle,
    sim: SimConfig,
    cfg: ExperimentConfig,
    schema: FeatureSchema,
    run_seed: Optional[int] = None,
) -> PreparedData:
    """Temporal split + observation of a click log (simulated or imported)."""
    oracle_map = oracle if isinstance(oracle, dict) else {lab.id: lab.c for lab in oracle}
    delays = {ev.id: ev.cvt - ev.cts for ev in events if ev.cvt is not None}

    T = (sim.train_days + sim.valid_days) * DAY
    train_end = sim.train_days * DAY
    observed = snapshot.observe(events, T, cfg.w_a)
    train = tuple(s for s in observed if s.cts < train_end)
    valid = tuple(s for s in observed if s.cts >= train_end)
    d_lc = tuple(snapshot.counterfactual_label(train, T, cfg.tau))
    recall = snapshot.labeling_recall(d_lc, oracle_map)

    test_events = [ev for ev in events if ev.cts >= T]
    if not test_events:
        raise ConfigError("no clicks landed in the test window")
    missing = [ev.id for ev in test_events if ev.id not in oracle_map]
    if missing:
        raise ConfigError(f"{len(missing)} test events lack oracle labels")
    test_features = schema.globalize(np.array([ev.features for ev in test_events]))
    test_c = np.array([oracle_map[ev.id] for ev in test_events], dtype=np.int64)
    test_delays = np.array(
        [delays.get(ev.id, -1) for ev in test_events], dtype=np.float64
    )
    return PreparedData(
        seed=run_seed if run_seed is not None else cfg.seed,
        schema=schema,
        T=T,
        train=train,
        valid=valid,
        d_lc=d_lc,
        oracle_map=oracle_map,
        delays=delays,
        recall=recall,
        test_features=test_features,
        test_c=test_c,
        test_delays=test_delays,
    )


def prepare_data(
    sim: SimConfig,
    cfg: ExperimentConfig,
    world: GroundTruthWorld,
    run_seed: int,
) -> PreparedData:
    events, oracle = simulate_log(
        world, sim.n_clicks, sim.span, seed=run_seed + _LOG_SEED_OFFSET
    )
    return split_events(events, oracle, sim, cfg, world.schema, run_seed)


def _baseline_data(
    data: PreparedData, kind: str
) -> tuple[ModelData, ModelData]:
    """Training/validation splits for the vanilla or oracle model."""
    feats, v, e = trainer.observed_to_arrays(data.train, data.schema)
    vfeats, vv, ve = trainer.observed_to_arrays(data.valid, data.schema)
    if kind == "oracle":
        y = np.array([data.oracle_map[s.id] for s in data.train], dtype=np.float64)
        vy = np.array([data.oracle_map[s.id] for s in data.valid], dtype=np.float64)
    else:
        y, vy = v, vv
    return (
        ModelData(features=feats, targets=y, elapsed=e),
        ModelData(features=vfeats, targets=vy, elapsed=ve),
    )


@dataclass(frozen=True)
class TrainedKind:
    params: nnet.ModelParams
    alt: Optional[trainer.AltTrainResult] = None  # ULC round artifacts
    result: Optional[trainer.TrainResult] = None  # vanilla/oracle trace


def train_kind(
    data: PreparedData,
    cfg: ExperimentConfig,
    kind: str,
    strategy: Optional[str] = None,
    strategy_threshold: float = 0.5,
) -> TrainedKind:
    """Train one model kind on a prepared split."""
    if kind == "ulc":
        alt = trainer.alternative_train(
            data.train,
            data.d_lc,
            cfg,
            data.schema,
            data.valid,
            strategy=strategy,
            threshold=strategy_threshold,
        )
        return TrainedKind(params=alt.cvr_params, alt=alt)
    if kind not in ("vanilla", "oracle"):
        raise ConfigError(f"unknown model kind {kind!r}")
    train_split, valid_split = _baseline_data(data, kind)
    loss_kind = "oracle" if kind == "oracle" else "vanilla"
    salt = 15 if kind == "vanilla" else 16
    init = nnet.init_params(
        data.schema.total_categories,
        data.schema.num_fields,
        cfg.embedding_dim,
        cfg.hidden_sizes,
        has_elapsed_input=False,
        w_a=cfg.w_a,
        rng=np.random.default_rng([cfg.seed, salt]),
    )
    result = trainer.train_model(
        init, train_split, loss_kind, cfg, valid_split, loss_kind, seed_salt=(salt + 2,)
    )
    return TrainedKind(params=result.params, result=result)


def _test_report(data: PreparedData, scores: np.ndarray) -> metrics.MetricsReport:
    return metrics.MetricsReport(
        auc=metrics.auc(scores, data.test_c),
        prauc=metrics.prauc(scores, data.test_c),
        ll=metrics.logloss(scores, data.test_c),
    )


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    recall: float
    reports: dict[str, metrics.MetricsReport]
    stratified: dict[str, list[metrics.MetricsReport]]
    lc_delay: Optional[list[metrics.MetricsReport]]


def run_seed(
    sim: SimConfig,
    cfg: ExperimentConfig,
    world: GroundTruthWorld,
    run_seed: int,
    models: Sequence[str],
    strategy: Optional[str] = None,
    strategy_threshold: float = 0.5,
    stratified_k: int = 5,
) -> SeedOutcome:
    """One full repetition: simulate, train every requested kind, evaluate."""
    run_cfg = replace(cfg, seed=run_seed)
    data = prepare_data(sim, run_cfg, world, run_seed)
    reports: dict[str, metrics.MetricsReport] = {}
    stratified: dict[str, list[metrics.MetricsReport]] = {}
    lc_delay = None
    n_test_pos = int(data.test_c.sum())
    for kind in models:
        trained = train_kind(data, run_cfg, kind, strategy, strategy_threshold)
        scores = trainer.predict(trained.params, data.test_features)
        reports[kind] = _test_report(data, scores)
        if stratified_k and n_test_pos >= stratified_k:
            stratified[kind] = metrics.delay_stratified_eval(
                scores, data.test_c, data.test_delays, k=stratified_k
            )
        if kind == "ulc" and trained.alt is not None and stratified_k:
            try:
                lc_delay = metrics.lc_delay_eval(
                    trained.alt.lc_params,
                    data.train,
                    data.oracle_map,
                    data.delays,
                    data.schema,
                    k=stratified_k,
                )
            except InputError:
                lc_delay = None  # too few false negatives at smoke scale
    return SeedOutcome(
        seed=run_seed,
        recall=data.recall,
        reports=reports,
        stratified=stratified,
        lc_delay=lc_delay,
    )


# ---------------------------------------------------------------------------
# aggregation and report assembly


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _group_means(per_seed: list[list[metrics.MetricsReport]]) -> dict:
    k = len(per_seed[0])
    out = {}
    for name in ("auc", "prauc", "ll"):
        out[name] = [
            float(np.mean([getattr(run[g], name) for run in per_seed])) for g in range(k)
        ]
    return out


def assemble_report(
    cfg_map: Mapping[str, str],
    seeds: Sequence[int],
    outcomes: Sequence[SeedOutcome],
    models: Sequence[str],
) -> dict:
    report: dict = {
        "config_hash": config_hash(cfg_map),
        "seeds": list(seeds),
        "tau_days": float(int(cfg_map["tau"]) / DAY),
        "models": {},
        "recall": {},
        "ri": {},
    }
    per_seed_recall = [o.recall for o in outcomes]
    mean_r, std_r = _mean_std(per_seed_recall)
    report["recall"] = {"per_seed": per_seed_recall, "mean": mean_r, "std": std_r}

    for kind in models:
        block: dict = {"per_seed": {}, "mean": {}, "std": {}}
        for name in ("auc", "prauc", "ll"):
            vals = [getattr(o.reports[kind], name) for o in outcomes]
            block["per_seed"][name] = vals
            block["mean"][name], block["std"][name] = _mean_std(vals)
        report["models"][kind] = block

    if "vanilla" in models and "oracle" in models:
        for kind in models:
            report["ri"][kind] = {
                name: metrics.relative_improvement(
                    report["models"][kind]["mean"][name],
                    report["models"]["vanilla"]["mean"][name],
                    report["models"]["oracle"]["mean"][name],
                )
                for name in ("auc", "prauc", "ll")
            }
    if "vanilla" in models and len(seeds) >= 2:
        report["p_vs_vanilla"] = {
            kind: {
                name: metrics.seed_ttest_pvalue(
                    report["models"][kind]["per_seed"][name],
                    report["models"]["vanilla"]["per_seed"][name],
                )
                for name in ("auc", "prauc", "ll")
            }
            for kind in models
            if kind != "vanilla"
        }

    strat_kinds = [k for k in models if all(k in o.stratified for o in outcomes)]
    if strat_kinds:
        report["stratified"] = {
            kind: _group_means([o.stratified[kind] for o in outcomes])
            for kind in strat_kinds
        }
    lc_runs = [o.lc_delay for o in outcomes if o.lc_delay is not None]
    if lc_runs:
        report["lc_delay"] = _group_means(lc_runs)
    return report


def write_report(report: dict, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_text(json.dumps(report, sort_keys=True, separators=(",", ":")))
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed", "metric", "value"])
        for kind in sorted(report.get("models", {})):
            block = report["models"][kind]
            for name in ("auc", "prauc", "ll"):
                for seed, val in zip(report["seeds"], block["per_seed"][name]):
                    w.writerow([kind, seed, name, repr(val)])
                w.writerow([kind, "mean", name, repr(block["mean"][name])])
                w.writerow([kind, "std", name, repr(block["std"][name])])
        for kind in sorted(report.get("ri", {})):
            for name in ("auc", "prauc", "ll"):
                w.writerow([kind, "mean", f"ri_{name}", repr(report["ri"][kind][name])])
        rec = report.get("recall")
        if rec:
            for seed, val in zip(report["seeds"], rec["per_seed"]):
                w.writerow(["labeling", seed, "recall", repr(val)])
            w.writerow(["labeling", "mean", "recall", repr(rec["mean"])])
    return json_path, csv_path


def _seed_job(args) -> SeedOutcome:
    """Worker entry for one repetition (module-level so it pickles)."""
    cfg_items, run_seed_val, models, strategy, threshold = args
    cfg_map = dict(cfg_items)
    sim = SimConfig.from_mapping(cfg_map)
    cfg = ExperimentConfig.from_mapping(cfg_map)
    world = sim.build(seed=cfg.seed, w_a=cfg.w_a)
    return run_seed(sim, cfg, world, run_seed_val, models, strategy, threshold)


def run_experiment(
    cfg_map: Mapping[str, str],
    out_dir: Optional[str | Path] = None,
    n_seeds: int = 1,
    base_seed: Optional[int] = None,
    models: Sequence[str] = MODEL_KINDS,
    n_workers: int = 1,
) -> dict:
    """Full protocol over `n_seeds` repetitions; returns (and writes) the report.

    Seeds are independent and may fan out over `n_workers` processes; the
    report is identical either way (assembly follows seed order).
    """
    cfg_map = dict(cfg_map)
    if base_seed is not None:
        cfg_map["seed"] = str(base_seed)
    sim = SimConfig.from_mapping(cfg_map)
    cfg = ExperimentConfig.from_mapping(cfg_map)
    strategy = cfg_map.get("strategy") or None
    threshold = float(cfg_map.get("strategy_threshold", "0.5"))
    for kind in models:
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")

    seeds = [cfg.seed + i for i in range(n_seeds)]
    jobs = [(tuple(cfg_map.items()), s, tuple(models), strategy, threshold) for s in seeds]
    try:
        if n_workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                outcomes = list(pool.map(_seed_job, jobs))
        else:
            outcomes = [_seed_job(job) for job in jobs]
    except ConfigError:
        raise
    except Exception as err:  # noqa: BLE001 - surface the failing stage
        raise PipelineError("seed runs", str(err)) from err
    report = assemble_report(cfg_map, seeds, outcomes, models)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def run_sweep_tau(
    cfg_map: Mapping[str, str],
    tau_days: Sequence[float],
    out_dir: Optional[str | Path] = None,
    n_seeds: int = 1,
    base_seed: Optional[int] = None,
    models: Sequence[str] = MODEL_KINDS,
    n_workers: int = 1,
) -> dict:
    """Run the experiment once per counterfactual interval and tabulate."""
    if not tau_days:
        raise ConfigError("tau sweep needs at least one tau value")
    per_tau = []
    for td in tau_days:
        tau_map = dict(cfg_map)
        tau_map["tau"] = str(int(round(td * DAY)))
        per_tau.append(
            run_experiment(
                tau_map, None, n_seeds=n_seeds, base_seed=base_seed,
                models=models, n_workers=n_workers,
            )
        )
    sweep = {
        "config_hash": config_hash(dict(cfg_map)),
        "tau_days": [float(t) for t in tau_days],
        "recall": [r["recall"]["mean"] for r in per_tau],
        "per_tau": per_tau,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(
            json.dumps(sweep, sort_keys=True, separators=(",", ":"))
        )
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_days", "recall", *(f"{k}_auc" for k in models)])
            for td, rep in zip(sweep["tau_days"], per_tau):
                row = [td, repr(rep["recall"]["mean"])]
                row += [repr(rep["models"][k]["mean"]["auc"]) for k in models]
                w.writerow(row)
    return sweep


def infer_schema(events: Sequence[ClickEvent]) -> FeatureSchema:
    """Schema for imported CSV logs: per-field vocab = max seen id + 1."""
    if not events:
        raise ConfigError("cannot infer a feature schema from an empty log")
    k = len(events[0].features)
    sizes = [1] * k
    for ev in events:
        for i, f in enumerate(ev.features):
            sizes[i] = max(sizes[i], f + 1)
    return FeatureSchema(vocab_sizes=tuple(sizes))
