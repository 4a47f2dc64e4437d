"""Command-line entry point: simulate, snapshot, train, evaluate, experiment,
sweep-tau.

Exit codes: 0 success, 2 configuration/input problems, 3 pipeline failures.
`DELAYFB_LOG` selects the log level (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import domain, experiment, metrics, nnet, snapshot, trainer
from .domain import DAY, ExperimentConfig, config_hash, load_config
from .errors import ConfigError, DataError, DelayfbError, InputError, PipelineError
from .logsim import SimConfig, simulate_log

log = logging.getLogger("delayfb")


def _write_manifest(out: Path, cfg_map: dict, seed: int, extra: dict | None = None) -> None:
    doc = {"config_hash": config_hash(cfg_map), "seed": seed}
    doc.update(extra or {})
    (out / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":"))
    )


def cmd_simulate(args) -> int:
    cfg_map = load_config(args.config)
    if args.seed is not None:
        cfg_map["seed"] = str(args.seed)
    sim = SimConfig.from_mapping(cfg_map)
    cfg = ExperimentConfig.from_mapping(cfg_map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = sim.build(seed=cfg.seed, w_a=cfg.w_a)
    events, labels = simulate_log(world, sim.n_clicks, sim.span, seed=cfg.seed)
    domain.write_click_log(out / "clicks.csv", events, sim.num_fields)
    domain.write_oracle_labels(out / "oracle.csv", labels)
    _write_manifest(
        out,
        cfg_map,
        cfg.seed,
        {"vocab_sizes": list(world.schema.vocab_sizes), "w_a": cfg.w_a, "span": sim.span},
    )
    log.info("wrote %d clicks to %s", len(events), out)
    return 0


def cmd_snapshot(args) -> int:
    cfg_map = load_config(args.config)
    sim = SimConfig.from_mapping(cfg_map)
    cfg = ExperimentConfig.from_mapping(cfg_map)
    events = domain.read_click_log(args.log)
    T = (sim.train_days + sim.valid_days) * DAY
    observed = snapshot.observe(events, T, cfg.w_a)
    train = [s for s in observed if s.cts < sim.train_days * DAY]
    d_lc = snapshot.counterfactual_label(train, T, cfg.tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    num_fields = len(events[0].features) if events else sim.num_fields
    snapshot.write_lc_data(out / "lc.csv", d_lc, num_fields)
    _write_manifest(out, cfg_map, cfg.seed, {"T": T, "tau": cfg.tau, "n_lc": len(d_lc)})
    log.info("wrote %d LC records to %s", len(d_lc), out)
    return 0


def _trace_doc(trained: "experiment.TrainedKind") -> list[dict]:
    def epochs(result: trainer.TrainResult) -> list[dict]:
        return [
            {"epoch": s.epoch, "train_loss": s.train_loss, "valid_metric": s.valid_metric}
            for s in result.trace
        ]

    if trained.alt is not None:
        return [
            {
                "round": ck.round,
                "lc": epochs(ck.lc_result),
                "cvr": epochs(ck.cvr_result),
            }
            for ck in trained.alt.rounds
        ]
    return [{"round": 0, "cvr": epochs(trained.result)}]


def cmd_train(args) -> int:
    cfg_map = load_config(args.config)
    if args.seed is not None:
        cfg_map["seed"] = str(args.seed)
    sim = SimConfig.from_mapping(cfg_map)
    cfg = ExperimentConfig.from_mapping(cfg_map)
    events = domain.read_click_log(args.log)
    oracle = domain.read_oracle_labels(args.oracle)
    schema = experiment.infer_schema(events)
    data = experiment.split_events(events, oracle, sim, cfg, schema)
    trained = experiment.train_kind(data, cfg, args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(cfg_map), "seed": cfg.seed, "model": args.model}
    nnet.save_checkpoint(out / "cvr.ckpt.json", trained.params, meta)
    if trained.alt is not None:
        nnet.save_checkpoint(out / "lc.ckpt.json", trained.alt.lc_params, meta)
    trace = {
        "config_hash": config_hash(cfg_map),
        "seed": cfg.seed,
        "model": args.model,
        "rounds": _trace_doc(trained),
    }
    (out / "trace.json").write_text(json.dumps(trace, sort_keys=True, separators=(",", ":")))
    log.info("trained %s model into %s", args.model, out)
    return 0


def cmd_evaluate(args) -> int:
    cfg_map = load_config(args.config)
    params = nnet.load_checkpoint(args.checkpoint)
    if params.has_elapsed_input:
        raise InputError("evaluate expects a CVR checkpoint (no elapsed input)")
    events = domain.read_click_log(args.log)
    if not events:
        raise InputError("evaluation log is empty")
    oracle = {lab.id: lab.c for lab in domain.read_oracle_labels(args.oracle)}
    schema = experiment.infer_schema(events)
    feats = schema.globalize(np.array([ev.features for ev in events]))
    missing = [ev.id for ev in events if ev.id not in oracle]
    if missing:
        raise DataError(f"{len(missing)} events lack oracle labels (first: {missing[0]})")
    c = np.array([oracle[ev.id] for ev in events], dtype=np.int64)
    scores = trainer.predict(params, feats)
    report = metrics.MetricsReport(
        auc=metrics.auc(scores, c),
        prauc=metrics.prauc(scores, c),
        ll=metrics.logloss(scores, c),
    )
    if args.baseline_vanilla and args.baseline_oracle:
        base_v = json.loads(Path(args.baseline_vanilla).read_text())
        base_o = json.loads(Path(args.baseline_oracle).read_text())
        report = metrics.MetricsReport(
            auc=report.auc,
            prauc=report.prauc,
            ll=report.ll,
            ri_auc=metrics.relative_improvement(report.auc, base_v["auc"], base_o["auc"]),
            ri_prauc=metrics.relative_improvement(report.prauc, base_v["prauc"], base_o["prauc"]),
            ri_ll=metrics.relative_improvement(report.ll, base_v["ll"], base_o["ll"]),
            per_group=report.per_group,
        )
    if args.stratified:
        delays = np.array(
            [ev.cvt - ev.cts if ev.cvt is not None else -1 for ev in events],
            dtype=np.float64,
        )
        groups = metrics.delay_stratified_eval(scores, c, delays, k=args.stratified)
        report = metrics.MetricsReport(
            auc=report.auc,
            prauc=report.prauc,
            ll=report.ll,
            ri_auc=report.ri_auc,
            ri_prauc=report.ri_prauc,
            ri_ll=report.ri_ll,
            per_group=tuple(groups),
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["config_hash"] = config_hash(cfg_map)
    doc["seed"] = int(cfg_map.get("seed", 0))
    (out / "metrics.json").write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write("metric,value\n")
        for name in ("auc", "prauc", "ll"):
            fh.write(f"{name},{doc[name]!r}\n")
    print(json.dumps({k: doc[k] for k in ("auc", "prauc", "ll")}, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    cfg_map = load_config(args.config)
    models = tuple(args.models.split(",")) if args.models else experiment.MODEL_KINDS
    report = experiment.run_experiment(
        cfg_map,
        out_dir=args.out,
        n_seeds=args.seeds,
        base_seed=args.seed,
        models=models,
        n_workers=args.workers,
    )
    summary = {k: report["models"][k]["mean"]["auc"] for k in models}
    print(json.dumps({"mean_auc": summary}, sort_keys=True))
    return 0


def cmd_sweep_tau(args) -> int:
    cfg_map = load_config(args.config)
    tau_days = [float(t) for t in args.tau_days.split(",") if t]
    models = tuple(args.models.split(",")) if args.models else experiment.MODEL_KINDS
    sweep = experiment.run_sweep_tau(
        cfg_map,
        tau_days,
        out_dir=args.out,
        n_seeds=args.seeds,
        base_seed=args.seed,
        models=models,
        n_workers=args.workers,
    )
    print(json.dumps({"tau_days": sweep["tau_days"], "recall": sweep["recall"]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayfb",
        description="Delayed-feedback CVR prediction: simulation, label-corrected training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="flat key=value config file")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic click log + oracle labels")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("snapshot", help="counterfactually label a click log into LC data")
    common(p)
    p.add_argument("--log", required=True, help="click-log CSV")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("train", help="train one model kind from CSV inputs")
    common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--model", choices=experiment.MODEL_KINDS, default="ulc")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a CVR checkpoint against oracle labels")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--stratified", type=int, default=0, help="delay groups (0 = off)")
    p.add_argument("--baseline-vanilla", default=None, help="vanilla metrics.json for RI")
    p.add_argument("--baseline-oracle", default=None, help="oracle metrics.json for RI")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="full multi-seed benchmark with report")
    common(p)
    p.add_argument("--seeds", type=int, default=5, help="number of repetitions")
    p.add_argument("--seed", type=int, default=None, help="base seed override")
    p.add_argument("--models", default=None, help="comma list of vanilla,oracle,ulc")
    p.add_argument("--workers", type=int, default=1, help="parallel seed processes")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-tau", help="experiment per counterfactual interval")
    common(p)
    p.add_argument("--tau-days", required=True, help="comma list of day intervals")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--workers", type=int, default=1, help="parallel seed processes")
    p.set_defaults(func=cmd_sweep_tau)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DELAYFB_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except DelayfbError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
