import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make helpers importable

from delayfb.domain import DAY, dump_config, load_config

REPO = Path(__file__).parent.parent
ACCEPT_SEEDS = 5
ACCEPT_WORKERS = 2

TINY_CONFIG = {
    # simulation
    "sim_contexts": "8",
    "sim_fields": "3",
    "sim_clicks": "3000",
    "sim_train_days": "5",
    "sim_valid_days": "1",
    "sim_test_days": "1",
    "sim_cvr_lo": "0.1",
    "sim_cvr_hi": "0.5",
    "sim_delay_mean_days_lo": "0.3",
    "sim_delay_mean_days_hi": "2.0",
    "sim_delay_cvr_corr": "0.5",
    # training
    "w_a": str(10 * DAY),
    "tau": str(2 * DAY),
    "n_alt": "1",
    "learning_rate": "0.003",
    "l2_reg": "1e-6",
    "batch_size": "256",
    "hidden_sizes": "8,4",
    "embedding_dim": "4",
    "seed": "11",
    "early_stop_patience": "1",
    "w_clip": "0.95",
    "max_epochs": "2",
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    dump_config(path, TINY_CONFIG)
    return path


@pytest.fixture
def tiny_config_map():
    return dict(TINY_CONFIG)


# ---------------------------------------------------------------------------
# shared multi-seed benchmark runs for the acceptance criteria (6-10); each
# is computed once per session on the shipped configs


@pytest.fixture(scope="session")
def bench_config_map():
    return load_config(REPO / "configs" / "default.cfg")


@pytest.fixture(scope="session")
def sweep_config_map():
    return load_config(REPO / "configs" / "sweep.cfg")


@pytest.fixture(scope="session")
def bench_report(bench_config_map):
    """Default benchmark, 5 seeds, all three model kinds. Returns (report, seconds)."""
    from delayfb.experiment import run_experiment

    start = time.time()
    report = run_experiment(
        bench_config_map, n_seeds=ACCEPT_SEEDS, n_workers=ACCEPT_WORKERS
    )
    return report, time.time() - start


@pytest.fixture(scope="session")
def alt_rounds_reports(bench_config_map, bench_report):
    """ULC-only reports keyed by alternative-training rounds (0, 1, 3)."""
    from delayfb.experiment import run_experiment

    reports = {1: bench_report[0]}
    for n_alt in (0, 3):
        cfg = dict(bench_config_map)
        cfg["n_alt"] = str(n_alt)
        reports[n_alt] = run_experiment(
            cfg, n_seeds=ACCEPT_SEEDS, models=("ulc",), n_workers=ACCEPT_WORKERS
        )
    return reports


@pytest.fixture(scope="session")
def strategy_reports(bench_config_map):
    """ULC-only reports per prediction-based relabeling strategy."""
    from delayfb.experiment import run_experiment

    out = {}
    for strategy in ("hard", "soft", "drop"):
        cfg = dict(bench_config_map)
        cfg["strategy"] = strategy
        cfg["strategy_threshold"] = "0.35"  # inside the CVR prediction range
        out[strategy] = run_experiment(
            cfg, n_seeds=ACCEPT_SEEDS, models=("ulc",), n_workers=ACCEPT_WORKERS
        )
    return out


@pytest.fixture(scope="session")
def tau_sweep(sweep_config_map):
    from delayfb.experiment import run_sweep_tau

    return run_sweep_tau(
        sweep_config_map,
        [1, 3, 5, 7, 10],
        n_seeds=ACCEPT_SEEDS,
        models=("ulc",),
        n_workers=ACCEPT_WORKERS,
    )
