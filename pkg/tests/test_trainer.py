import numpy as np
import pytest

from delayfb import logsim, nnet, snapshot, trainer
from delayfb.domain import DAY, ExperimentConfig, LcSample
from delayfb.errors import ConfigError, InputError, NumericError
from delayfb.trainer import ModelData

from helpers import zero_like_params

W_A = 30 * DAY


def small_dataset(seed=5, n_clicks=12_000):
    """A small observed dataset spanning 10 days: 8 train, 1 valid, 1 test."""
    world = logsim.build_world(
        6, (0.1, 0.5), (1 / (3 * DAY), 1 / DAY), seed=31, w_a=W_A
    )
    events, oracle = logsim.simulate_log(world, n_clicks, 10 * DAY, seed=seed)
    T = 9 * DAY
    observed = snapshot.observe(events, T, W_A)
    train = [s for s in observed if s.cts < 8 * DAY]
    valid = [s for s in observed if s.cts >= 8 * DAY]
    d_lc = snapshot.counterfactual_label(train, T, 2 * DAY)
    return world, train, valid, d_lc, {lab.id: lab.c for lab in oracle}


def small_config(**overrides):
    base = dict(
        w_a=W_A,
        tau=2 * DAY,
        n_alt=1,
        learning_rate=2e-3,
        l2_reg=1e-6,
        batch_size=512,
        hidden_sizes=(16, 8),
        embedding_dim=4,
        seed=7,
        early_stop_patience=1,
        w_clip=0.95,
        max_epochs=4,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def baseline_splits(world, train, valid, targets="v"):
    feats, v, e = trainer.observed_to_arrays(train, world.schema)
    vfeats, vv, ve = trainer.observed_to_arrays(valid, world.schema)
    return (
        ModelData(features=feats, targets=v, elapsed=e),
        ModelData(features=vfeats, targets=vv, elapsed=ve),
    )


class TestModelData:
    def test_length_mismatch(self):
        with pytest.raises(InputError):
            ModelData(features=np.zeros((3, 2), dtype=int), targets=np.zeros(2))

    def test_subset(self):
        data = ModelData(
            features=np.arange(6).reshape(3, 2),
            targets=np.array([0.0, 1.0, 0.0]),
            elapsed=np.array([1.0, 2.0, 3.0]),
        )
        sub = data.subset(np.array([2, 0]))
        assert sub.features.tolist() == [[4, 5], [0, 1]]
        assert sub.elapsed.tolist() == [3.0, 1.0]


class TestTrainModel:
    def test_trace_is_deterministic(self):
        world, train, valid, _, _ = small_dataset()
        data, vdata = baseline_splits(world, train, valid)
        cfg = small_config(max_epochs=3)
        init = nnet.init_params(
            world.schema.total_categories, 4, cfg.embedding_dim, cfg.hidden_sizes,
            False, W_A, np.random.default_rng(1),
        )
        r1 = trainer.train_model(init, data, "vanilla", cfg, vdata, "vanilla")
        r2 = trainer.train_model(init, data, "vanilla", cfg, vdata, "vanilla")
        assert r1.trace == r2.trace
        for a, b in zip(nnet.tensors_of(r1.params), nnet.tensors_of(r2.params)):
            assert np.array_equal(a, b)

    def test_patience_semantics(self):
        # with patience 0 the trace stops right after the first non-improving epoch
        world, train, valid, _, _ = small_dataset()
        data, vdata = baseline_splits(world, train, valid)
        cfg = small_config(early_stop_patience=0, max_epochs=12)
        init = nnet.init_params(
            world.schema.total_categories, 4, cfg.embedding_dim, cfg.hidden_sizes,
            False, W_A, np.random.default_rng(2),
        )
        result = trainer.train_model(init, data, "vanilla", cfg, vdata, "vanilla")
        vms = [s.valid_metric for s in result.trace]
        stopped_early = len(vms) < cfg.max_epochs
        if stopped_early:
            assert vms[-1] >= min(vms[:-1])  # last epoch failed to improve
            assert all(v < min(vms[:i]) for i, v in enumerate(vms[1:-1], start=1))
        assert result.best_epoch == int(np.argmin(vms)) + 1

    def test_returns_best_checkpoint(self):
        world, train, valid, _, _ = small_dataset()
        data, vdata = baseline_splits(world, train, valid)
        cfg = small_config(max_epochs=5, early_stop_patience=4)
        init = nnet.init_params(
            world.schema.total_categories, 4, cfg.embedding_dim, cfg.hidden_sizes,
            False, W_A, np.random.default_rng(3),
        )
        result = trainer.train_model(init, data, "vanilla", cfg, vdata, "vanilla")
        best = min(s.valid_metric for s in result.trace)
        assert trainer.evaluate_loss(result.params, vdata, "vanilla") == pytest.approx(
            best, abs=1e-12
        )

    def test_empty_validation_rejected(self):
        world, train, valid, _, _ = small_dataset()
        data, _ = baseline_splits(world, train, valid)
        empty = ModelData(features=np.zeros((0, 4), dtype=int), targets=np.zeros(0))
        with pytest.raises(InputError):
            trainer.train_model(
                zero_like_params(
                    nnet.init_params(world.schema.total_categories, 4, 4, (8,), False, W_A,
                                     np.random.default_rng(0))
                ),
                data, "vanilla", small_config(), empty, "vanilla",
            )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts_with_epoch(self):
        world, train, valid, _, _ = small_dataset(n_clicks=2000)
        data, vdata = baseline_splits(world, train, valid)
        cfg = small_config(learning_rate=1e200, max_epochs=2)
        init = nnet.init_params(
            world.schema.total_categories, 4, 4, (8,), False, W_A,
            np.random.default_rng(4),
        )
        with pytest.raises(NumericError, match="epoch"):
            trainer.train_model(init, data, "vanilla", cfg, vdata, "vanilla")

    def test_oracle_training_approaches_bayes_loss(self):
        # train on true labels in an enumerable world: validation loss should
        # land within 0.01 of the closed-form entropy of the true CVRs
        w_a = W_A
        world = logsim.build_world(
            8, (0.05, 0.5), (1 / (8 * DAY), 1 / (0.5 * DAY)), seed=21, w_a=w_a
        )
        events, oracle = logsim.simulate_log(world, 120_000, 23 * DAY, seed=5)
        c_map = {lab.id: lab.c for lab in oracle}
        feats = world.schema.globalize(np.array([ev.features for ev in events]))
        c = np.array([c_map[ev.id] for ev in events], dtype=float)
        data = ModelData(features=feats[:90_000], targets=c[:90_000])
        vdata = ModelData(features=feats[90_000:], targets=c[90_000:])
        cfg = ExperimentConfig(
            w_a=w_a, seed=3, embedding_dim=8, hidden_sizes=(32, 16), batch_size=1024,
            learning_rate=1e-3, l2_reg=1e-6, early_stop_patience=2, max_epochs=30,
        )
        init = nnet.init_params(
            world.schema.total_categories, 4, cfg.embedding_dim, cfg.hidden_sizes,
            False, w_a, np.random.default_rng(0),
        )
        result = trainer.train_model(init, data, "oracle", cfg, vdata, "oracle")
        p_true = np.array(
            [logsim.true_conversion_prob(ctx, w_a) for ctx in world.contexts]
        )
        wx = np.array(world.context_weights)
        bayes = float(-(wx * (p_true * np.log(p_true) + (1 - p_true) * np.log(1 - p_true))).sum())
        val_loss = min(s.valid_metric for s in result.trace)
        assert abs(val_loss - bayes) < 0.01


class TestAlternativeTrain:
    def test_single_round_when_n_alt_zero(self):
        world, train, valid, d_lc, _ = small_dataset()
        cfg = small_config(n_alt=0, max_epochs=2)
        alt = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)
        assert len(alt.rounds) == 1
        assert alt.cvr_params is alt.rounds[0].cvr_result.params

    def test_round_count(self):
        world, train, valid, d_lc, _ = small_dataset(n_clicks=4000)
        cfg = small_config(n_alt=2, max_epochs=1)
        alt = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)
        assert [r.round for r in alt.rounds] == [0, 1, 2]

    def test_empty_lc_data_rejected(self):
        world, train, valid, _, _ = small_dataset(n_clicks=2000)
        with pytest.raises(ConfigError):
            trainer.alternative_train(train, [], small_config(), world.schema, valid)

    def test_reproducible(self):
        world, train, valid, d_lc, _ = small_dataset(n_clicks=4000)
        cfg = small_config(max_epochs=2)
        a = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)
        b = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)
        for ta, tb in zip(nnet.tensors_of(a.cvr_params), nnet.tensors_of(b.cvr_params)):
            assert np.array_equal(ta, tb)

    def test_round_replay_matches_checkpoints(self):
        # any round can be replayed in isolation from the previous round's output
        world, train, valid, d_lc, _ = small_dataset(n_clicks=4000)
        cfg = small_config(n_alt=1, max_epochs=2)
        alt = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)

        feats, v, e = trainer.observed_to_arrays(train, world.schema)
        cvr_data = ModelData(features=feats, targets=v, elapsed=e)
        vfeats, vv, ve = trainer.observed_to_arrays(valid, world.schema)
        cvr_valid = ModelData(features=vfeats, targets=vv, elapsed=ve)
        lc_data = trainer.lc_to_data(d_lc, world.schema)

        transferred = nnet.transfer_embeddings(
            alt.rounds[0].cvr_result.params, alt.rounds[0].lc_result.params
        )
        replay = trainer.run_round(
            1, cfg, world.schema, cvr_data, cvr_valid, lc_data, transferred.embedding
        )
        for a, b in zip(
            nnet.tensors_of(replay.cvr_result.params),
            nnet.tensors_of(alt.rounds[1].cvr_result.params),
        ):
            assert np.array_equal(a, b)
        assert replay.cvr_result.trace == alt.rounds[1].cvr_result.trace

    def test_lc_model_carries_elapsed_input(self):
        world, train, valid, d_lc, _ = small_dataset(n_clicks=4000)
        alt = trainer.alternative_train(
            train, d_lc, small_config(n_alt=0, max_epochs=1), world.schema, valid
        )
        assert alt.lc_params.has_elapsed_input
        assert not alt.cvr_params.has_elapsed_input


class TestApplyStrategy:
    def _lc_records(self):
        return [
            LcSample(id=0, features=(0, 0, 0, 0), e_cd=100, w=1.0),
            LcSample(id=1, features=(1, 1, 1, 1), e_cd=200, w=0.0),
            LcSample(id=2, features=(2, 2, 2, 2), e_cd=300, w=0.0),
        ]

    def _world(self):
        return logsim.build_world(6, (0.1, 0.5), (1 / DAY, 1 / DAY), seed=31, w_a=W_A)

    def _zero_cvr(self, schema):
        return zero_like_params(
            nnet.init_params(schema.total_categories, 4, 4, (8,), False, W_A,
                             np.random.default_rng(0))
        )

    def test_hard_with_threshold_one_is_identity(self):
        world = self._world()
        out = trainer.apply_strategy(
            self._lc_records(), self._zero_cvr(world.schema), "hard", 1.0, world.schema
        )
        assert out == self._lc_records()

    def test_soft_with_zero_network_gives_half(self):
        world = self._world()
        out = trainer.apply_strategy(
            self._lc_records(), self._zero_cvr(world.schema), "soft", 0.5, world.schema
        )
        assert [s.w for s in out] == [1.0, 0.5, 0.5]

    def test_drop_with_tiny_threshold_keeps_only_positives(self):
        world = self._world()
        out = trainer.apply_strategy(
            self._lc_records(), self._zero_cvr(world.schema), "drop", 1e-9, world.schema
        )
        assert [s.id for s in out] == [0]

    def test_hard_relabels_above_threshold(self):
        world = self._world()
        out = trainer.apply_strategy(
            self._lc_records(), self._zero_cvr(world.schema), "hard", 0.4, world.schema
        )
        assert [s.w for s in out] == [1.0, 1.0, 1.0]

    def test_positive_records_never_modified(self):
        world = self._world()
        for strategy, thr in (("hard", 0.1), ("soft", 0.5), ("drop", 1e-9)):
            out = trainer.apply_strategy(
                self._lc_records(), self._zero_cvr(world.schema), strategy, thr, world.schema
            )
            assert out[0] == self._lc_records()[0]

    def test_unknown_strategy(self):
        world = self._world()
        with pytest.raises(InputError):
            trainer.apply_strategy(
                self._lc_records(), self._zero_cvr(world.schema), "fuzzy", 0.5, world.schema
            )

    def test_threshold_domain(self):
        world = self._world()
        with pytest.raises(InputError):
            trainer.apply_strategy(
                self._lc_records(), self._zero_cvr(world.schema), "drop", 0.0, world.schema
            )

    def test_strategy_wired_into_alternative_train(self):
        world, train, valid, d_lc, _ = small_dataset(n_clicks=4000)
        cfg = small_config(n_alt=1, max_epochs=1)
        plain = trainer.alternative_train(train, d_lc, cfg, world.schema, valid)
        # threshold 1.0 never relabels anything: identical to no strategy
        hard_noop = trainer.alternative_train(
            train, d_lc, cfg, world.schema, valid, strategy="hard", threshold=1.0
        )
        for a, b in zip(nnet.tensors_of(plain.cvr_params), nnet.tensors_of(hard_noop.cvr_params)):
            assert np.array_equal(a, b)
        # the soft strategy changes the LC training data and thus the outcome
        soft = trainer.alternative_train(
            train, d_lc, cfg, world.schema, valid, strategy="soft", threshold=0.5
        )
        changed = any(
            not np.array_equal(a, b)
            for a, b in zip(nnet.tensors_of(plain.cvr_params), nnet.tensors_of(soft.cvr_params))
        )
        assert changed
