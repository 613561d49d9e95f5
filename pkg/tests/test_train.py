"""Training loop, schedule, ablation wiring, grid search."""

from dataclasses import replace

import numpy as np
import pytest

from clclsa import data as dt
from clclsa import model as md
from clclsa import train as tr

TINY_MODEL = md.ModelConfig(3, (6, 6, 6), (4, 4, 4), 2, ae_hidden=(4, 3), dropout_p=0.1)


def tiny_dataset(n=24, seed=0, eta=0.0):
    spec = dt.SyntheticSpec(n_subjects=n, n_views=3, view_dims=(6, 6, 6),
                            class_count=2, shared_dim=6, snr=5.0, class_sep=1.5,
                            seed=seed)
    ds = dt.synth_generate(spec)
    if eta > 0:
        ds = dt.apply_missingness(ds, dt.MissingnessSpec(eta=eta, seed=seed + 100))
    return ds


def quick_config(**kw):
    base = dict(epochs=20, initial_lr=1e-3, lr_schedule="constant", seed=0,
                weights=md.LossWeights(0.1, 0.1, 0.01, 9.0))
    base.update(kw)
    return tr.TrainConfig(**base)


class TestLrSchedule:
    def test_initial(self):
        assert tr.lr_at(0, tr.TrainConfig()) == 1e-4

    def test_first_decay_step(self):
        assert tr.lr_at(500, tr.TrainConfig()) == pytest.approx(2e-5)

    def test_last_epoch_of_default_budget(self):
        assert tr.lr_at(2499, tr.TrainConfig()) == pytest.approx(1e-4 * 0.2 ** 4)

    def test_constant_schedule(self):
        cfg = tr.TrainConfig(lr_schedule="constant", initial_lr=3e-3)
        assert tr.lr_at(1234, cfg) == 3e-3


class TestTrain:
    def test_zero_weights_reduce_to_classification(self):
        ds = tiny_dataset()
        cfg = quick_config(weights=md.LossWeights(0, 0, 0, 9.0), epochs=5)
        _, logs = tr.train(ds, TINY_MODEL, cfg)
        for entry in logs:
            assert entry.breakdown.total == entry.breakdown.l_clf
            assert entry.breakdown.l_al == entry.breakdown.l_co == entry.breakdown.l_cl == 0.0

    def test_loss_descends_on_separable_data(self):
        """Total loss strictly decreases over the first 20 epochs for most seeds.

        Dropout off: the full-batch loss must be deterministic for strict
        monotonicity to be a meaningful check.
        """
        model = md.ModelConfig(3, (6, 6, 6), (4, 4, 4), 2, ae_hidden=(4, 3), dropout_p=0.0)
        good = 0
        for seed in range(5):
            ds = tiny_dataset(n=60, seed=seed)
            cfg = quick_config(seed=seed, epochs=20,
                               weights=md.LossWeights(0.01, 0.0, 0.01, 9.0))
            _, logs = tr.train(ds, model, cfg)
            totals = [e.breakdown.total for e in logs]
            if all(b < a for a, b in zip(totals, totals[1:])):
                good += 1
        assert good >= 4

    def test_bitwise_deterministic(self):
        ds = tiny_dataset(eta=0.3)
        cfg = quick_config(epochs=10)
        p1, logs1 = tr.train(ds, TINY_MODEL, cfg)
        p2, logs2 = tr.train(ds, TINY_MODEL, cfg)
        assert logs1[-1].breakdown.total == logs2[-1].breakdown.total
        for name, t in p1.tensors().items():
            np.testing.assert_array_equal(t.data, p2[name].data)

    def test_one_log_entry_per_epoch(self):
        ds = tiny_dataset()
        _, logs = tr.train(ds, TINY_MODEL, quick_config(epochs=7))
        assert [e.epoch for e in logs] == list(range(7))

    def test_complete_data_forces_lambda_co_to_zero(self):
        ds = tiny_dataset(eta=0.0)
        cfg = quick_config(weights=md.LossWeights(0.0, 0.5, 0.0, 9.0), epochs=3)
        _, logs = tr.train(ds, TINY_MODEL, cfg)
        assert all(e.breakdown.l_co == 0.0 for e in logs)

    def test_incomplete_data_keeps_lambda_co(self):
        ds = tiny_dataset(n=40, eta=0.4)
        cfg = quick_config(weights=md.LossWeights(0.0, 0.5, 0.0, 9.0), epochs=3)
        _, logs = tr.train(ds, TINY_MODEL, cfg)
        assert logs[0].breakdown.l_co > 0.0

    def test_latent_variance_diagnostic_logged(self):
        ds = tiny_dataset()
        _, logs = tr.train(ds, TINY_MODEL, quick_config(epochs=2))
        assert len(logs[0].latent_variance) == 3
        assert all(v >= 0 for v in logs[0].latent_variance)

    def test_one_optimizer_step_per_epoch_in_full_batch_mode(self, monkeypatch):
        import clclsa.train as train_module

        states = []
        original = train_module.adam_step

        def counting(params, grads, state, lr):
            states.append(state)
            return original(params, grads, state, lr)

        monkeypatch.setattr(train_module, "adam_step", counting)
        ds = tiny_dataset()
        tr.train(ds, TINY_MODEL, quick_config(epochs=7))
        assert len(states) == 7
        assert states[0].t == 7  # one shared state, stepped once per epoch

    def test_minibatch_mode_runs(self):
        ds = tiny_dataset(n=30)
        cfg = quick_config(epochs=3, batch_size=8)
        params, logs = tr.train(ds, TINY_MODEL, cfg)
        assert len(logs) == 3

    def test_non_finite_loss_aborts_with_last_good_state(self):
        ds = tiny_dataset(n=30, eta=0.4)
        cfg = quick_config(epochs=200, initial_lr=1e200,
                           weights=md.LossWeights(0.1, 1.0, 0.01, 9.0))
        with pytest.raises(tr.TrainingAborted) as info, np.errstate(all="ignore"), \
                np.testing.suppress_warnings() as sup:
            sup.filter(RuntimeWarning)
            tr.train(ds, TINY_MODEL, cfg)
        exc = info.value
        assert exc.term
        assert exc.params is not None
        for t in exc.params.tensors().values():
            assert np.isfinite(t.data).all()


class TestAblationEquivalence:
    def test_zero_weight_equals_disabled_code_path(self):
        """lambda_x = 0 is bitwise identical to removing term x entirely."""
        ds = tiny_dataset(n=30, eta=0.3)
        for term, weights_zero, weights_disabled in (
            ("co", md.LossWeights(0.1, 0.0, 0.01, 9.0), md.LossWeights(0.1, 0.7, 0.01, 9.0)),
            ("cl", md.LossWeights(0.1, 0.1, 0.0, 9.0), md.LossWeights(0.1, 0.1, 0.9, 9.0)),
            ("al", md.LossWeights(0.0, 0.1, 0.01, 9.0), md.LossWeights(0.8, 0.1, 0.01, 9.0)),
        ):
            cfg_zero = quick_config(weights=weights_zero, epochs=20)
            cfg_disabled = quick_config(weights=weights_disabled, epochs=20,
                                        disabled_terms=(term,))
            p_zero, _ = tr.train(ds, TINY_MODEL, cfg_zero)
            p_disabled, _ = tr.train(ds, TINY_MODEL, cfg_disabled)
            for name, t in p_zero.tensors().items():
                np.testing.assert_array_equal(
                    t.data, p_disabled[name].data,
                    err_msg=f"term {term}, parameter {name}")


class TestGridSearch:
    def test_trial_count_on_incomplete_data(self):
        ds = tiny_dataset(n=40, eta=0.4)
        grid = tr.GridSpec(lambda_al_values=(0.0, 0.1), lambda_co_values=(0.0, 0.1),
                           lambda_cl_values=(0.0, 0.1))
        result = tr.grid_search(ds, None, TINY_MODEL, grid, quick_config(epochs=2))
        assert len(result.trials) == 8

    def test_complete_data_collapses_lambda_co(self):
        ds = tiny_dataset(n=40, eta=0.0)
        grid = tr.GridSpec(lambda_al_values=(0.0, 0.1), lambda_co_values=(0.0, 0.1),
                           lambda_cl_values=(0.0, 0.1))
        result = tr.grid_search(ds, None, TINY_MODEL, grid, quick_config(epochs=2))
        assert len(result.trials) == 4
        assert all(t.weights.lambda_co == 0.0 for t in result.trials)

    def test_tie_rule_picks_smallest_triple(self):
        trials = [
            tr.GridTrial(0, md.LossWeights(0.1, 0.1, 0.1), 0.9, "ok"),
            tr.GridTrial(1, md.LossWeights(0.0, 0.0, 0.0), 0.9, "ok"),
            tr.GridTrial(2, md.LossWeights(0.0, 0.1, 0.0), 0.9, "ok"),
        ]
        result = tr.GridSearchResult(trials=trials, best=None)
        ranked = result.ranked()
        assert ranked[0].weights == md.LossWeights(0.0, 0.0, 0.0)
        assert ranked[1].weights == md.LossWeights(0.0, 0.1, 0.0)

    def test_failed_trials_excluded_from_ranking(self):
        trials = [
            tr.GridTrial(0, md.LossWeights(0.0, 0.0, 0.0), None, "failed", "boom"),
            tr.GridTrial(1, md.LossWeights(0.1, 0.0, 0.0), 0.5, "ok"),
        ]
        result = tr.GridSearchResult(trials=trials, best=None)
        ranked = result.ranked()
        assert len(ranked) == 1 and ranked[0].index == 1
