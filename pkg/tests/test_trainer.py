"""Training loop behavior: determinism, early stopping, the with/without-ties
ablation, gamma sweeps, and dataset mixing."""

import numpy as np
import pytest

from pcsrank.core import Comparison, Item, SplitSpec, ValidationError, make_dataset, split
from pcsrank.model import Hyperparams, score_items
from pcsrank.trainer import (
    GammaSweepRow,
    TrainConfig,
    history_to_csv,
    mix_datasets,
    sweep_gamma,
    sweep_to_csv,
    train,
)

TRUE_W = np.array([1.0, -0.5, 0.25, 2.0])


def _separable_dataset(seed=0, n_items=24, n_comps=240, tie_band=0.0):
    """Noise-free comparisons generated by a fixed linear utility."""
    rng = np.random.default_rng(seed)
    items = [Item(id=f"t{k:02d}", features=rng.normal(size=4)) for k in range(n_items)]
    scores = {i.id: float(i.features @ TRUE_W) for i in items}
    comps = []
    for _ in range(n_comps):
        a, b = rng.choice(n_items, size=2, replace=False)
        ia, ib = items[int(a)], items[int(b)]
        diff = scores[ia.id] - scores[ib.id]
        if abs(diff) < tie_band:
            outcome = 0
        else:
            outcome = -1 if diff > 0 else +1
        comps.append(Comparison(left_id=ia.id, right_id=ib.id, outcome=outcome))
    return make_dataset(items, comps)


def _small_config(**kwargs):
    hyper_kwargs = {
        "learning_rate": 0.01,
        "batch_size": 32,
        "max_epochs": 6,
        "seed": 1,
        "gamma": 0.1,
    }
    hyper_kwargs.update(kwargs.pop("hyper_kwargs", {}))
    defaults = {
        "hyper": Hyperparams(**hyper_kwargs),
        "trunk_widths": (16,),
        "fusion_hidden": 8,
        "patience": 10,
    }
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def separable_splits():
    ds = _separable_dataset()
    return split(ds, SplitSpec(seed=3))


class TestTrainBasics:
    def test_single_epoch_history(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        cfg = _small_config(hyper_kwargs={"max_epochs": 1})
        params, history = train(train_set, dev_set, cfg)
        assert len(history) == 1
        assert history[0].epoch == 0
        assert params.adam.step == int(np.ceil(len(train_set.comparisons) / 32))

    def test_learns_separable_world(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        cfg = _small_config(hyper_kwargs={"max_epochs": 30})
        _, history = train(train_set, dev_set, cfg)
        assert max(rec.dev_accuracy2 for rec in history) >= 0.95

    def test_history_fields_consistent(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        cfg = _small_config()
        _, history = train(train_set, dev_set, cfg)
        assert [rec.epoch for rec in history] == list(range(len(history)))
        for rec in history:
            assert 0.0 <= rec.dev_accuracy2 <= 1.0
            assert 0.0 <= rec.dev_accuracy3 <= 1.0
            assert rec.loss.total >= 0.0
            assert rec.loss.counts[0] + rec.loss.counts[1] == len(train_set.comparisons)

    def test_all_tie_training_without_ties_rejected(self):
        items = [Item(id=f"i{k}", features=[float(k), 0.0]) for k in range(4)]
        comps = [
            Comparison(left_id="i0", right_id="i1", outcome=0),
            Comparison(left_id="i2", right_id="i3", outcome=0),
        ]
        ds = make_dataset(items, comps)
        with pytest.raises(ValidationError, match="empty"):
            train(ds, ds, _small_config(use_ties=False))

    def test_patience_validated(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


class TestDeterminism:
    def test_bit_identical_reruns(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        cfg = _small_config()
        params_a, history_a = train(train_set, dev_set, cfg)
        params_b, history_b = train(train_set, dev_set, cfg)
        for a, b in zip(params_a.parameter_arrays(), params_b.parameter_arrays()):
            assert np.array_equal(a, b)
        assert history_a == history_b

    def test_seed_changes_run(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        params_a, _ = train(train_set, dev_set, _small_config(hyper_kwargs={"seed": 1}))
        params_b, _ = train(train_set, dev_set, _small_config(hyper_kwargs={"seed": 2}))
        assert any(
            not np.array_equal(a, b)
            for a, b in zip(params_a.parameter_arrays(), params_b.parameter_arrays())
        )

    def test_swap_augmentation_changes_run(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        params_a, _ = train(train_set, dev_set, _small_config(swap_augmentation=True))
        params_b, _ = train(train_set, dev_set, _small_config(swap_augmentation=False))
        assert any(
            not np.array_equal(a, b)
            for a, b in zip(params_a.parameter_arrays(), params_b.parameter_arrays())
        )


class TestEarlyStopping:
    def test_frozen_model_stops_after_patience(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        # A vanishing learning rate freezes dev accuracy, so the run stops
        # after the first epoch plus `patience` non-improving epochs.
        cfg = _small_config(
            patience=2, hyper_kwargs={"learning_rate": 1e-12, "max_epochs": 20}
        )
        _, history = train(train_set, dev_set, cfg)
        assert len(history) == 3

    def test_returns_earliest_best_epoch_params(self, separable_splits):
        train_set, dev_set, _ = separable_splits
        cfg = _small_config(patience=50, hyper_kwargs={"max_epochs": 8})
        full_params, history = train(train_set, dev_set, cfg)
        accs = [rec.dev_accuracy2 for rec in history]
        best_epoch = accs.index(max(accs))

        # Epoch shuffles are drawn sequentially from one stream, so a run
        # truncated right after the best epoch reproduces it bit for bit.
        truncated_cfg = _small_config(
            patience=50, hyper_kwargs={"max_epochs": best_epoch + 1}
        )
        truncated_params, _ = train(train_set, dev_set, truncated_cfg)
        for a, b in zip(full_params.parameter_arrays(), truncated_params.parameter_arrays()):
            assert np.array_equal(a, b)


class TestTieAblation:
    def test_no_ties_equals_prefiltered_dataset(self):
        ds = _separable_dataset(seed=5, tie_band=0.8)
        assert ds.tie_fraction() > 0.1
        train_all, dev, _ = split(ds, SplitSpec(seed=1))
        filtered = make_dataset(
            train_all.items, [c for c in train_all.comparisons if c.outcome != 0]
        )
        cfg = _small_config(use_ties=False)
        params_a, hist_a = train(train_all, dev, cfg)
        params_b, hist_b = train(filtered, dev, _small_config(use_ties=True))
        for a, b in zip(params_a.parameter_arrays(), params_b.parameter_arrays()):
            assert np.array_equal(a, b)
        assert hist_a == hist_b

    def test_tie_count_zero_without_ties(self):
        ds = _separable_dataset(seed=5, tie_band=0.8)
        train_set, dev, _ = split(ds, SplitSpec(seed=1))
        _, history = train(train_set, dev, _small_config(use_ties=False))
        assert all(rec.loss.counts[1] == 0 for rec in history)
        assert all(rec.loss.tie == 0.0 for rec in history)


class TestGammaSweep:
    def test_rows_and_determinism(self, tmp_path):
        ds = _separable_dataset(seed=7, n_comps=120, tie_band=0.5)
        tr, dev, te = split(ds, SplitSpec(seed=2))
        cfg = _small_config(hyper_kwargs={"max_epochs": 2})
        rows = sweep_gamma(tr, dev, te, [0.1, 0.1, 0.4], cfg)
        assert [r.gamma for r in rows] == [0.1, 0.1, 0.4]
        # duplicated margin -> identical training run -> identical row
        assert rows[0] == rows[1]
        for r in rows:
            assert 0.0 <= r.accuracy3 <= 1.0
            assert r.tie_recall is None or 0.0 <= r.tie_recall <= 1.0

        out = tmp_path / "sweep.csv"
        sweep_to_csv(rows, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == (
            "gamma,accuracy2,accuracy3,misclassified_loss,"
            "tie_recall,mean_abs_diff_tie,mean_abs_diff_nontie"
        )
        assert len(lines) == 4

    def test_tie_columns_none_without_test_ties(self):
        ds = _separable_dataset(seed=8, n_comps=80)
        tr, dev, te = split(ds, SplitSpec(seed=2))
        assert all(c.outcome != 0 for c in te.comparisons)
        rows = sweep_gamma(tr, dev, te, [0.2], _small_config(hyper_kwargs={"max_epochs": 1}))
        assert rows[0].tie_recall is None
        assert rows[0].mean_abs_diff_tie is None

    def test_rejects_bad_gamma_lists(self, separable_splits):
        tr, dev, te = separable_splits
        cfg = _small_config()
        with pytest.raises(ValueError):
            sweep_gamma(tr, dev, te, [], cfg)
        with pytest.raises(ValueError):
            sweep_gamma(tr, dev, te, [0.4, 0.1], cfg)


class TestHistoryCsv:
    def test_roundtrips_through_repr(self, tmp_path, separable_splits):
        train_set, dev_set, _ = separable_splits
        _, history = train(train_set, dev_set, _small_config(hyper_kwargs={"max_epochs": 2}))
        path = tmp_path / "history.csv"
        history_to_csv(history, path)
        import csv

        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(history)
        for rec, row in zip(history, rows):
            assert int(row["epoch"]) == rec.epoch
            assert float(row["loss_total"]) == rec.loss.total
            assert float(row["dev_accuracy2"]) == rec.dev_accuracy2
            assert float(row["effective_lr"]) == rec.effective_lr


class TestMixDatasets:
    def _pair(self, n_real=10, n_synth=40):
        real = _separable_dataset(seed=11, n_items=8, n_comps=n_real)
        synth = _separable_dataset(seed=12, n_items=12, n_comps=n_synth)
        return real, synth

    def test_ratio_one_doubles_comparisons(self):
        real, synth = self._pair(n_real=10, n_synth=40)
        mixed = mix_datasets(real, synth, ratio=1.0, seed=0)
        assert len(mixed.comparisons) == 20
        assert len(mixed.items) == 8 + 12

    def test_sample_size_rounding(self):
        real, synth = self._pair(n_real=10, n_synth=40)
        mixed = mix_datasets(real, synth, ratio=0.25, seed=0)
        synth_comps = [c for c in mixed.comparisons if c.left_id.startswith("synth/")]
        assert len(synth_comps) == round(0.25 * 10)

    def test_namespaces_disjoint(self):
        real, synth = self._pair()
        mixed = mix_datasets(real, synth, ratio=0.5, seed=1)
        prefixes = {i.id.split("/", 1)[0] for i in mixed.items}
        assert prefixes == {"real", "synth"}
        for c in mixed.comparisons:
            left = c.left_id.split("/", 1)[0]
            right = c.right_id.split("/", 1)[0]
            assert left == right  # comparisons never cross the namespaces

    def test_deterministic_sampling(self):
        real, synth = self._pair()
        a = mix_datasets(real, synth, ratio=0.5, seed=3)
        b = mix_datasets(real, synth, ratio=0.5, seed=3)
        c = mix_datasets(real, synth, ratio=0.5, seed=4)
        assert a == b
        assert a != c

    def test_rejects_bad_inputs(self):
        real, synth = self._pair()
        with pytest.raises(ValueError):
            mix_datasets(real, synth, ratio=0.0, seed=0)
        with pytest.raises(ValueError, match="synthetic"):
            mix_datasets(real, synth, ratio=10.0, seed=0)
        narrow = make_dataset([Item(id="n", features=[1.0])], [])
        with pytest.raises(ValidationError, match="dimensions"):
            mix_datasets(real, narrow, ratio=0.5, seed=0)

    def test_mixed_dataset_trains(self):
        real, synth = self._pair(n_real=30, n_synth=60)
        mixed = mix_datasets(real, synth, ratio=1.0, seed=5)
        tr, dev, _ = split(mixed, SplitSpec(seed=0))
        params, history = train(tr, dev, _small_config(hyper_kwargs={"max_epochs": 2}))
        assert len(history) >= 1
        assert set(score_items(params, mixed.items)) == {i.id for i in mixed.items}
