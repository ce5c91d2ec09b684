"""Dataset generation, CSV round trips, fold plans, splits, and batching."""

import json

import numpy as np
import pytest
from scipy import stats

from imprintnet.data import (CsvParseError, DataError, Dataset, FoldPlan,
                             StratificationError, SyntheticSpec, load_csv,
                             oversample_batches, save_csv, select_nshot,
                             shuffled_batches, stratified_kfold, synth_generate,
                             train_val_split)


class TestDataset:
    def test_basic_properties(self):
        d = Dataset(features=np.zeros((5, 3)), labels=np.array([0, 0, 1, 1, 2]),
                    class_names=("a", "b", "c"))
        assert len(d) == 5
        assert d.num_examples == 5
        assert d.num_classes == 3
        assert d.input_dim == 3

    def test_rejects_float_labels(self):
        with pytest.raises(DataError, match="integers"):
            Dataset(features=np.zeros((2, 2)), labels=np.array([0.0, 1.0]),
                    class_names=("a", "b"))

    def test_rejects_misaligned_rows(self):
        with pytest.raises(DataError):
            Dataset(features=np.zeros((3, 2)), labels=np.array([0, 1]),
                    class_names=("a", "b"))

    def test_rejects_empty(self):
        with pytest.raises(DataError, match="empty"):
            Dataset(features=np.zeros((0, 2)), labels=np.zeros(0, dtype=int),
                    class_names=("a",))

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataError, match=r"\[0, 2\)"):
            Dataset(features=np.zeros((2, 2)), labels=np.array([0, 2]),
                    class_names=("a", "b"))

    def test_rejects_unused_class(self):
        with pytest.raises(DataError, match="'b' has no examples"):
            Dataset(features=np.zeros((2, 2)), labels=np.array([0, 0]),
                    class_names=("a", "b"))


class TestSyntheticSpec:
    def test_default_geometry(self):
        spec = SyntheticSpec()
        means = spec.class_means()
        assert means.shape == (3, spec.input_dim)
        assert np.all(means[0] == 0.0)
        assert means[1, 0] == spec.base_separation
        assert np.all(means[1, 1:] == 0.0)
        # The rare class sits off the second base class, pulled diagonally.
        reach = spec.novel_affinity * spec.novel_offset_scale / np.sqrt(2.0)
        np.testing.assert_allclose(means[2, 0], spec.base_separation + reach)
        np.testing.assert_allclose(means[2, 1], reach)
        assert np.all(means[2, 2:] == 0.0)

    def test_zero_affinity_collapses_onto_second_base_class(self):
        spec = SyntheticSpec(novel_affinity=0.0)
        means = spec.class_means()
        assert np.array_equal(means[2], means[1])

    def test_novel_class_is_the_last(self):
        assert SyntheticSpec().novel_class == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(input_dim=1)
        with pytest.raises(ValueError):
            SyntheticSpec(class_counts=(10, 10))
        with pytest.raises(ValueError):
            SyntheticSpec(class_counts=(10, 10, 0))
        with pytest.raises(ValueError):
            SyntheticSpec(class_stds=(1.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            SyntheticSpec(novel_affinity=1.5)
        with pytest.raises(ValueError):
            SyntheticSpec(class_names=("x", "x", "y"))

    def test_to_dict_tags_the_kind(self):
        assert SyntheticSpec().to_dict()["kind"] == "synthetic"


class TestSynthGenerate:
    def test_counts_and_shapes(self):
        spec = SyntheticSpec(input_dim=4, class_counts=(30, 20, 10))
        data = synth_generate(spec, seed=0)
        assert data.features.shape == (60, 4)
        assert np.array_equal(np.bincount(data.labels), [30, 20, 10])
        assert data.class_names == spec.class_names

    def test_seed_determinism(self):
        spec = SyntheticSpec(input_dim=4, class_counts=(30, 20, 10))
        a = synth_generate(spec, seed=5)
        b = synth_generate(spec, seed=5)
        c = synth_generate(spec, seed=6)
        assert np.array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)

    def test_clusters_sit_near_their_means(self):
        spec = SyntheticSpec(input_dim=8, class_counts=(400, 400, 400))
        data = synth_generate(spec, seed=1)
        means = spec.class_means()
        for c in range(3):
            emp = data.features[data.labels == c].mean(axis=0)
            # Standard error is 1/sqrt(400) = 0.05 per coordinate.
            assert np.abs(emp - means[c]).max() < 0.25

    def test_unit_spread_per_class(self):
        spec = SyntheticSpec(input_dim=6, class_counts=(500, 500, 500))
        data = synth_generate(spec, seed=2)
        for c in range(3):
            stds = data.features[data.labels == c].std(axis=0)
            assert np.all(np.abs(stds - 1.0) < 0.15)


class TestCsvRoundTrip:
    def test_save_load_is_lossless(self, tmp_path):
        spec = SyntheticSpec(input_dim=3, class_counts=(8, 6, 4))
        data = synth_generate(spec, seed=3)
        path = tmp_path / "data.csv"
        save_csv(data, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.features, data.features)
        assert np.array_equal(loaded.labels, data.labels)
        assert loaded.class_names == data.class_names

    def test_header_names_every_feature(self, tmp_path):
        spec = SyntheticSpec(input_dim=3, class_counts=(2, 2, 2))
        path = tmp_path / "data.csv"
        save_csv(synth_generate(spec, seed=4), path)
        header = path.read_text().splitlines()[0]
        assert header == "label,f0,f1,f2"

    def test_classes_numbered_by_first_appearance(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0\nzebra,1.0\nape,2.0\nzebra,3.0\n")
        data = load_csv(path)
        assert data.class_names == ("zebra", "ape")
        assert np.array_equal(data.labels, [0, 1, 0])

    def test_bad_float_reports_line_number(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0\na,1.0\na,oops\n")
        with pytest.raises(CsvParseError, match="line 3"):
            load_csv(path)

    def test_wrong_field_count_reports_line_number(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0,f1\na,1.0,2.0\na,1.0\n")
        with pytest.raises(CsvParseError, match="line 3"):
            load_csv(path)

    def test_header_only_file_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0\n")
        with pytest.raises(CsvParseError, match="no data rows"):
            load_csv(path)


class TestStratifiedKfold:
    def labels(self, counts, seed=0):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(len(counts)), counts)
        return y[rng.permutation(y.size)]

    def test_folds_partition_every_index_exactly_once(self):
        y = self.labels((40, 25, 11))
        plan = stratified_kfold(y, k=5, seed=1)
        combined = np.concatenate(plan.folds)
        assert np.array_equal(np.sort(combined), np.arange(y.size))

    def test_per_class_fold_counts_are_balanced(self):
        y = self.labels((43, 26, 11))
        plan = stratified_kfold(y, k=5, seed=2)
        for c, total in enumerate((43, 26, 11)):
            per_fold = [int((y[f] == c).sum()) for f in plan.folds]
            assert sum(per_fold) == total
            assert max(per_fold) - min(per_fold) <= 1

    def test_train_and_test_indices_complement(self):
        y = self.labels((20, 15, 10))
        plan = stratified_kfold(y, k=3, seed=3)
        for fold in range(3):
            train = plan.train_indices(fold)
            test = plan.test_indices(fold)
            assert np.intersect1d(train, test).size == 0
            assert train.size + test.size == y.size

    def test_deterministic_per_seed(self):
        y = self.labels((20, 15, 10))
        a = stratified_kfold(y, k=4, seed=7)
        b = stratified_kfold(y, k=4, seed=7)
        c = stratified_kfold(y, k=4, seed=8)
        assert all(np.array_equal(x, z) for x, z in zip(a.folds, b.folds))
        assert any(not np.array_equal(x, z) for x, z in zip(a.folds, c.folds))

    def test_class_smaller_than_k_is_an_error(self):
        y = self.labels((20, 15, 3))
        with pytest.raises(StratificationError, match="fewer than k=5"):
            stratified_kfold(y, k=5, seed=0)

    def test_k_below_two_is_an_error(self):
        with pytest.raises(DataError):
            stratified_kfold(self.labels((5, 5, 5)), k=1, seed=0)

    def test_plan_round_trips_through_json(self, tmp_path):
        y = self.labels((20, 15, 10))
        plan = stratified_kfold(y, k=4, seed=9)
        path = tmp_path / "folds.json"
        plan.save(path)
        loaded = FoldPlan.load(path)
        assert loaded.k == plan.k
        assert loaded.seed == plan.seed
        assert all(np.array_equal(a, b) for a, b in zip(plan.folds, loaded.folds))

    def test_plan_version_check(self, tmp_path):
        y = self.labels((10, 10, 10))
        path = tmp_path / "folds.json"
        stratified_kfold(y, k=2, seed=0).save(path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="version"):
            FoldPlan.load(path)


class TestTrainValSplit:
    def test_split_partitions_the_input(self):
        rng = np.random.default_rng(4)
        indices = np.sort(rng.choice(200, size=60, replace=False))
        labels = np.zeros(200, dtype=np.int64)
        labels[indices[20:40]] = 1
        labels[indices[40:]] = 2
        train, val = train_val_split(indices, labels, val_frac=0.2, seed=0)
        merged = np.sort(np.concatenate([train, val]))
        assert np.array_equal(merged, indices)
        assert np.intersect1d(train, val).size == 0

    def test_val_size_rounds_half_up(self):
        # 10 examples at 0.25 -> 2.5 rounds to 3; at 0.1 -> 1.
        labels = np.zeros(10, dtype=np.int64)
        indices = np.arange(10)
        _, val = train_val_split(indices, labels, val_frac=0.25, seed=1)
        assert val.size == 3
        _, val = train_val_split(indices, labels, val_frac=0.1, seed=1)
        assert val.size == 1

    def test_singleton_class_stays_in_train(self):
        labels = np.array([0, 0, 0, 0, 1], dtype=np.int64)
        train, val = train_val_split(np.arange(5), labels, val_frac=0.5, seed=2)
        assert 4 in train
        assert np.all(labels[val] == 0)

    def test_every_class_keeps_a_training_example(self):
        labels = np.array([0, 0, 1, 1], dtype=np.int64)
        train, val = train_val_split(np.arange(4), labels, val_frac=0.9, seed=3)
        assert set(labels[train]) == {0, 1}

    def test_outputs_are_sorted(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, size=50)
        train, val = train_val_split(np.arange(50), labels, val_frac=0.2, seed=4)
        assert np.all(np.diff(train) > 0)
        assert np.all(np.diff(val) > 0)

    def test_bad_fraction_rejected(self):
        labels = np.zeros(4, dtype=np.int64)
        for frac in (0.0, 1.0, -0.1):
            with pytest.raises(DataError):
                train_val_split(np.arange(4), labels, val_frac=frac, seed=0)


class TestSelectNshot:
    def setup_method(self):
        self.labels = np.array([0, 1, 2, 2, 2, 2, 0, 2], dtype=np.int64)
        self.pool = np.arange(8)

    def test_picks_only_novel_training_rows(self):
        shots = select_nshot(self.pool, self.labels, novel_class=2, n=3, seed=0)
        assert shots.size == 3
        assert np.all(self.labels[shots] == 2)
        assert np.all(np.diff(shots) > 0)

    def test_respects_the_candidate_pool(self):
        pool = np.array([2, 3, 4])  # excludes novel rows 5 and 7
        shots = select_nshot(pool, self.labels, novel_class=2, n=2, seed=1)
        assert set(shots).issubset({2, 3, 4})

    def test_deterministic_per_seed(self):
        a = select_nshot(self.pool, self.labels, 2, 3, seed=5)
        b = select_nshot(self.pool, self.labels, 2, 3, seed=5)
        assert np.array_equal(a, b)

    def test_requesting_more_than_available_is_an_error(self):
        with pytest.raises(DataError, match="only 5 are available"):
            select_nshot(self.pool, self.labels, 2, 6, seed=0)

    def test_n_below_one_is_an_error(self):
        with pytest.raises(DataError):
            select_nshot(self.pool, self.labels, 2, 0, seed=0)


class TestOversampleBatches:
    def test_batches_have_requested_shape(self):
        labels = np.repeat([0, 1, 2], [50, 30, 5])
        stream = oversample_batches(np.arange(85), labels, batch_size=16,
                                    num_batches=4, seed=0)
        batches = list(stream)
        assert len(batches) == 4
        assert all(b.shape == (16,) for b in batches)

    def test_emits_only_allowed_indices(self):
        labels = np.repeat([0, 1, 2], [50, 30, 5])
        allowed = np.concatenate([np.arange(0, 40), np.arange(50, 85)])
        stream = oversample_batches(allowed, labels, batch_size=32,
                                    num_batches=20, seed=1)
        emitted = np.concatenate(list(stream))
        assert set(emitted).issubset(set(allowed))

    def test_class_frequencies_are_uniform(self):
        # 500x the smallest class's share of the raw data would fail this
        # instantly; uniform oversampling must hold each class near 1/3.
        labels = np.repeat([0, 1, 2], [100, 60, 5])
        stream = oversample_batches(np.arange(165), labels, batch_size=30,
                                    num_batches=2000, seed=2)
        counts = np.zeros(3)
        for batch in stream:
            counts += np.bincount(labels[batch], minlength=3)
        _, p = stats.chisquare(counts)
        assert p > 1e-3

    def test_restriction_to_given_classes(self):
        labels = np.repeat([0, 1, 2], [10, 10, 10])
        stream = oversample_batches(np.arange(30), labels, batch_size=8,
                                    num_batches=10, seed=3, classes=[0, 2])
        emitted = np.concatenate(list(stream))
        assert set(labels[emitted]).issubset({0, 2})

    def test_class_without_pool_rows_is_an_error(self):
        labels = np.repeat([0, 1, 2], [10, 10, 10])
        with pytest.raises(DataError, match="no examples to oversample"):
            oversample_batches(np.arange(10), labels, batch_size=4,
                               num_batches=1, seed=0, classes=[0, 1])

    def test_empty_pool_is_an_error(self):
        with pytest.raises(DataError):
            oversample_batches(np.array([], dtype=np.int64),
                               np.zeros(4, dtype=np.int64), 4, 1, seed=0)

    def test_deterministic_per_seed(self):
        labels = np.repeat([0, 1, 2], [10, 10, 10])
        a = list(oversample_batches(np.arange(30), labels, 8, 5, seed=9))
        b = list(oversample_batches(np.arange(30), labels, 8, 5, seed=9))
        assert all(np.array_equal(x, z) for x, z in zip(a, b))


class TestShuffledBatches:
    def test_one_epoch_covers_every_index_once(self):
        pool = np.arange(10, 30)
        stream = shuffled_batches(pool, batch_size=7, num_batches=3, seed=0)
        emitted = np.concatenate(list(stream))
        assert np.array_equal(np.sort(emitted), pool)

    def test_final_short_batch_then_reshuffle(self):
        pool = np.arange(10)
        stream = shuffled_batches(pool, batch_size=4, num_batches=6, seed=1)
        sizes = [b.size for b in stream]
        assert sizes == [4, 4, 2, 4, 4, 2]

    def test_epochs_are_reshuffled(self):
        pool = np.arange(64)
        stream = shuffled_batches(pool, batch_size=64, num_batches=2, seed=2)
        first, second = list(stream)
        assert not np.array_equal(first, second)
        assert np.array_equal(np.sort(first), np.sort(second))
