"""Experiment protocol: fold contexts, both model arms, sweeps, aggregation.

Everything here runs on a deliberately tiny configuration (small blobs, one
or two epochs, three folds) so the full protocol machinery is exercised in
seconds; statistical quality of the defaults is covered elsewhere.
"""

import csv
import json

import numpy as np
import pytest

from imprintnet.data import SyntheticSpec
from imprintnet.harness import (MODEL_IMPRINTED, MODEL_JOINT, SUMMARY_COLUMNS,
                                CsvSource, ExperimentConfig, aggregate_folds,
                                build_fold_plan, load_dataset,
                                make_fold_context, novel_sensitivity_by_seed,
                                nshot_sweep, resolve_novel_class,
                                run_experiment, run_imprinted_pipeline,
                                run_joint_pipeline, train_base_model,
                                write_results, write_summary_csv)


def tiny_config(**overrides):
    kwargs = dict(
        epochs=2,
        batch_size=32,
        k_folds=3,
        n_shots=(2, "all"),
        seeds=(0,),
        hidden_dims=(8,),
        embedding_dim=8,
        data=SyntheticSpec(input_dim=4, class_counts=(45, 36, 12)),
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


class TestExperimentConfig:
    def test_defaults_match_protocol(self):
        config = ExperimentConfig()
        assert config.epochs == 40
        assert config.base_lr == 1e-3
        assert (config.lr_step, config.lr_decay) == (4, 0.94)
        assert config.lr_multiplier == 10.0
        assert (config.momentum, config.weight_decay) == (0.9, 1e-4)
        assert config.k_folds == 10
        assert config.val_frac == 0.1
        assert config.n_shots == (20, 50, 100, 200, 300, "all")
        assert config.oversample is True

    def test_fingerprint_tracks_content(self):
        a = tiny_config()
        b = tiny_config()
        c = tiny_config(epochs=3)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_to_dict_round_trips_through_json(self):
        doc = json.loads(json.dumps(tiny_config().to_dict()))
        assert doc["k_folds"] == 3
        assert doc["data"]["kind"] == "synthetic"


class TestDatasetLoading:
    def test_synthetic_data_varies_with_master_seed(self):
        config = tiny_config()
        a = load_dataset(config, master_seed=0)
        b = load_dataset(config, master_seed=0)
        c = load_dataset(config, master_seed=1)
        assert np.array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)

    def test_csv_source_is_seed_independent(self, tmp_path):
        from imprintnet.data import save_csv, synth_generate

        data = synth_generate(SyntheticSpec(input_dim=4,
                                            class_counts=(12, 10, 8)), seed=3)
        path = tmp_path / "data.csv"
        save_csv(data, path)
        config = tiny_config(data=CsvSource(path=str(path)))
        a = load_dataset(config, master_seed=0)
        b = load_dataset(config, master_seed=1)
        assert np.array_equal(a.features, b.features)

    def test_novel_class_defaults(self, tmp_path):
        config = tiny_config()
        data = load_dataset(config, 0)
        assert resolve_novel_class(data, config) == 2

    def test_novel_class_by_name_and_index(self):
        config = tiny_config(novel_class="base_a")
        data = load_dataset(config, 0)
        assert resolve_novel_class(data, config) == 0
        config = tiny_config(novel_class=1)
        assert resolve_novel_class(data, config) == 1

    def test_unknown_novel_class_rejected(self):
        data = load_dataset(tiny_config(), 0)
        with pytest.raises(ValueError):
            resolve_novel_class(data, tiny_config(novel_class="nope"))
        with pytest.raises(ValueError):
            resolve_novel_class(data, tiny_config(novel_class=5))


class TestFoldContext:
    def test_partitions_are_disjoint_and_complete(self):
        config = tiny_config()
        data = load_dataset(config, 0)
        plan = build_fold_plan(data, config, 0)
        for fold in range(config.k_folds):
            ctx = make_fold_context(data, plan, fold, config, 0)
            merged = np.concatenate([ctx.train_idx, ctx.val_idx, ctx.test_idx])
            assert np.array_equal(np.sort(merged), np.arange(len(data)))

    def test_test_fold_matches_the_plan(self):
        config = tiny_config()
        data = load_dataset(config, 0)
        plan = build_fold_plan(data, config, 0)
        ctx = make_fold_context(data, plan, 1, config, 0)
        assert np.array_equal(np.sort(ctx.test_idx), np.sort(plan.folds[1]))

    def test_resolve_n(self):
        config = tiny_config()
        data = load_dataset(config, 0)
        plan = build_fold_plan(data, config, 0)
        ctx = make_fold_context(data, plan, 0, config, 0)
        assert ctx.resolve_n(3) == 3
        assert ctx.resolve_n("all") == ctx.novel_train_count()
        assert ctx.novel_train_count() > 0


class TestPipelines:
    def setup_method(self):
        self.config = tiny_config()
        self.data = load_dataset(self.config, 0)
        self.plan = build_fold_plan(self.data, self.config, 0)
        self.ctx = make_fold_context(self.data, self.plan, 0, self.config, 0)
        self.base = train_base_model(self.ctx, self.config, 0)

    def test_base_model_knows_only_base_classes(self):
        assert np.array_equal(self.base.classes_, [0, 1])
        assert self.base.params_.spec.head == "cosine"

    def test_imprinted_fragment_structure(self):
        frag = run_imprinted_pipeline(self.data, 0, 2, self.config, 0,
                                      ctx=self.ctx, base=self.base)
        assert frag["model"] == MODEL_IMPRINTED
        assert frag["fold"] == 0
        assert frag["n"] == "2"
        assert frag["n_resolved"] == 2
        assert len(frag["nshot_indices"]) == 2
        assert len(frag["sensitivity"]) == 3
        assert len(frag["confusion"]) == 3
        assert "pre_finetune" in frag
        assert 0.0 <= frag["accuracy"] <= 1.0

    def test_joint_fragment_structure(self):
        frag = run_joint_pipeline(self.data, 0, 2, self.config, 0, ctx=self.ctx)
        assert frag["model"] == MODEL_JOINT
        assert "pre_finetune" not in frag
        assert len(frag["ppv"]) == 3

    def test_both_arms_see_identical_shots(self):
        a = run_imprinted_pipeline(self.data, 0, 2, self.config, 0,
                                   ctx=self.ctx, base=self.base)
        b = run_joint_pipeline(self.data, 0, 2, self.config, 0, ctx=self.ctx)
        assert a["nshot_indices"] == b["nshot_indices"]

    def test_shots_avoid_validation_and_test_rows(self):
        for n in (2, "all"):
            frag = run_imprinted_pipeline(self.data, 0, n, self.config, 0,
                                          ctx=self.ctx, base=self.base)
            shots = np.array(frag["nshot_indices"])
            assert np.intersect1d(shots, self.ctx.val_idx).size == 0
            assert np.intersect1d(shots, self.ctx.test_idx).size == 0
            assert np.all(self.data.labels[shots] == 2)

    def test_pipeline_without_prebuilt_context_matches(self):
        a = run_imprinted_pipeline(self.data, 0, 2, self.config, 0,
                                   ctx=self.ctx, base=self.base)
        b = run_imprinted_pipeline(self.data, 0, 2, self.config, 0)
        assert a["confusion"] == b["confusion"]
        assert a["val_accuracy"] == b["val_accuracy"]
        assert a["nshot_indices"] == b["nshot_indices"]


class TestSweep:
    def test_fragment_grid_is_complete(self):
        config = tiny_config()
        data = load_dataset(config, 0)
        fragments = nshot_sweep(data, config, 0)
        assert len(fragments) == 2 * len(config.n_shots) * config.k_folds
        keys = {(f["model"], f["n"], f["fold"]) for f in fragments}
        assert len(keys) == len(fragments)

    def test_oversized_n_is_rejected_up_front(self):
        config = tiny_config(n_shots=(500,))
        data = load_dataset(config, 0)
        with pytest.raises(ValueError, match="exceeds the"):
            nshot_sweep(data, config, 0)

    def test_parallel_sweep_matches_serial(self):
        config = tiny_config(n_shots=(2,))
        data = load_dataset(config, 0)
        serial = nshot_sweep(data, config, 0, jobs=1)
        parallel = nshot_sweep(data, config, 0, jobs=2)
        assert json.dumps(serial, sort_keys=True) == json.dumps(parallel,
                                                                sort_keys=True)


class TestAggregation:
    def test_aggregate_folds_matches_manual_two_pass(self):
        rng = np.random.default_rng(70)
        fragments = []
        for _ in range(5):
            sens = [float(rng.random()), None, float(rng.random())]
            prec = [float(rng.random())] * 3
            fragments.append({
                "sensitivity": sens,
                "ppv": prec,
                "macro_sensitivity": {"mean": float(rng.random()), "defined": 2},
                "macro_ppv": {"mean": float(rng.random()), "defined": 3},
                "accuracy": float(rng.random()),
            })
        agg = aggregate_folds(fragments, num_classes=3)
        assert agg["folds"] == 5
        assert agg["sensitivity"][1]["defined_folds"] == 0
        assert agg["sensitivity"][1]["mean"] is None
        values = [f["sensitivity"][0] for f in fragments]
        assert agg["sensitivity"][0]["mean"] == pytest.approx(np.mean(values))
        assert agg["sensitivity"][0]["std"] == pytest.approx(
            np.std(values, ddof=1))
        accs = [f["accuracy"] for f in fragments]
        assert agg["accuracy"]["mean"] == pytest.approx(np.mean(accs))


class TestRunExperiment:
    def test_results_document_shape(self):
        config = tiny_config(seeds=(0, 1), n_shots=(2,))
        results = run_experiment(config)
        assert results["format_version"] == 1
        assert results["config_fingerprint"] == config.fingerprint()
        assert results["novel_class"] == 2
        assert set(results["runs"]) == {"0", "1"}
        for seed_runs in results["runs"].values():
            assert set(seed_runs) == {MODEL_IMPRINTED, MODEL_JOINT}
            for cells in seed_runs.values():
                assert set(cells) == {"2"}
                assert set(cells["2"]) == {"0", "1", "2"}
        assert set(results["aggregates"][MODEL_IMPRINTED]) == {"2"}

    def test_progress_callback_fires_per_seed(self):
        lines = []
        run_experiment(tiny_config(seeds=(0, 1), n_shots=(2,)),
                       progress=lines.append)
        assert len(lines) == 2
        assert "seed 0" in lines[0]

    def test_novel_sensitivity_by_seed_matches_fragments(self):
        config = tiny_config(seeds=(0, 1), n_shots=(2,))
        results = run_experiment(config)
        by_seed = novel_sensitivity_by_seed(results, MODEL_IMPRINTED, 2)
        for seed in ("0", "1"):
            cells = results["runs"][seed][MODEL_IMPRINTED]["2"]
            values = [f["sensitivity"][2] for f in cells.values()
                      if f["sensitivity"][2] is not None]
            assert by_seed[seed] == pytest.approx(np.mean(values))


class TestResultWriters:
    def make_results(self):
        return run_experiment(tiny_config(n_shots=(2,)))

    def test_write_results_is_deterministic(self, tmp_path):
        results = self.make_results()
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_results(results, a)
        write_results(self.make_results(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_summary_rows_cover_the_grid(self, tmp_path):
        results = self.make_results()
        path = tmp_path / "summary.csv"
        write_summary_csv(results, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == SUMMARY_COLUMNS
        # 2 models x 1 n x (3 classes + macro) x 2 metrics
        assert len(rows) - 1 == 2 * 1 * 4 * 2
        classes = {r[2] for r in rows[1:]}
        assert classes == {"base_a", "base_b", "novel", "macro"}

    def test_summary_values_parse_back_exactly(self, tmp_path):
        results = self.make_results()
        path = tmp_path / "summary.csv"
        write_summary_csv(results, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        novel_sens = next(r for r in rows[1:]
                          if r[0] == MODEL_IMPRINTED and r[2] == "novel"
                          and r[3] == "sensitivity")
        agg = results["aggregates"][MODEL_IMPRINTED]["2"]["sensitivity"][2]
        assert float(novel_sens[4]) == agg["mean"]
        assert int(novel_sens[6]) == agg["defined_folds"]
