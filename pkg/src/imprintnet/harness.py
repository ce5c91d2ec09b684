"""End-to-end evaluation protocol.

For each cross-validation fold: train a base model on the populous classes
only, imprint the scarce class from an n-shot subset, fine-tune on
everything, and separately train a joint model from scratch on the same
partitions. Both arms share the fold plan, the train/validation split, and
the exact n-shot subset, so their metrics are comparable row by row.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .data import (Dataset, FoldPlan, SyntheticSpec, load_csv, select_nshot,
                   stratified_kfold, synth_generate, train_val_split)
from .estimator import EmbeddingClassifier
from .metrics import (accuracy, confusion_matrix, macro_average, mean_std,
                      per_class_ppv, per_class_sensitivity)

RESULTS_VERSION = 1

MODEL_IMPRINTED = "imprinted"
MODEL_JOINT = "joint"

SUMMARY_COLUMNS = ["model", "n", "class", "metric", "mean", "std", "defined_folds"]


@dataclass(frozen=True)
class CsvSource:
    """Dataset loaded from a file; shared across seeds."""

    path: str

    def to_dict(self) -> dict:
        return {"kind": "csv", "path": self.path}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs besides the master seeds."""

    epochs: int = 40
    batch_size: int = 64
    base_lr: float = 1e-3
    lr_step: int = 4
    lr_decay: float = 0.94
    lr_multiplier: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    oversample: bool = True
    k_folds: int = 10
    val_frac: float = 0.1
    n_shots: tuple = (20, 50, 100, 200, 300, "all")
    seeds: tuple = (0,)
    hidden_dims: tuple = (64, 64)
    embedding_dim: int = 256
    joint_head_bias: bool = True
    novel_class: object = None  # index, name, or None for the last class
    data: object = field(default_factory=SyntheticSpec)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "lr_step": self.lr_step,
            "lr_decay": self.lr_decay,
            "lr_multiplier": self.lr_multiplier,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "oversample": self.oversample,
            "k_folds": self.k_folds,
            "val_frac": self.val_frac,
            "n_shots": list(self.n_shots),
            "seeds": list(self.seeds),
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "joint_head_bias": self.joint_head_bias,
            "novel_class": self.novel_class,
            "data": self.data.to_dict(),
        }

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def n_key(n) -> str:
    return "all" if n == "all" else str(int(n))


def load_dataset(config: ExperimentConfig, master_seed: int) -> Dataset:
    """The dataset a given master seed works on.

    Synthetic sources resample per seed (independent replicates); file
    sources return the same data for every seed.
    """
    if isinstance(config.data, SyntheticSpec):
        return synth_generate(config.data, seeding.derive_seed(master_seed, "data"))
    return load_csv(config.data.path)


def resolve_novel_class(dataset: Dataset, config: ExperimentConfig) -> int:
    """The scarce class index: configured by index or name, last by default."""
    spec = config.novel_class
    if spec is None:
        if isinstance(config.data, SyntheticSpec):
            return config.data.novel_class
        return dataset.num_classes - 1
    if isinstance(spec, str):
        if spec not in dataset.class_names:
            raise ValueError(f"novel_class '{spec}' not among {dataset.class_names}")
        return dataset.class_names.index(spec)
    index = int(spec)
    if not 0 <= index < dataset.num_classes:
        raise ValueError(f"novel_class index {index} outside [0, {dataset.num_classes})")
    return index


def build_fold_plan(dataset: Dataset, config: ExperimentConfig, master_seed: int) -> FoldPlan:
    return stratified_kfold(dataset.labels, config.k_folds,
                            seeding.derive_seed(master_seed, "folds"))


@dataclass
class FoldContext:
    """One fold's partitions, shared by both model arms."""

    dataset: Dataset
    fold: int
    novel_class: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def novel_train_count(self) -> int:
        return int(np.sum(self.dataset.labels[self.train_idx] == self.novel_class))

    def resolve_n(self, n) -> int:
        return self.novel_train_count() if n == "all" else int(n)


def make_fold_context(dataset: Dataset, plan: FoldPlan, fold: int,
                      config: ExperimentConfig, master_seed: int) -> FoldContext:
    test_idx = plan.test_indices(fold)
    rest = plan.train_indices(fold)
    train_idx, val_idx = train_val_split(
        rest, dataset.labels, config.val_frac,
        seeding.derive_seed(master_seed, "val", f"fold{fold}"),
    )
    return FoldContext(
        dataset=dataset,
        fold=fold,
        novel_class=resolve_novel_class(dataset, config),
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
    )


def _estimator(config: ExperimentConfig, head: str, seed: int) -> EmbeddingClassifier:
    return EmbeddingClassifier(
        hidden_dims=tuple(config.hidden_dims),
        embedding_dim=config.embedding_dim,
        head=head,
        head_bias=config.joint_head_bias,
        epochs=config.epochs,
        batch_size=config.batch_size,
        base_lr=config.base_lr,
        lr_step=config.lr_step,
        lr_decay=config.lr_decay,
        lr_multiplier=config.lr_multiplier,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        val_frac=config.val_frac,
        oversample=config.oversample,
        random_state=seed,
    )


def train_base_model(ctx: FoldContext, config: ExperimentConfig,
                     master_seed: int) -> EmbeddingClassifier:
    """Cosine-head model over the base classes only."""
    labels = ctx.dataset.labels
    features = ctx.dataset.features
    base_train = ctx.train_idx[labels[ctx.train_idx] != ctx.novel_class]
    base_val = ctx.val_idx[labels[ctx.val_idx] != ctx.novel_class]
    clf = _estimator(config, "cosine",
                     seeding.derive_seed(master_seed, "base", f"fold{ctx.fold}"))
    clf.fit(features[base_train], labels[base_train],
            X_val=features[base_val], y_val=labels[base_val])
    return clf


def _select_shots(ctx: FoldContext, config: ExperimentConfig, master_seed: int, n):
    """The n-shot subset for a fold; identical for both model arms."""
    resolved = ctx.resolve_n(n)
    return select_nshot(
        ctx.train_idx, ctx.dataset.labels, ctx.novel_class, resolved,
        seeding.derive_seed(master_seed, "nshot", f"fold{ctx.fold}", f"n{n_key(n)}"),
    ), resolved


def _finetune_indices(ctx: FoldContext, shots: np.ndarray) -> np.ndarray:
    labels = ctx.dataset.labels
    base_train = ctx.train_idx[labels[ctx.train_idx] != ctx.novel_class]
    return np.sort(np.concatenate([base_train, shots]))


def _evaluate(clf: EmbeddingClassifier, ctx: FoldContext) -> dict:
    features = ctx.dataset.features
    labels = ctx.dataset.labels
    cm = confusion_matrix(labels[ctx.test_idx], clf.predict(features[ctx.test_idx]),
                          ctx.dataset.num_classes)
    sens = per_class_sensitivity(cm)
    prec = per_class_ppv(cm)
    macro_sens, sens_defined = macro_average(sens)
    macro_prec, prec_defined = macro_average(prec)
    return {
        "confusion": cm.tolist(),
        "sensitivity": sens,
        "ppv": prec,
        "macro_sensitivity": {"mean": macro_sens, "defined": sens_defined},
        "macro_ppv": {"mean": macro_prec, "defined": prec_defined},
        "accuracy": accuracy(cm),
    }


def run_imprinted_pipeline(dataset: Dataset, fold: int, n, config: ExperimentConfig,
                           master_seed: int, plan: FoldPlan | None = None,
                           ctx: FoldContext | None = None,
                           base: EmbeddingClassifier | None = None) -> dict:
    """Base training, imprinting, fine-tuning, and test-fold evaluation.

    A prebuilt ``base`` model (from the same fold and seed) lets a sweep
    reuse one base training across every n.
    """
    if ctx is None:
        plan = plan or build_fold_plan(dataset, config, master_seed)
        ctx = make_fold_context(dataset, plan, fold, config, master_seed)
    if base is None:
        base = train_base_model(ctx, config, master_seed)
    shots, resolved = _select_shots(ctx, config, master_seed, n)

    clf = copy.deepcopy(base)
    clf.imprint(ctx.dataset.features[shots], ctx.novel_class)
    imprint_only = _evaluate(clf, ctx)

    ft_idx = _finetune_indices(ctx, shots)
    features, labels = ctx.dataset.features, ctx.dataset.labels
    clf.set_params(
        warm_start=True,
        random_state=seeding.derive_seed(master_seed, "finetune",
                                         f"fold{ctx.fold}", f"n{n_key(n)}"),
    )
    clf.fit(features[ft_idx], labels[ft_idx],
            X_val=features[ctx.val_idx], y_val=labels[ctx.val_idx])

    fragment = _evaluate(clf, ctx)
    fragment.update({
        "model": MODEL_IMPRINTED,
        "fold": ctx.fold,
        "n": n_key(n),
        "n_resolved": resolved,
        "novel_class": ctx.novel_class,
        "nshot_indices": shots.tolist(),
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
        "val_curve": clf.validation_scores_,
        "loss_curve": clf.train_losses_,
        "pre_finetune": imprint_only,
    })
    return fragment


def run_joint_pipeline(dataset: Dataset, fold: int, n, config: ExperimentConfig,
                       master_seed: int, plan: FoldPlan | None = None,
                       ctx: FoldContext | None = None) -> dict:
    """From-scratch linear-head model on the identical fold partitions."""
    if ctx is None:
        plan = plan or build_fold_plan(dataset, config, master_seed)
        ctx = make_fold_context(dataset, plan, fold, config, master_seed)
    shots, resolved = _select_shots(ctx, config, master_seed, n)
    ft_idx = _finetune_indices(ctx, shots)
    features, labels = ctx.dataset.features, ctx.dataset.labels

    clf = _estimator(config, "linear",
                     seeding.derive_seed(master_seed, "joint",
                                         f"fold{ctx.fold}", f"n{n_key(n)}"))
    clf.fit(features[ft_idx], labels[ft_idx],
            X_val=features[ctx.val_idx], y_val=labels[ctx.val_idx])

    fragment = _evaluate(clf, ctx)
    fragment.update({
        "model": MODEL_JOINT,
        "fold": ctx.fold,
        "n": n_key(n),
        "n_resolved": resolved,
        "novel_class": ctx.novel_class,
        "nshot_indices": shots.tolist(),
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
        "val_curve": clf.validation_scores_,
        "loss_curve": clf.train_losses_,
    })
    return fragment


def _sweep_fold(dataset: Dataset, config: ExperimentConfig, master_seed: int,
                plan: FoldPlan, fold: int) -> list:
    """Both arms, every n, for one fold; the base model is trained once."""
    ctx = make_fold_context(dataset, plan, fold, config, master_seed)
    base = train_base_model(ctx, config, master_seed)
    fragments = []
    for n in config.n_shots:
        fragments.append(run_imprinted_pipeline(dataset, fold, n, config,
                                                master_seed, ctx=ctx, base=base))
        fragments.append(run_joint_pipeline(dataset, fold, n, config,
                                            master_seed, ctx=ctx))
    return fragments


def _sweep_fold_star(args):
    return _sweep_fold(*args)


def nshot_sweep(dataset: Dataset, config: ExperimentConfig, master_seed: int,
                jobs: int = 1) -> list:
    """Every (model, n, fold) fragment for one master seed.

    Validates up front that each fold can supply the largest requested n.
    ``jobs`` > 1 runs folds in separate processes; results are identical
    either way.
    """
    plan = build_fold_plan(dataset, config, master_seed)
    resolve_novel_class(dataset, config)  # fail fast on a bad configuration
    numeric = [int(n) for n in config.n_shots if n != "all"]
    if numeric:
        for fold in range(plan.k):
            ctx = make_fold_context(dataset, plan, fold, config, master_seed)
            available = ctx.novel_train_count()
            if max(numeric) > available:
                raise ValueError(
                    f"n={max(numeric)} exceeds the {available} novel training "
                    f"examples in fold {fold}"
                )

    if jobs > 1:
        work = [(dataset, config, master_seed, plan, fold) for fold in range(plan.k)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_fold = list(pool.map(_sweep_fold_star, work))
    else:
        per_fold = [_sweep_fold(dataset, config, master_seed, plan, fold)
                    for fold in range(plan.k)]
    return [fragment for fold_fragments in per_fold for fragment in fold_fragments]


def aggregate_folds(fragments: list, num_classes: int) -> dict:
    """Mean/std (sample, ddof=1) of each metric across fragments.

    Undefined per-fold values are skipped; each entry reports how many
    folds contributed.
    """

    def stats(values) -> dict:
        mean, std, count = mean_std(values)
        return {"mean": mean, "std": std, "defined_folds": count}

    out = {"folds": len(fragments)}
    for metric in ("sensitivity", "ppv"):
        out[metric] = [stats([f[metric][c] for f in fragments])
                       for c in range(num_classes)]
        out[f"macro_{metric}"] = stats([f[f"macro_{metric}"]["mean"] for f in fragments])
    out["accuracy"] = stats([f["accuracy"] for f in fragments])
    return out


def run_experiment(config: ExperimentConfig, jobs: int = 1, progress=None) -> dict:
    """The full protocol over every configured seed, as one results document.

    The document is pure data derived from (config, seeds): rerunning the
    same configuration reproduces it byte for byte. ``progress``, when
    given, is called with a status line after each seed completes.
    """
    runs: dict = {}
    all_fragments: list = []
    class_names = None
    novel = None
    for master_seed in config.seeds:
        dataset = load_dataset(config, master_seed)
        if class_names is None:
            class_names = list(dataset.class_names)
            novel = resolve_novel_class(dataset, config)
        fragments = nshot_sweep(dataset, config, master_seed, jobs=jobs)
        if progress is not None:
            progress(f"seed {master_seed}: {len(fragments)} fragments")
        seed_runs: dict = {MODEL_IMPRINTED: {}, MODEL_JOINT: {}}
        for fragment in fragments:
            seed_runs[fragment["model"]].setdefault(fragment["n"], {})[
                str(fragment["fold"])] = fragment
        runs[str(master_seed)] = seed_runs
        all_fragments.extend(fragments)

    num_classes = len(class_names)
    aggregates: dict = {}
    for model in (MODEL_IMPRINTED, MODEL_JOINT):
        aggregates[model] = {}
        for n in config.n_shots:
            cell = [f for f in all_fragments
                    if f["model"] == model and f["n"] == n_key(n)]
            aggregates[model][n_key(n)] = aggregate_folds(cell, num_classes)

    return {
        "format_version": RESULTS_VERSION,
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(),
        "class_names": class_names,
        "novel_class": novel,
        "runs": runs,
        "aggregates": aggregates,
    }


def novel_sensitivity_by_seed(results: dict, model: str, n) -> dict:
    """Per-seed mean novel-class sensitivity across folds (None skipped)."""
    novel = results["novel_class"]
    out = {}
    for seed, models in results["runs"].items():
        fragments = models[model].get(n_key(n), {})
        values = [f["sensitivity"][novel] for f in fragments.values()]
        mean, _, _ = mean_std(values)
        out[seed] = mean
    return out


def write_results(results: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary_csv(results: dict, path: str) -> None:
    """One row per (model, n, class, metric) from the aggregates."""
    class_names = results["class_names"]
    n_keys = [n_key(n) for n in results["config"]["n_shots"]]

    def fmt(value) -> str:
        return "" if value is None else repr(float(value))

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for model in (MODEL_IMPRINTED, MODEL_JOINT):
            for nk in n_keys:
                cell = results["aggregates"][model][nk]
                for metric in ("sensitivity", "ppv"):
                    for c, name in enumerate(class_names):
                        entry = cell[metric][c]
                        writer.writerow([model, nk, name, metric, fmt(entry["mean"]),
                                         fmt(entry["std"]), entry["defined_folds"]])
                    entry = cell[f"macro_{metric}"]
                    writer.writerow([model, nk, "macro", metric, fmt(entry["mean"]),
                                     fmt(entry["std"]), entry["defined_folds"]])
