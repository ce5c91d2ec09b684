"""Command-line front end.

Subcommands compose through files on disk (dataset CSV, fold-plan JSON,
checkpoints, shot lists, results JSON), so each stage of the protocol can
be rerun and audited in isolation, while ``sweep`` chains the whole
experiment in one process. A chained run (synth, split, train-base,
imprint, finetune / train-joint, evaluate) reproduces the corresponding
sweep cell exactly, because every stage derives its randomness from the
same master seed.

Every invocation writes a manifest holding the resolved configuration and
seeds; nothing records wall-clock time, so reruns with identical inputs
produce byte-identical artifacts.

Exit codes: 0 success, 2 invalid configuration or usage, 3 data error,
4 diverged training.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import seeding
from .data import DataError, FoldPlan, SyntheticSpec, load_csv, save_csv
from .estimator import EmbeddingClassifier
from .harness import (RESULTS_VERSION, CsvSource, ExperimentConfig,
                      _estimator, _evaluate, _finetune_indices,
                      _select_shots, build_fold_plan, load_dataset,
                      make_fold_context, n_key, run_experiment,
                      train_base_model, write_results, write_summary_csv)
from .network import load_checkpoint, save_checkpoint
from .training import TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

MANIFEST_VERSION = 1
SHOTS_VERSION = 1

_MISSING = object()


class CliError(Exception):
    """Failure with a fixed exit code; one stderr line per message."""

    def __init__(self, exit_code: int, *lines: str):
        super().__init__("\n".join(lines))
        self.exit_code = exit_code
        self.lines = list(lines)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _valid_n_shots(value) -> bool:
    return (isinstance(value, list) and len(value) > 0
            and all(v == "all" or (_is_int(v) and v >= 1) for v in value))


def _canonical_n_shots(value) -> tuple:
    numeric = sorted({v for v in value if v != "all"})
    return tuple(numeric) + (("all",) if "all" in value else ())


def _validate_data(document, errors: list):
    """The ``data`` sub-document: a synthetic recipe or a CSV pointer."""
    if document is _MISSING:
        return SyntheticSpec()
    if not isinstance(document, dict):
        errors.append("data must be an object")
        return None
    kind = document.get("kind", "synthetic")
    if kind == "csv":
        for key in sorted(set(document) - {"kind", "path"}):
            errors.append(f"unknown key: data.{key}")
        path = document.get("path", _MISSING)
        if path is _MISSING:
            errors.append("data.path is required when data.kind is 'csv'")
            return None
        if not isinstance(path, str):
            errors.append("data.path must be a string")
            return None
        return CsvSource(path)
    if kind != "synthetic":
        errors.append("data.kind must be 'synthetic' or 'csv'")
        return None

    known = {"kind", "input_dim", "class_counts", "class_stds",
             "base_separation", "novel_offset_scale", "novel_affinity",
             "class_names"}
    for key in sorted(set(document) - known):
        errors.append(f"unknown key: data.{key}")
    defaults = SyntheticSpec()
    fields = {}

    def take(name, expect, valid, normalize=lambda v: v):
        value = document.get(name, _MISSING)
        if value is _MISSING:
            fields[name] = getattr(defaults, name)
        elif valid(value):
            fields[name] = normalize(value)
        else:
            errors.append(f"data.{name} must be {expect}")

    take("input_dim", "an integer >= 2", lambda v: _is_int(v) and v >= 2)
    take("class_counts", "three integers >= 1",
         lambda v: (isinstance(v, list) and len(v) == 3
                    and all(_is_int(c) and c >= 1 for c in v)), tuple)
    take("class_stds", "three numbers > 0",
         lambda v: (isinstance(v, list) and len(v) == 3
                    and all(_is_number(s) and s > 0 for s in v)),
         lambda v: tuple(float(s) for s in v))
    take("base_separation", "a number", _is_number, float)
    take("novel_offset_scale", "a number", _is_number, float)
    take("novel_affinity", "in [0, 1]",
         lambda v: _is_number(v) and 0 <= v <= 1, float)
    take("class_names", "three distinct strings",
         lambda v: (isinstance(v, list) and len(v) == 3
                    and all(isinstance(s, str) for s in v)
                    and len(set(v)) == 3), tuple)
    if errors:
        return None
    try:
        return SyntheticSpec(**fields)
    except ValueError as exc:
        errors.append(f"data: {exc}")
        return None


def validate_config(document):
    """Resolve a configuration document against the defaults.

    Returns ``(config, errors)``: either a complete configuration and an
    empty list, or ``None`` and one message per violated constraint.
    Missing fields take the defaults; unknown keys are rejected; n_shots
    is normalized to ascending order with "all" last.
    """
    if not isinstance(document, dict):
        return None, ["configuration must be a JSON object"]
    errors: list = []
    known = {"epochs", "batch_size", "base_lr", "lr_step", "lr_decay",
             "lr_multiplier", "momentum", "weight_decay", "oversample",
             "k_folds", "val_frac", "n_shots", "seeds", "hidden_dims",
             "embedding_dim", "joint_head_bias", "novel_class", "data"}
    for key in sorted(set(document) - known):
        errors.append(f"unknown key: {key}")
    defaults = ExperimentConfig()
    fields = {}

    def take(name, expect, valid, normalize=lambda v: v):
        value = document.get(name, _MISSING)
        if value is _MISSING:
            fields[name] = getattr(defaults, name)
        elif valid(value):
            fields[name] = normalize(value)
        else:
            errors.append(f"{name} must be {expect}")

    take("epochs", "an integer >= 0", lambda v: _is_int(v) and v >= 0)
    take("batch_size", "an integer >= 1", lambda v: _is_int(v) and v >= 1)
    take("base_lr", "a number > 0", lambda v: _is_number(v) and v > 0, float)
    take("lr_step", "an integer >= 1", lambda v: _is_int(v) and v >= 1)
    take("lr_decay", "in (0, 1]", lambda v: _is_number(v) and 0 < v <= 1, float)
    take("lr_multiplier", "a number > 0", lambda v: _is_number(v) and v > 0, float)
    take("momentum", "in [0, 1)", lambda v: _is_number(v) and 0 <= v < 1, float)
    take("weight_decay", "a number >= 0", lambda v: _is_number(v) and v >= 0, float)
    take("oversample", "a boolean", lambda v: isinstance(v, bool))
    take("k_folds", "an integer >= 2", lambda v: _is_int(v) and v >= 2)
    take("val_frac", "in (0, 1)", lambda v: _is_number(v) and 0 < v < 1, float)
    take("n_shots", "a non-empty list of positive integers and/or 'all'",
         _valid_n_shots, _canonical_n_shots)
    take("seeds", "a non-empty list of distinct integers >= 0",
         lambda v: (isinstance(v, list) and len(v) > 0
                    and all(_is_int(s) and s >= 0 for s in v)
                    and len(set(v)) == len(v)), tuple)
    take("hidden_dims", "a list of integers >= 1",
         lambda v: isinstance(v, list) and all(_is_int(d) and d >= 1 for d in v),
         tuple)
    take("embedding_dim", "an integer >= 1", lambda v: _is_int(v) and v >= 1)
    take("joint_head_bias", "a boolean", lambda v: isinstance(v, bool))
    take("novel_class", "null, a class index, or a class name",
         lambda v: v is None or _is_int(v) or isinstance(v, str))
    fields["data"] = _validate_data(document.get("data", _MISSING), errors)

    if errors:
        return None, errors
    return ExperimentConfig(**fields), []


def _resolve_config(args) -> ExperimentConfig:
    """Load + validate the config file and apply the --seed override."""
    if args.config is None:
        document = {}
    else:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                document = json.load(fh)
        except FileNotFoundError:
            raise CliError(EXIT_CONFIG, f"config error: {args.config}: no such file")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG,
                           f"config error: {args.config}: invalid JSON ({exc})")
    config, errors = validate_config(document)
    if errors:
        raise CliError(EXIT_CONFIG, *[f"config error: {e}" for e in errors])
    if args.seed is not None:
        if args.seed < 0:
            raise CliError(EXIT_CONFIG, "config error: --seed must be >= 0")
        config = dataclasses.replace(config, seeds=(args.seed,))
    return config


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, config_dict: dict, fingerprint: str,
                    artifacts: dict, tag: str | None = None,
                    extra: dict | None = None) -> str:
    doc = {
        "format_version": MANIFEST_VERSION,
        "subcommand": args.subcommand,
        "config": config_dict,
        "config_fingerprint": fingerprint,
        "artifacts": artifacts,
    }
    if extra:
        doc.update(extra)
    name = f"manifest-{tag or args.subcommand}.json"
    _write_json(os.path.join(args.out, name), doc)
    return name


def _manifest(args, config: ExperimentConfig, artifacts: dict,
              tag: str | None = None, extra: dict | None = None) -> str:
    return _write_manifest(args, config.to_dict(), config.fingerprint(),
                           artifacts, tag=tag, extra=extra)


def _say(args, text: str) -> None:
    if not args.json:
        print(text)


def _verbose(args, text: str) -> None:
    if args.verbose:
        print(text, file=sys.stderr)


def _load_data(args, config: ExperimentConfig, master: int):
    if getattr(args, "data", None):
        return load_csv(args.data)
    return load_dataset(config, master)


def _load_inputs(args, config: ExperimentConfig, master: int):
    """Dataset plus fold plan, from files when given, else rederived."""
    dataset = _load_data(args, config, master)
    if getattr(args, "folds", None):
        plan = FoldPlan.load(args.folds)
    else:
        plan = build_fold_plan(dataset, config, master)
    if plan.num_examples != dataset.num_examples:
        raise CliError(EXIT_DATA,
                       f"data error: fold plan covers {plan.num_examples} "
                       f"examples but the dataset has {dataset.num_examples}")
    if not 0 <= args.fold < plan.k:
        raise CliError(EXIT_CONFIG, f"config error: --fold must be in [0, {plan.k})")
    return dataset, plan


def _load_model(path: str):
    params, meta = load_checkpoint(path)
    classes = np.asarray(meta.get("classes", list(range(params.spec.num_classes))),
                         dtype=np.int64)
    return params, meta, classes


def _read_shots(path: str, fold: int) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != SHOTS_VERSION:
        raise ValueError(
            f"unsupported shots format_version: {doc.get('format_version')!r}")
    if doc.get("fold") != fold:
        raise CliError(EXIT_CONFIG,
                       f"config error: {path} holds shots for fold "
                       f"{doc.get('fold')}, not fold {fold}")
    return doc


def _fit_params(config: ExperimentConfig) -> dict:
    return {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "base_lr": config.base_lr,
        "lr_step": config.lr_step,
        "lr_decay": config.lr_decay,
        "lr_multiplier": config.lr_multiplier,
        "momentum": config.momentum,
        "weight_decay": config.weight_decay,
        "val_frac": config.val_frac,
        "oversample": config.oversample,
    }


def _cmd_synth(args) -> dict:
    config = _resolve_config(args)
    if not isinstance(config.data, SyntheticSpec):
        raise CliError(EXIT_CONFIG, "config error: synth requires data.kind 'synthetic'")
    master = config.seeds[0]
    dataset = load_dataset(config, master)
    save_csv(dataset, os.path.join(args.out, "dataset.csv"))
    manifest = _manifest(args, config, {"dataset": "dataset.csv"},
                         extra={"master_seed": master})
    _say(args, f"wrote {os.path.join(args.out, 'dataset.csv')} "
               f"({dataset.num_examples} examples, {dataset.num_classes} classes)")
    return {
        "subcommand": "synth",
        "dataset": "dataset.csv",
        "manifest": manifest,
        "examples": dataset.num_examples,
        "class_names": list(dataset.class_names),
        "master_seed": master,
    }


def _cmd_split(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset = _load_data(args, config, master)
    plan = build_fold_plan(dataset, config, master)
    plan.save(os.path.join(args.out, "folds.json"))
    manifest = _manifest(args, config, {"folds": "folds.json"},
                         extra={"master_seed": master})
    _say(args, f"wrote {os.path.join(args.out, 'folds.json')} "
               f"({plan.k} folds over {plan.num_examples} examples)")
    return {
        "subcommand": "split",
        "folds": "folds.json",
        "manifest": manifest,
        "k": plan.k,
        "examples": plan.num_examples,
        "master_seed": master,
    }


def _cmd_train_base(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset, plan = _load_inputs(args, config, master)
    ctx = make_fold_context(dataset, plan, args.fold, config, master)
    clf = train_base_model(ctx, config, master)
    _verbose(args, f"fold {args.fold}: base model best epoch {clf.best_epoch_}, "
                   f"val accuracy {clf.best_val_accuracy_:.4f}")
    name = f"base-fold{args.fold}.json"
    save_checkpoint(os.path.join(args.out, name), clf.params_, meta={
        "stage": "base",
        "fold": args.fold,
        "classes": [int(c) for c in clf.classes_],
        "class_names": [dataset.class_names[int(c)] for c in clf.classes_],
        "master_seed": master,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
    })
    manifest = _manifest(args, config, {"checkpoint": name},
                         tag=f"train-base-fold{args.fold}",
                         extra={"master_seed": master, "fold": args.fold})
    _say(args, f"wrote {os.path.join(args.out, name)} "
               f"(best epoch {clf.best_epoch_}, val accuracy {clf.best_val_accuracy_:.4f})")
    return {
        "subcommand": "train-base",
        "checkpoint": name,
        "manifest": manifest,
        "fold": args.fold,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
        "master_seed": master,
    }


def _cmd_imprint(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset, plan = _load_inputs(args, config, master)
    ctx = make_fold_context(dataset, plan, args.fold, config, master)
    params, _, classes = _load_model(args.checkpoint)
    clf = EmbeddingClassifier.from_model(params, classes)
    shots, resolved = _select_shots(ctx, config, master, args.n)
    clf.imprint(dataset.features[shots], ctx.novel_class)
    key = n_key(args.n)
    ckpt_name = f"imprinted-fold{args.fold}-n{key}.json"
    shots_name = f"shots-fold{args.fold}-n{key}.json"
    save_checkpoint(os.path.join(args.out, ckpt_name), clf.params_, meta={
        "stage": "imprinted",
        "fold": args.fold,
        "n": key,
        "n_resolved": resolved,
        "classes": [int(c) for c in clf.classes_],
        "novel_class": ctx.novel_class,
        "master_seed": master,
    })
    _write_json(os.path.join(args.out, shots_name), {
        "format_version": SHOTS_VERSION,
        "fold": args.fold,
        "n": key,
        "n_resolved": resolved,
        "novel_class": ctx.novel_class,
        "indices": [int(i) for i in shots],
    })
    manifest = _manifest(args, config,
                         {"checkpoint": ckpt_name, "shots": shots_name},
                         tag=f"imprint-fold{args.fold}-n{key}",
                         extra={"master_seed": master, "fold": args.fold, "n": key})
    _say(args, f"wrote {os.path.join(args.out, ckpt_name)} "
               f"(imprinted class {ctx.novel_class} from {resolved} shots)")
    return {
        "subcommand": "imprint",
        "checkpoint": ckpt_name,
        "shots": shots_name,
        "manifest": manifest,
        "fold": args.fold,
        "n": key,
        "n_resolved": resolved,
        "novel_class": ctx.novel_class,
        "master_seed": master,
    }


def _cmd_finetune(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset, plan = _load_inputs(args, config, master)
    ctx = make_fold_context(dataset, plan, args.fold, config, master)
    shots_doc = _read_shots(args.shots, args.fold)
    shots = np.asarray(shots_doc["indices"], dtype=np.int64)
    params, _, classes = _load_model(args.checkpoint)
    key = shots_doc["n"]
    seed = seeding.derive_seed(master, "finetune", f"fold{args.fold}", f"n{key}")
    clf = EmbeddingClassifier.from_model(params, classes, warm_start=True,
                                         random_state=seed, **_fit_params(config))
    ft_idx = _finetune_indices(ctx, shots)
    clf.fit(dataset.features[ft_idx], dataset.labels[ft_idx],
            X_val=dataset.features[ctx.val_idx], y_val=dataset.labels[ctx.val_idx])
    _verbose(args, f"fold {args.fold}: fine-tune best epoch {clf.best_epoch_}, "
                   f"val accuracy {clf.best_val_accuracy_:.4f}")
    name = f"finetuned-fold{args.fold}-n{key}.json"
    save_checkpoint(os.path.join(args.out, name), clf.params_, meta={
        "stage": "finetuned",
        "fold": args.fold,
        "n": key,
        "classes": [int(c) for c in clf.classes_],
        "master_seed": master,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
    })
    manifest = _manifest(args, config, {"checkpoint": name},
                         tag=f"finetune-fold{args.fold}-n{key}",
                         extra={"master_seed": master, "fold": args.fold, "n": key})
    _say(args, f"wrote {os.path.join(args.out, name)} "
               f"(best epoch {clf.best_epoch_}, val accuracy {clf.best_val_accuracy_:.4f})")
    return {
        "subcommand": "finetune",
        "checkpoint": name,
        "manifest": manifest,
        "fold": args.fold,
        "n": key,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
        "master_seed": master,
    }


def _cmd_train_joint(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset, plan = _load_inputs(args, config, master)
    ctx = make_fold_context(dataset, plan, args.fold, config, master)
    shots_doc = _read_shots(args.shots, args.fold)
    shots = np.asarray(shots_doc["indices"], dtype=np.int64)
    key = shots_doc["n"]
    seed = seeding.derive_seed(master, "joint", f"fold{args.fold}", f"n{key}")
    clf = _estimator(config, "linear", seed)
    ft_idx = _finetune_indices(ctx, shots)
    clf.fit(dataset.features[ft_idx], dataset.labels[ft_idx],
            X_val=dataset.features[ctx.val_idx], y_val=dataset.labels[ctx.val_idx])
    _verbose(args, f"fold {args.fold}: joint model best epoch {clf.best_epoch_}, "
                   f"val accuracy {clf.best_val_accuracy_:.4f}")
    name = f"joint-fold{args.fold}-n{key}.json"
    save_checkpoint(os.path.join(args.out, name), clf.params_, meta={
        "stage": "joint",
        "fold": args.fold,
        "n": key,
        "classes": [int(c) for c in clf.classes_],
        "master_seed": master,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
    })
    manifest = _manifest(args, config, {"checkpoint": name},
                         tag=f"train-joint-fold{args.fold}-n{key}",
                         extra={"master_seed": master, "fold": args.fold, "n": key})
    _say(args, f"wrote {os.path.join(args.out, name)} "
               f"(best epoch {clf.best_epoch_}, val accuracy {clf.best_val_accuracy_:.4f})")
    return {
        "subcommand": "train-joint",
        "checkpoint": name,
        "manifest": manifest,
        "fold": args.fold,
        "n": key,
        "best_epoch": clf.best_epoch_,
        "val_accuracy": clf.best_val_accuracy_,
        "master_seed": master,
    }


def _cmd_evaluate(args) -> dict:
    config = _resolve_config(args)
    master = config.seeds[0]
    dataset, plan = _load_inputs(args, config, master)
    ctx = make_fold_context(dataset, plan, args.fold, config, master)
    params, _, classes = _load_model(args.checkpoint)
    clf = EmbeddingClassifier.from_model(params, classes)
    metrics = _evaluate(clf, ctx)
    stem = os.path.splitext(os.path.basename(args.checkpoint))[0]
    name = f"metrics-{stem}.json"
    doc = {
        "format_version": 1,
        "fold": args.fold,
        "checkpoint": os.path.basename(args.checkpoint),
        "class_names": list(dataset.class_names),
        **metrics,
    }
    _write_json(os.path.join(args.out, name), doc)
    manifest = _manifest(args, config, {"metrics": name},
                         tag=f"evaluate-{stem}",
                         extra={"master_seed": master, "fold": args.fold})
    macro = metrics["macro_sensitivity"]["mean"]
    _say(args, f"wrote {os.path.join(args.out, name)} "
               f"(accuracy {metrics['accuracy']:.4f}, macro sensitivity "
               f"{'n/a' if macro is None else format(macro, '.4f')})")
    return {"subcommand": "evaluate", "metrics": name, "manifest": manifest, **doc}


def _cmd_sweep(args) -> dict:
    config = _resolve_config(args)
    if args.jobs < 1:
        raise CliError(EXIT_CONFIG, "config error: --jobs must be >= 1")
    progress = (lambda text: print(text, file=sys.stderr)) if args.verbose else None
    try:
        results = run_experiment(config, jobs=args.jobs, progress=progress)
    except ValueError as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}")
    write_results(results, os.path.join(args.out, "results.json"))
    manifest = _manifest(args, config, {"results": "results.json"})
    _say(args, f"wrote {os.path.join(args.out, 'results.json')} "
               f"(seeds {list(config.seeds)}, fingerprint "
               f"{results['config_fingerprint'][:12]})")
    return {
        "subcommand": "sweep",
        "results": "results.json",
        "manifest": manifest,
        "config_fingerprint": results["config_fingerprint"],
        "seeds": list(config.seeds),
    }


def _cmd_report(args) -> dict:
    with open(args.results, "r", encoding="utf-8") as fh:
        results = json.load(fh)
    if results.get("format_version") != RESULTS_VERSION:
        raise ValueError(
            f"unsupported results format_version: {results.get('format_version')!r}")
    write_summary_csv(results, os.path.join(args.out, "summary.csv"))
    manifest = _write_manifest(args, results["config"],
                               results["config_fingerprint"],
                               {"summary": "summary.csv"})
    n_values = len(results["config"]["n_shots"])
    rows = 2 * n_values * 2 * (len(results["class_names"]) + 1)
    _say(args, f"wrote {os.path.join(args.out, 'summary.csv')} ({rows} rows)")
    return {
        "subcommand": "report",
        "summary": "summary.csv",
        "manifest": manifest,
        "rows": rows,
        "config_fingerprint": results["config_fingerprint"],
    }


_HANDLERS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train-base": _cmd_train_base,
    "imprint": _cmd_imprint,
    "finetune": _cmd_finetune,
    "train-joint": _cmd_train_joint,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def _parse_n(text: str):
    if text == "all":
        return "all"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be a positive integer or 'all'")
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer or 'all'")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imprintnet",
        description="Low-shot classification by weight imprinting: data "
                    "generation, cross-validated training, and reporting.",
        epilog="exit codes: 0 success, 2 invalid configuration or usage, "
               "3 data error, 4 diverged training",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON configuration file (defaults apply when omitted)")
    common.add_argument("--out", metavar="DIR", required=True,
                        help="output directory, created if missing")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed override (replaces the config's seed list)")
    common.add_argument("--json", action="store_true",
                        help="machine-readable stdout")
    common.add_argument("--verbose", action="store_true",
                        help="progress diagnostics on stderr")

    fold_io = argparse.ArgumentParser(add_help=False)
    fold_io.add_argument("--data", metavar="PATH",
                         help="dataset CSV (default: regenerate from the config)")
    fold_io.add_argument("--folds", metavar="PATH",
                         help="fold-plan JSON (default: rederive from the config)")
    fold_io.add_argument("--fold", type=int, required=True,
                         help="fold index to work on")

    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand",
                                required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate the synthetic dataset as CSV")
    split = sub.add_parser("split", parents=[common],
                           help="build the stratified fold plan")
    split.add_argument("--data", metavar="PATH",
                       help="dataset CSV (default: regenerate from the config)")
    sub.add_parser("train-base", parents=[common, fold_io],
                   help="train the cosine-head model on the populous classes")
    imprint = sub.add_parser("imprint", parents=[common, fold_io],
                             help="add the scarce class by weight imprinting")
    imprint.add_argument("--checkpoint", metavar="PATH", required=True,
                         help="base-model checkpoint")
    imprint.add_argument("--n", type=_parse_n, required=True,
                         help="number of shots, or 'all'")
    finetune = sub.add_parser("finetune", parents=[common, fold_io],
                              help="fine-tune an imprinted model on all classes")
    finetune.add_argument("--checkpoint", metavar="PATH", required=True,
                          help="imprinted checkpoint")
    finetune.add_argument("--shots", metavar="PATH", required=True,
                          help="shot list written by imprint")
    joint = sub.add_parser("train-joint", parents=[common, fold_io],
                           help="train the from-scratch linear-head model "
                                "on the same partitions")
    joint.add_argument("--shots", metavar="PATH", required=True,
                       help="shot list written by imprint")
    evaluate = sub.add_parser("evaluate", parents=[common, fold_io],
                              help="per-class metrics of a checkpoint on a test fold")
    evaluate.add_argument("--checkpoint", metavar="PATH", required=True,
                          help="checkpoint to evaluate")
    sweep = sub.add_parser("sweep", parents=[common],
                           help="run the full protocol for every seed, n, and fold")
    sweep.add_argument("--jobs", type=int, default=1,
                       help="worker processes for fold-level parallelism")
    report = sub.add_parser("report", parents=[common],
                            help="summarize a results file as CSV")
    report.add_argument("--results", metavar="PATH", required=True,
                        help="results JSON written by sweep")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        payload = _HANDLERS[args.subcommand](args)
    except CliError as err:
        for line in err.lines:
            print(f"imprintnet: {line}", file=sys.stderr)
        return err.exit_code
    except TrainingDivergedError as err:
        print(f"imprintnet: error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as err:
        print(f"imprintnet: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"imprintnet: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as err:
        print(f"imprintnet: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    if args.json:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
