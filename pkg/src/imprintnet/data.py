"""Datasets, splits, and batch sampling.

Feature vectors come from CSV files or a synthetic generator that mirrors
a long-tailed three-class layout: two well-populated base classes plus one
scarce novel class placed near the second base class. All sampling here is
driven by explicit seeds; identical inputs give identical outputs, bit for
bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """A dataset or split request that cannot be satisfied."""


class StratificationError(DataError):
    """A class is too small for the requested number of folds."""


class CsvParseError(DataError):
    """Malformed dataset file; the message names the offending line."""


@dataclass
class Dataset:
    """Feature matrix, integer labels, and display names per class."""

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.class_names = tuple(str(n) for n in self.class_names)
        if self.features.ndim != 2:
            raise DataError(f"features must be rank-2, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must align with feature rows")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DataError("labels must be integers")
        if len(self) == 0:
            raise DataError("dataset is empty")
        c = len(self.class_names)
        if self.labels.min() < 0 or self.labels.max() >= c:
            raise DataError(f"labels must lie in [0, {c})")
        counts = np.bincount(self.labels, minlength=c)
        if (counts == 0).any():
            missing = self.class_names[int(np.argmin(counts))]
            raise DataError(f"class '{missing}' has no examples")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_examples(self) -> int:
        return self.labels.size

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian blobs: two base classes and one novel class.

    Class means are derived from three scalars: base class 0 sits at the
    origin, base class 1 at ``base_separation`` along the first axis, and
    the novel mean at ``novel_affinity`` of the way along an offset segment
    of length ``novel_offset_scale`` starting at base class 1's mean. The
    offset points diagonally, half along the base axis and half orthogonal
    to it, so the scarce class is an exaggerated variant of its neighbor
    rather than an unrelated blob. Affinity 0 collapses the novel class
    onto its neighbor; lower affinity means a harder scarce class.
    """

    input_dim: int = 32
    class_counts: tuple = (800, 550, 50)
    class_stds: tuple = (1.0, 1.0, 1.0)
    base_separation: float = 8.0
    novel_offset_scale: float = 9.0
    novel_affinity: float = 0.35
    class_names: tuple = ("base_a", "base_b", "novel")

    def __post_init__(self):
        object.__setattr__(self, "class_counts", tuple(int(c) for c in self.class_counts))
        object.__setattr__(self, "class_stds", tuple(float(s) for s in self.class_stds))
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2")
        if len(self.class_counts) != 3:
            raise ValueError("exactly two base classes and one novel class")
        if len(self.class_stds) != 3 or len(self.class_names) != 3:
            raise ValueError("class_stds and class_names must have three entries")
        if any(c < 1 for c in self.class_counts):
            raise ValueError("class_counts must all be >= 1")
        if any(s <= 0 for s in self.class_stds):
            raise ValueError("class_stds must all be positive")
        if not 0 <= self.novel_affinity <= 1:
            raise ValueError("novel_affinity must be in [0, 1]")
        if len(set(self.class_names)) != 3:
            raise ValueError("class_names must be distinct")

    @property
    def novel_class(self) -> int:
        return 2

    def class_means(self) -> np.ndarray:
        means = np.zeros((3, self.input_dim))
        means[1, 0] = self.base_separation
        reach = self.novel_affinity * self.novel_offset_scale / math.sqrt(2.0)
        means[2, 0] = self.base_separation + reach
        means[2, 1] = reach
        return means

    def to_dict(self) -> dict:
        return {
            "kind": "synthetic",
            "input_dim": self.input_dim,
            "class_counts": list(self.class_counts),
            "class_stds": list(self.class_stds),
            "base_separation": self.base_separation,
            "novel_offset_scale": self.novel_offset_scale,
            "novel_affinity": self.novel_affinity,
            "class_names": list(self.class_names),
        }


def synth_generate(spec: SyntheticSpec, seed: int) -> Dataset:
    """Sample the blobs; rows are grouped by class in label order."""
    rng = np.random.default_rng(seed)
    means = spec.class_means()
    blocks = []
    labels = []
    for c, (count, std) in enumerate(zip(spec.class_counts, spec.class_stds)):
        blocks.append(rng.normal(means[c], std, size=(count, spec.input_dim)))
        labels.append(np.full(count, c, dtype=np.int64))
    return Dataset(
        features=np.concatenate(blocks, axis=0),
        labels=np.concatenate(labels),
        class_names=list(spec.class_names),
        provenance={"kind": "synthetic", "seed": int(seed), "spec": spec.to_dict()},
    )


def save_csv(dataset: Dataset, path: str) -> None:
    """Header ``label,f0,...,f{D-1}``; one example per row, labels by name."""
    d = dataset.input_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(d)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([dataset.class_names[label]] + [repr(float(v)) for v in row])


def load_csv(path: str) -> Dataset:
    """Parse a dataset file; class indices follow first appearance order."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: file is empty") from None
        d = len(header) - 1
        if d < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(d)]:
            raise CsvParseError(
                f"{path}: line 1: header must be label,f0,...,f{{D-1}}, got {header!r}"
            )
        names: list = []
        index_of: dict = {}
        labels = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue  # tolerate a trailing newline
            if len(row) != d + 1:
                raise CsvParseError(
                    f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}"
                )
            name = row[0]
            if name not in index_of:
                index_of[name] = len(names)
                names.append(name)
            labels.append(index_of[name])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise CsvParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        class_names=names,
        provenance={"kind": "file", "path": os.path.abspath(path)},
    )


@dataclass
class FoldPlan:
    """Test-fold membership for stratified k-fold cross-validation."""

    k: int
    seed: int
    num_examples: int
    folds: list  # sorted index array per fold

    def test_indices(self, fold: int) -> np.ndarray:
        return self.folds[fold]

    def train_indices(self, fold: int) -> np.ndarray:
        mask = np.ones(self.num_examples, dtype=bool)
        mask[self.folds[fold]] = False
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "k": self.k,
            "seed": self.seed,
            "num_examples": self.num_examples,
            "folds": [f.tolist() for f in self.folds],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FoldPlan":
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported fold plan format_version: {doc.get('format_version')!r}")
        return cls(
            k=int(doc["k"]),
            seed=int(doc["seed"]),
            num_examples=int(doc["num_examples"]),
            folds=[np.asarray(f, dtype=np.int64) for f in doc["folds"]],
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "FoldPlan":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def stratified_kfold(labels, k: int, seed: int) -> FoldPlan:
    """Deal each class's shuffled indices round-robin across ``k`` folds.

    Every index lands in exactly one fold, and per-class fold counts differ
    by at most one. A class with fewer than ``k`` examples is an error.
    """
    y = np.asarray(labels)
    if k < 2:
        raise DataError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < k:
            raise StratificationError(
                f"class {int(c)} has {idx.size} examples, fewer than k={k} folds"
            )
        idx = rng.permutation(idx)
        for j in range(k):
            folds[j].extend(idx[j::k].tolist())
    return FoldPlan(
        k=k,
        seed=int(seed),
        num_examples=y.size,
        folds=[np.sort(np.asarray(f, dtype=np.int64)) for f in folds],
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_val_split(train_indices, labels, val_frac: float, seed: int):
    """Per-class split of ``train_indices`` into train and validation parts.

    Each class contributes round(val_frac * count) validation examples,
    half rounding up, with a floor of one whenever the class has at least
    two examples; singleton classes stay entirely in train. Returns sorted
    (train, val) index arrays.
    """
    if not 0 < val_frac < 1:
        raise DataError("val_frac must be in (0, 1)")
    idx = np.asarray(train_indices)
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_parts = []
    val_parts = []
    for c in np.unique(y[idx]):
        members = rng.permutation(idx[y[idx] == c])
        if members.size < 2:
            train_parts.append(members)
            continue
        n_val = min(members.size - 1, max(1, _round_half_up(val_frac * members.size)))
        val_parts.append(members[:n_val])
        train_parts.append(members[n_val:])
    train = np.sort(np.concatenate(train_parts))
    val = np.sort(np.concatenate(val_parts)) if val_parts else np.asarray([], dtype=idx.dtype)
    return train, val


def select_nshot(train_indices, labels, novel_class: int, n: int, seed: int) -> np.ndarray:
    """A uniform n-subset (without replacement) of the novel training rows.

    Only novel-class indices are eligible; everything else stays with the
    caller. Returns the selection in ascending order.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    idx = np.asarray(train_indices)
    y = np.asarray(labels)
    pool = idx[y[idx] == novel_class]
    if pool.size < n:
        raise DataError(
            f"requested {n} novel examples but only {pool.size} are available"
        )
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(pool, size=n, replace=False))


class BatchStream:
    """Deterministic iterator over index batches.

    With class pools (oversampling), each slot draws a class uniformly and
    then a member of that class uniformly with replacement, so scarce
    classes appear as often as populous ones in expectation. Without pools,
    it cycles through reshuffled permutations of the index list.
    """

    def __init__(self, batch_size: int, num_batches: int, rng: np.random.Generator,
                 pools=None, indices=None):
        if batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if num_batches < 0:
            raise DataError("num_batches must be >= 0")
        if (pools is None) == (indices is None):
            raise ValueError("exactly one of pools or indices is required")
        self.batch_size = int(batch_size)
        self.num_batches = int(num_batches)
        self._rng = rng
        self._pools = pools
        self._indices = indices
        self._emitted = 0
        self._cursor = 0
        self._perm = None
        if pools is not None:
            # Flat layout for vectorized lookup: member j of class c lives at
            # _flat[_starts[c] + j].
            self._flat = np.concatenate(pools)
            sizes = np.asarray([p.size for p in pools], dtype=np.int64)
            self._sizes = sizes
            self._starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    def __len__(self) -> int:
        return self.num_batches

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if self._emitted >= self.num_batches:
            raise StopIteration
        self._emitted += 1
        if self._pools is not None:
            # Per slot: a uniform class, then a uniform member of that class.
            classes = self._rng.integers(0, len(self._pools), size=self.batch_size)
            sizes = self._sizes[classes]
            members = (self._rng.random(self.batch_size) * sizes).astype(np.int64)
            np.minimum(members, sizes - 1, out=members)
            return self._flat[self._starts[classes] + members]
        if self._perm is None or self._cursor >= self._perm.size:
            self._perm = self._rng.permutation(self._indices)
            self._cursor = 0
        batch = self._perm[self._cursor:self._cursor + self.batch_size]
        self._cursor += batch.size
        return batch


def oversample_batches(indices, labels, batch_size: int, num_batches: int,
                       seed: int, classes=None) -> BatchStream:
    """Class-balanced sampling with replacement over ``indices``.

    ``classes`` pins the set of classes that must be present (defaults to
    the classes that appear); an empty pool for any of them is an error.
    """
    idx = np.asarray(indices)
    if idx.size == 0:
        raise DataError("cannot sample from an empty index list")
    y = np.asarray(labels)
    present = np.unique(y[idx])
    if classes is None:
        classes = present
    pools = []
    for c in classes:
        pool = idx[y[idx] == c]
        if pool.size == 0:
            raise DataError(f"class {int(c)} has no examples to oversample")
        pools.append(pool)
    return BatchStream(batch_size, num_batches, np.random.default_rng(seed), pools=pools)


def shuffled_batches(indices, batch_size: int, num_batches: int, seed: int) -> BatchStream:
    """Plain epoch shuffling: consecutive slices of a fresh permutation,
    reshuffled whenever the permutation is exhausted. The final slice of
    each pass may be short."""
    idx = np.asarray(indices)
    if idx.size == 0:
        raise DataError("cannot sample from an empty index list")
    return BatchStream(batch_size, num_batches, np.random.default_rng(seed), indices=idx)
