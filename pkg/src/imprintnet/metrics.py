"""Confusion-matrix metrics and cross-fold aggregation.

Sensitivity (recall) and positive predictive value (precision) are
reported per class. A metric whose denominator is zero is undefined and
stays None; macro averages skip undefined entries and report how many
classes contributed.
"""

from __future__ import annotations

import math

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts[i, j] = examples of true class i predicted as class j."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("y_true and y_pred must be rank-1 and the same length")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    for name, arr in (("y_true", t), ("y_pred", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contains labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def sensitivity(cm: np.ndarray, class_index: int):
    """TP / (all true members); None when the class has no true members."""
    row = cm[class_index]
    total = int(row.sum())
    if total == 0:
        return None
    return float(row[class_index]) / total


def ppv(cm: np.ndarray, class_index: int):
    """TP / (all predicted members); None when nothing was predicted as it."""
    col = cm[:, class_index]
    total = int(col.sum())
    if total == 0:
        return None
    return float(cm[class_index, class_index]) / total


def per_class_sensitivity(cm: np.ndarray) -> list:
    return [sensitivity(cm, c) for c in range(cm.shape[0])]


def per_class_ppv(cm: np.ndarray) -> list:
    return [ppv(cm, c) for c in range(cm.shape[0])]


def accuracy(cm: np.ndarray) -> float:
    total = int(cm.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm)) / total


def macro_average(values):
    """(mean over defined entries, how many were defined); (None, 0) if none."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None, 0
    return sum(defined) / len(defined), len(defined)


def mean_std(values):
    """Sample mean and standard deviation (ddof=1), skipping None entries.

    Returns (mean, std, count); std is None with fewer than two defined
    values, mean is None with zero.
    """
    defined = [float(v) for v in values if v is not None]
    n = len(defined)
    if n == 0:
        return None, None, 0
    mean = sum(defined) / n
    if n == 1:
        return mean, None, 1
    var = sum((v - mean) ** 2 for v in defined) / (n - 1)
    return mean, math.sqrt(var), n
