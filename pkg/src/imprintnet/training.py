"""The epoch/batch training loop with best-validation checkpoint selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import ModelParams, forward_logits, loss, predict
from .optim import MomentumSgd, StepDecaySchedule
from .tensor import backward, no_grad


class TrainingDivergedError(RuntimeError):
    """Loss became NaN or infinite; reports where it happened."""

    def __init__(self, epoch: int, lr: float):
        super().__init__(
            f"training diverged at epoch {epoch} (lr={lr:.3e}); "
            "consider lowering the learning rate"
        )
        self.epoch = epoch
        self.lr = lr


@dataclass(frozen=True)
class TrainSettings:
    """Optimization hyperparameters shared by every model in a run."""

    epochs: int = 40
    batch_size: int = 64
    base_lr: float = 1e-3
    lr_step: int = 4
    lr_decay: float = 0.94
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def schedule(self) -> StepDecaySchedule:
        return StepDecaySchedule(self.base_lr, self.lr_step, self.lr_decay)


@dataclass
class TrainResult:
    """Per-epoch curves plus the parameters of the best validation epoch."""

    best_params: ModelParams
    best_epoch: int
    best_val_accuracy: float
    val_accuracies: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


def evaluate_accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty set")
    with no_grad():
        predicted = predict(forward_logits(params, x))
    return float(np.mean(predicted == y))


def batches_per_epoch(num_examples: int, batch_size: int) -> int:
    if num_examples < 1:
        raise ValueError("need at least one training example")
    return math.ceil(num_examples / batch_size)


def train(params: ModelParams, x: np.ndarray, y: np.ndarray, stream,
          x_val: np.ndarray, y_val: np.ndarray, settings: TrainSettings,
          lr_multipliers=None) -> TrainResult:
    """Optimize ``params`` in place and return the best checkpoint.

    ``stream`` yields index batches into ``x``/``y`` and must hold
    epochs * ceil(len(x) / batch_size) of them. Validation accuracy is
    measured after each epoch; the returned copy of the parameters is from
    the epoch with the highest accuracy, the earliest on ties. With zero
    epochs the initial parameters are returned (best_epoch -1) with their
    validation accuracy.
    """
    schedule = settings.schedule()
    optimizer = MomentumSgd(params.parameters(), settings.momentum,
                            settings.weight_decay, lr_multipliers)
    steps = batches_per_epoch(len(x), settings.batch_size)
    stream_iter = iter(stream)

    result = TrainResult(best_params=params.copy(), best_epoch=-1,
                         best_val_accuracy=-1.0)
    if settings.epochs == 0:
        result.best_val_accuracy = evaluate_accuracy(params, x_val, y_val)
        return result

    for epoch in range(settings.epochs):
        lr = schedule.lr_at(epoch)
        total = 0.0
        for _ in range(steps):
            idx = next(stream_iter)
            batch_loss = loss(params, x[idx], y[idx])
            value = float(batch_loss.data)
            if math.isnan(value) or math.isinf(value):
                raise TrainingDivergedError(epoch, lr)
            optimizer.zero_grad()
            backward(batch_loss)
            optimizer.step(lr)
            total += value
        result.epoch_losses.append(total / steps)
        acc = evaluate_accuracy(params, x_val, y_val)
        result.val_accuracies.append(acc)
        if acc > result.best_val_accuracy:
            result.best_val_accuracy = acc
            result.best_epoch = epoch
            result.best_params = params.copy()
    return result
