"""SGD with momentum, L2 weight decay, and a stepwise-decayed learning rate."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class StepDecaySchedule:
    """lr(epoch) = base_lr * decay_factor ** floor(epoch / step_size)."""

    def __init__(self, base_lr: float = 1e-3, step_size: int = 4, decay_factor: float = 0.94):
        if base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        if not 0 < decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        self.base_lr = float(base_lr)
        self.step_size = int(step_size)
        self.decay_factor = float(decay_factor)

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return self.base_lr * self.decay_factor ** (epoch // self.step_size)


class MomentumSgd:
    """Momentum SGD over a fixed parameter list.

    Per parameter p with gradient g and velocity v:

        g' = g + weight_decay * p
        v  = momentum * v - multiplier * lr * g'
        p  = p + v

    ``lr_multipliers`` scales the step per parameter; layers that start from
    random initialization train with a larger multiplier than layers that
    carry over learned weights.
    """

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 1e-4,
                 lr_multipliers=None):
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ValueError("no parameters to optimize")
        if lr_multipliers is None:
            lr_multipliers = [1.0] * len(self.params)
        lr_multipliers = [float(m) for m in lr_multipliers]
        if len(lr_multipliers) != len(self.params):
            raise ValueError("lr_multipliers must match the parameter list")
        if any(m <= 0 for m in lr_multipliers):
            raise ValueError("lr_multipliers must be positive")
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.lr_multipliers = lr_multipliers
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        """Apply one update at learning rate ``lr`` using current gradients."""
        if lr <= 0:
            raise ValueError("lr must be positive")
        for p, v, mult in zip(self.params, self.velocities, self.lr_multipliers):
            if p.grad is None:
                raise ValueError("parameter has no gradient; run backward before step")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v -= (mult * lr) * g
            p.data += v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
