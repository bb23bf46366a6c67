"""Adam and a reduce-on-plateau learning-rate schedule for taped tensors."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .numerics import Tensor

__all__ = ["Adam", "ReduceLROnPlateau"]


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    step() applies the standard update from the accumulated gradients and
    zeroes them afterwards; the step counter t advances by exactly one per
    call even when there is nothing to update.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        if not self.params:
            warnings.warn("Adam.step: no trainable parameters, nothing updated", RuntimeWarning)
            return
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if not p.requires_grad or p.grad is None:
                raise ValueError("Adam.step: parameter without populated gradient")
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class ReduceLROnPlateau:
    """Halve the optimizer's rate after patience is exhausted without improvement.

    Lower metric is better; an epoch only counts as an improvement when it
    beats the best seen so far by a relative threshold, so vanishing gains on
    a saturated loss do not keep the schedule (or early stopping built on
    `improved`) alive. The rate is reduced only when the bad-epoch counter
    exceeds patience, never below min_lr, and the counter resets on every
    reduction, so the rate is non-increasing over a run.
    """

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 3,
                 min_lr: float = 0.0, threshold: float = 1e-3):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0, 1), got {factor}")
        self.optimizer = optimizer
        self.factor = float(factor)
        self.patience = int(patience)
        self.min_lr = float(min_lr)
        self.threshold = float(threshold)
        self.best = math.inf
        self.num_bad_epochs = 0
        self.num_reductions = 0
        self.improved = True

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    def _is_improvement(self, metric: float) -> bool:
        if self.best is math.inf or self.best == math.inf:
            return metric < self.best
        margin = self.threshold * abs(self.best)
        return metric < self.best - margin

    def step(self, metric: float) -> float:
        """Record one epoch's metric; returns the (possibly reduced) rate."""
        metric = float(metric)
        if not math.isfinite(metric):
            raise ValueError(f"plateau metric must be finite, got {metric}")
        self.improved = self._is_improvement(metric)
        if self.improved:
            self.best = metric
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
            if self.num_bad_epochs > self.patience:
                reduced = max(self.optimizer.lr * self.factor, self.min_lr)
                if reduced < self.optimizer.lr:
                    self.optimizer.lr = reduced
                    self.num_reductions += 1
                self.num_bad_epochs = 0
        return self.optimizer.lr
