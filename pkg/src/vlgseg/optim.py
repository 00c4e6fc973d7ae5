"""Adam and the two learning-rate schedules used by the training stages."""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class Adam:
    """Adam with bias correction, updating a dict of float64 arrays in place."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(self.params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            self.params[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def step_decay_lr(base_lr: float, epoch: int, factor: float, every: int) -> float:
    """``base_lr * factor ** (epoch // every)``."""
    return base_lr * factor ** (epoch // every)


def poly_lr(base_lr: float, it: int, max_iter: int, power: float) -> float:
    return base_lr * (1.0 - it / max_iter) ** power


def check_finite(value: float, what: str, step: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{what} became non-finite ({value}) at step {step}; lower the learning rate")
