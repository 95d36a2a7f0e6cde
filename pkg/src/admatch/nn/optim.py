"""SGD with classical momentum."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class SgdMomentum:
    """v <- mu * v + grad; p <- p - lr * v."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not (0.0 <= momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
        self.step_count += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
