"""AdamW with decoupled weight decay and a per-epoch cosine annealing schedule."""

from __future__ import annotations

import math
from typing import Dict, List, Sequence

import numpy as np

from .tensor import Tensor


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Anneal from base_lr at epoch 0 toward 0 at total_epochs, no warmup."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


class AdamW:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
