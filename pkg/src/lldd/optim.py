"""Adam-style adaptive optimizer over graph leaves.

Parameter values are updated in place (single owner thread).  A parameter
whose gradient is ``None`` in a step is skipped entirely: its value, moments,
and step counter stay untouched, which the distillation loop relies on to
leave out-of-chunk patient codes bit-unchanged.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DiffNode


class Adam:
    def __init__(self, params: list[DiffNode], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = [0] * len(self.params)

    def step(self, grads: list[np.ndarray | None]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list length mismatch")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            g = g.astype(p.value.dtype, copy=False)
            self.t[i] += 1
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1 - self.beta1 ** self.t[i])
            v_hat = self.v[i] / (1 - self.beta2 ** self.t[i])
            p.value[...] = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
