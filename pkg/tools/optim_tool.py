# Adam with per-group learning rates
"""
tools.optim_tool

Adam over a dict of named numpy parameters. Each parameter belongs to a
learning-rate group (by default its own name); group rates decay by a fixed
factor every `decay_every` steps.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from core.errors import DomainError


class Adam:
    def __init__(
        self,
        lrs: Dict[str, float],
        group_of: Optional[Callable[[str], str]] = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay_factor: float = 1.0,
        decay_every: int = 0,
    ) -> None:
        if any(lr < 0.0 for lr in lrs.values()):
            raise DomainError(f"learning rates must be nonnegative, got {lrs}")
        self.lrs = dict(lrs)
        self.group_of = group_of or (lambda name: name)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def lr(self, name: str) -> float:
        """Current learning rate for parameter `name`."""
        base = self.lrs[self.group_of(name)]
        if self.decay_every <= 0:
            return base
        return base * self.decay_factor ** (self.t // self.decay_every)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated copies of `params` (descent direction)."""
        updated = {}
        rates = {name: self.lr(name) for name in params}
        self.t += 1
        for name, value in params.items():
            g = np.asarray(grads[name], dtype=float)
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g**2
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            updated[name] = value - rates[name] * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated
