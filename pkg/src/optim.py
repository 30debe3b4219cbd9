# src/optim.py
# Momentum-free adaptive moment estimation with decoupled weight decay, and global-norm clipping.
# beta1 defaults to 0, so each step divides the current gradient by its running RMS.
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from src.config import OptimConfig
from src.tensor_core import NamedTensorSet, NonFiniteError


def grad_norm(grads: NamedTensorSet) -> float:
    return math.sqrt(float(np.sum([np.sum(np.square(g.data, dtype=np.float64)) for g in grads.values()])))


def clip_grad_norm(grads: NamedTensorSet, max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    norm = grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g.data = (g.data * scale).astype(g.data.dtype)
    return norm


@dataclass
class AdamW:
    params: NamedTensorSet
    lr: float
    weight_decay: float = 0.0
    cfg: OptimConfig = field(default_factory=OptimConfig)
    no_decay: frozenset = frozenset()
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, grads: NamedTensorSet) -> None:
        self.step_count += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name].data
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / bc1) / (np.sqrt(v / bc2) + eps)
            decay = 0.0 if name in self.no_decay else self.weight_decay
            decayed = p.data * (1.0 - self.lr * decay)
            new = decayed - self.lr * update
            if not np.isfinite(new).all():
                err = NonFiniteError(f"non-finite update for '{name}'")
                err.component = name
                raise err
            p.data = new.astype(p.data.dtype)
