"""Adam, cosine annealing and early stopping on plain numpy state."""

from __future__ import annotations

import math

import numpy as np

from .nn import ParamStore


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.assign(p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))


def cosine_lr(step: int, horizon: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine decay from lr_max at step 0 to lr_min at ``horizon`` (flat after)."""
    if horizon <= 0:
        return lr_max
    frac = min(step, horizon) / horizon
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


class EarlyStopping:
    """Tracks the best score (higher is better) and counts stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, score: float, epoch: int) -> bool:
        """Record ``score``; True when it is a new best."""
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience > 0 and self.stale >= self.patience
