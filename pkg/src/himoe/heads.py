"""Per-dimension output heads, masked emotion losses and the composite objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import ParamStore, glorot

REGRESSION = "regression"
BINARY = "binary"
BINARY_THRESHOLD = 5.0
RATING_LOW, RATING_HIGH = 1.0, 9.0


@dataclass
class HeadParams:
    """Row ``i`` of W/b is dimension ``i``'s private affine head."""

    W: T.Tensor
    b: T.Tensor
    modes: tuple[str, ...]

    @property
    def D(self) -> int:
        return self.b.shape[0]


def init_heads(store: ParamStore, prefix: str, d: int, modes, rng) -> HeadParams:
    modes = tuple(modes)
    for m in modes:
        if m not in (REGRESSION, BINARY):
            raise ConfigError(f"unknown head mode {m!r}")
    return HeadParams(store.add(f"{prefix}.W", glorot(rng, (len(modes), d))), store.add(f"{prefix}.b", np.zeros(len(modes))), modes)


@dataclass
class LossConfig:
    lam: float = 0.1
    modes: tuple[str, ...] = (REGRESSION,) * 4

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"alignment weight must be >= 0, got {self.lam}")


def squash_rating(logits: T.Tensor) -> T.Tensor:
    return T.sigmoid(logits) * (RATING_HIGH - RATING_LOW) + RATING_LOW


def predict(heads: HeadParams, e) -> T.Tensor:
    """Regression columns land in (1, 9); binary columns stay as logits."""
    e = T.as_tensor(e)
    single = e.ndim == 1
    if single:
        e = T.reshape(e, (1, e.shape[0]))
    logits = T.affine(e, heads.W, heads.b)
    if all(m == REGRESSION for m in heads.modes):
        out = squash_rating(logits)
    elif all(m == BINARY for m in heads.modes):
        out = logits
    else:
        cols = [squash_rating(logits[:, i:i + 1]) if m == REGRESSION else logits[:, i:i + 1]
                for i, m in enumerate(heads.modes)]
        out = T.concat(cols, axis=1)
    return T.reshape(out, (heads.D,)) if single else out


def binarize(ratings: np.ndarray) -> np.ndarray:
    return (np.asarray(ratings) > BINARY_THRESHOLD).astype(np.float64)


def probabilities(logits: np.ndarray) -> np.ndarray:
    return T.sigmoid(T.Tensor(logits)).data


def _mode_vector(modes, D: int) -> np.ndarray:
    if isinstance(modes, str):
        modes = (modes,) * D
    if len(modes) != D:
        raise DimensionError(f"{len(modes)} modes for {D} dimensions")
    return np.array([m == BINARY for m in modes])


def emo_loss(preds: T.Tensor, labels, label_mask, modes=REGRESSION) -> T.Tensor:
    """Mean squared error (regression cells) or binary cross-entropy (binary
    cells) over the unmasked cells only.

    Binary cells expect 0/1 targets; masked targets never reach the graph.
    """
    preds = T.as_tensor(preds)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(label_mask, dtype=bool)
    if preds.shape != labels.shape or labels.shape != mask.shape:
        raise DimensionError(f"preds {preds.shape}, labels {labels.shape}, mask {mask.shape} disagree")
    n = int(mask.sum())
    if n == 0:
        return T.tsum(preds * 0.0) * 0.0
    is_bin = np.broadcast_to(_mode_vector(modes, labels.shape[-1]), labels.shape)
    target = np.where(mask, labels, 0.0)
    keep = mask.astype(np.float64)
    total = None
    if (~is_bin & mask).any():
        w = keep * ~is_bin
        total = T.tsum(T.square(preds - target) * w)
    if (is_bin & mask).any():
        w = keep * is_bin
        p = T.sigmoid(preds)
        bce = -(T.log(p) * target + T.log(1.0 - p) * (1.0 - target))
        term = T.tsum(bce * w)
        total = term if total is None else total + term
    return total * (1.0 / n)


def total_loss(emo: T.Tensor, ntxent, lam: float) -> T.Tensor:
    if lam < 0:
        raise ConfigError("alignment weight must be >= 0")
    if lam == 0:
        return emo
    return emo + T.as_tensor(ntxent) * lam
