"""Per-modality window encoders: affine -> tanh -> affine into a shared width."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import ParamStore, glorot


@dataclass
class EncoderParams:
    W1: T.Tensor
    b1: T.Tensor
    W2: T.Tensor
    b2: T.Tensor

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def output_bound(self) -> float:
        """Cap on ``|z|_inf``: tanh lies in [-1, 1], so each unit is at most its row L1 plus bias."""
        return float(np.max(np.abs(self.W2.data).sum(axis=1) + np.abs(self.b2.data)))


def init_encoder(store: ParamStore, prefix: str, in_dim: int, hidden: int, out_dim: int, rng) -> EncoderParams:
    return EncoderParams(
        store.add(f"{prefix}.W1", glorot(rng, (hidden, in_dim))),
        store.add(f"{prefix}.b1", np.zeros(hidden)),
        store.add(f"{prefix}.W2", glorot(rng, (out_dim, hidden))),
        store.add(f"{prefix}.b2", np.zeros(out_dim)),
    )


def encode(params: EncoderParams, window) -> T.Tensor:
    """Map B x n windows (or one length-n window) to B x d (or d) features."""
    x = T.as_tensor(window)
    single = x.ndim == 1
    if single:
        x = T.reshape(x, (1, x.shape[0]))
    if x.shape[-1] != params.in_dim:
        raise DimensionError(f"encoder expects windows of length {params.in_dim}, got {x.shape[-1]}")
    h = T.tanh(T.affine(x, params.W1, params.b1))
    z = T.affine(h, params.W2, params.b2)
    return T.reshape(z, (params.out_dim,)) if single else z
