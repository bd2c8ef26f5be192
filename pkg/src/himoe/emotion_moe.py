"""Emotion expert bank with the similarity-driven (DA) router."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .modality_moe import ExpertStack, init_experts, mix
from .nn import ParamStore


@dataclass
class EmotionBankParams:
    experts: ExpertStack
    W_phi: T.Tensor

    @property
    def L(self) -> int:
        return self.experts.n_experts


def init_emotion_bank(store: ParamStore, prefix: str, d: int, L: int, hidden: int, rng) -> EmotionBankParams:
    if L < 1:
        raise ContractError("need at least one emotion expert")
    experts = init_experts(store, f"{prefix}.experts", L, d, hidden, rng)
    W_phi = store.add(f"{prefix}.W_phi", np.eye(d))
    return EmotionBankParams(experts, W_phi)


def _rows(z) -> tuple[T.Tensor, bool]:
    z = T.as_tensor(z)
    if z.ndim == 1:
        return T.reshape(z, (1, z.shape[0])), True
    return z, False


def route_from_outputs(params: EmotionBankParams, z: T.Tensor, outputs: T.Tensor) -> T.Tensor:
    """beta (B x L) from phi(z, F_l(z)) = (W_phi z) . F_l(z) / sqrt(d)."""
    L, B, d = outputs.shape
    query = T.reshape(T.affine(z, params.W_phi, np.zeros(d)), (1, B, d))
    scores = T.tsum(query * outputs, axis=2) * (1.0 / math.sqrt(d))
    return T.softmax(T.transpose(scores), axis=1)


def da_route(params: EmotionBankParams, z) -> T.Tensor:
    z, single = _rows(z)
    beta = route_from_outputs(params, z, params.experts(z))
    return T.reshape(beta, (params.L,)) if single else beta


def emotion_mix(params: EmotionBankParams, z, beta) -> T.Tensor:
    z, single = _rows(z)
    beta, _ = _rows(beta)
    e = mix(beta, params.experts(z))
    return T.reshape(e, (e.shape[1],)) if single else e


def emotion_bank_forward(params: EmotionBankParams, z: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    """(e, beta) with the expert outputs computed once and shared."""
    outputs = params.experts(z)
    beta = route_from_outputs(params, z, outputs)
    return mix(beta, outputs), beta
