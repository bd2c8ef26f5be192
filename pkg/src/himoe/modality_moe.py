"""Modality expert bank: per-modality soft gating, dense expert mixture and
presence-aware attention fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import ParamStore, glorot


@dataclass
class ExpertStack:
    """K two-layer tanh networks evaluated together; weights stored (K, in, out)."""

    W1: T.Tensor
    b1: T.Tensor
    W2: T.Tensor
    b2: T.Tensor

    @property
    def n_experts(self) -> int:
        return self.W1.shape[0]

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """x: B x d -> K x B x d."""
        h = T.tanh(T.matmul(x, self.W1) + T.reshape(self.b1, (self.b1.shape[0], 1, self.b1.shape[1])))
        return T.matmul(h, self.W2) + T.reshape(self.b2, (self.b2.shape[0], 1, self.b2.shape[1]))

    def one(self, k: int, x: T.Tensor) -> T.Tensor:
        h = T.tanh(T.matmul(x, self.W1[k]) + self.b1[k])
        return T.matmul(h, self.W2[k]) + self.b2[k]


def init_experts(store: ParamStore, prefix: str, n: int, d: int, hidden: int, rng) -> ExpertStack:
    return ExpertStack(
        store.add(f"{prefix}.W1", np.stack([glorot(rng, (hidden, d)).T for _ in range(n)])),
        store.add(f"{prefix}.b1", np.zeros((n, hidden))),
        store.add(f"{prefix}.W2", np.stack([glorot(rng, (d, hidden)).T for _ in range(n)])),
        store.add(f"{prefix}.b2", np.zeros((n, d))),
    )


def mix(weights: T.Tensor, outputs: T.Tensor) -> T.Tensor:
    """sum_k weights[b, k] * outputs[k, b, :]  (B x K, K x B x d -> B x d)."""
    K, B = outputs.shape[0], outputs.shape[1]
    w = T.reshape(T.transpose(weights), (K, B, 1))
    return T.tsum(w * outputs, axis=0)


@dataclass
class ModalityBankParams:
    Wg: T.Tensor
    bg: T.Tensor
    experts: ExpertStack

    @property
    def K(self) -> int:
        return self.bg.shape[0]


def init_modality_bank(store: ParamStore, prefix: str, d: int, K: int, hidden: int, rng) -> ModalityBankParams:
    if K < 1:
        raise ContractError("need at least one expert per modality")
    return ModalityBankParams(
        store.add(f"{prefix}.Wg", glorot(rng, (K, d))),
        store.add(f"{prefix}.bg", np.zeros(K)),
        init_experts(store, f"{prefix}.experts", K, d, hidden, rng),
    )


@dataclass
class FusionParams:
    q: T.Tensor
    p_present: T.Tensor
    p_absent: T.Tensor


def init_fusion(store: ParamStore, prefix: str, M: int, d: int, rng) -> FusionParams:
    return FusionParams(
        store.add(f"{prefix}.q", rng.normal(0.0, 1.0 / math.sqrt(d), d)),
        store.add(f"{prefix}.p_present", rng.normal(0.0, 0.1, (M, d))),
        store.add(f"{prefix}.p_absent", rng.normal(0.0, 0.1, (M, d))),
    )


def _as_rows(x) -> tuple[T.Tensor, bool]:
    x = T.as_tensor(x)
    if x.ndim == 1:
        return T.reshape(x, (1, x.shape[0])), True
    return x, False


def gate_weights(params: ModalityBankParams, x) -> T.Tensor:
    """alpha = softmax(Wg x + bg), row-wise for a B x d input."""
    x, single = _as_rows(x)
    alpha = T.softmax(T.affine(x, params.Wg, params.bg), axis=-1)
    return T.reshape(alpha, (params.K,)) if single else alpha


def uniform_gate(params: ModalityBankParams, B: int) -> T.Tensor:
    return T.Tensor(np.full((B, params.K), 1.0 / params.K))


def expert_mix(params: ModalityBankParams, x, alpha) -> T.Tensor:
    x, single = _as_rows(x)
    alpha, _ = _as_rows(alpha)
    z = mix(alpha, params.experts(x))
    return T.reshape(z, (z.shape[1],)) if single else z


def fuse(z_all, presence, fp: FusionParams, return_weights: bool = False):
    """Single-query attention over presence-tagged modality tokens.

    z_all is B x M x d (or M x d for one sample); presence matches its
    leading axes.
    """
    z_all = T.as_tensor(z_all)
    presence = np.asarray(presence, dtype=bool)
    single = z_all.ndim == 2
    if single:
        z_all = T.reshape(z_all, (1,) + z_all.shape)
        presence = presence[None]
    B, M, d = z_all.shape
    if not presence.any(axis=1).all():
        raise ContractError("fusion needs at least one present modality per row")
    on = presence[:, :, None].astype(np.float64)
    tag = T.reshape(fp.p_present, (1, M, d)) * on + T.reshape(fp.p_absent, (1, M, d)) * (1.0 - on)
    u = z_all + tag
    scores = T.reshape(T.matmul(u, T.reshape(fp.q, (d, 1))), (B, M)) * (1.0 / math.sqrt(d))
    w = T.softmax(scores, axis=1)
    z = T.tsum(T.reshape(w, (B, M, 1)) * u, axis=1)
    if single:
        z, w = T.reshape(z, (d,)), T.reshape(w, (M,))
    return (z, w) if return_weights else z


@dataclass
class BankOutput:
    z: T.Tensor
    alphas: list[T.Tensor]
    fusion_weights: T.Tensor
    per_modality: list[T.Tensor]


def modality_bank_forward(banks: list[ModalityBankParams], fp: FusionParams, xs, presence,
                          soft_routing: bool = True) -> BankOutput:
    """Route each modality's B x d features through its bank and fuse.

    Absent entries are replaced by exact zeros before the gate, so their
    routing depends on the bias alone.
    """
    presence = np.asarray(presence, dtype=bool)
    outs, alphas = [], []
    for m, (bank, x) in enumerate(zip(banks, xs)):
        x = T.masked_fill_zero(x, presence[:, [m]])
        alpha = gate_weights(bank, x) if soft_routing else uniform_gate(bank, x.shape[0])
        alphas.append(alpha)
        outs.append(expert_mix(bank, x, alpha))
    z, w = fuse(T.stack(outs, axis=1), presence, fp, return_weights=True)
    return BankOutput(z, alphas, w, outs)
