"""Contrastive cross-modal alignment (NT-Xent over stacked modality pairs)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError

MASK_SURROGATE = -1e30


@dataclass
class AlignmentConfig:
    tau: float = 0.1
    enabled: bool = True
    pair_policy: str = "all-unordered-pairs"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.pair_policy not in ("all-unordered-pairs", "anchor-modality"):
            raise ConfigError(f"unknown pair policy {self.pair_policy!r}")


@dataclass
class SimilarityMatrix:
    """Scaled cosine similarities of the stacked batch ``[Zi; Zj]``.

    ``scores`` keeps the raw diagonal so it stays differentiable; the
    diagonal is excluded wherever a denominator is formed.
    """

    scores: T.Tensor
    B: int

    @property
    def diag_mask(self) -> np.ndarray:
        return np.eye(2 * self.B, dtype=bool)

    def masked(self) -> np.ndarray:
        return np.where(self.diag_mask, MASK_SURROGATE, self.scores.data)

    def positive_index(self) -> np.ndarray:
        n = 2 * self.B
        return (np.arange(n) + self.B) % n


def similarity_matrix(Zi, Zj, tau: float) -> SimilarityMatrix:
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    Zi, Zj = T.as_tensor(Zi), T.as_tensor(Zj)
    if Zi.shape != Zj.shape:
        raise ContractError(f"paired blocks differ in shape: {Zi.shape} vs {Zj.shape}")
    Z = T.concat([T.l2_normalize(Zi, axis=1), T.l2_normalize(Zj, axis=1)], axis=0)
    S = T.matmul(Z, T.transpose(Z)) * (1.0 / tau)
    return SimilarityMatrix(S, Zi.shape[0])


def ntxent_loss(S: SimilarityMatrix) -> T.Tensor:
    B = S.B
    if B < 2:
        raise ContractError("NT-Xent needs at least two samples per block")
    n = 2 * B
    off = T.reshape(T.masked_select(S.scores, ~S.diag_mask), (n, n - 1))
    rows = np.arange(n)
    pos = S.positive_index()
    # column of the positive once the diagonal entry is dropped from the row
    pos_col = np.where(pos > rows, pos - 1, pos)
    positives = T.getitem(off, (rows, pos_col))
    return T.mean(T.logsumexp(off, axis=1) - positives)


def pairwise_alignment_loss(features, presence: np.ndarray, cfg: AlignmentConfig) -> T.Tensor:
    """Average NT-Xent over modality pairs, each restricted to jointly present rows.

    ``features`` is a sequence of per-modality B x d tensors in presence-column
    order.  Pairs with fewer than two shared rows contribute zero.
    """
    M = len(features)
    if M < 2:
        raise ContractError("alignment needs at least two modalities")
    presence = np.asarray(presence, dtype=bool)
    if cfg.pair_policy == "anchor-modality":
        pairs = [(0, j) for j in range(1, M)]
    else:
        pairs = list(combinations(range(M), 2))
    total = None
    for i, j in pairs:
        rows = np.flatnonzero(presence[:, i] & presence[:, j])
        if rows.size < 2:
            continue
        term = ntxent_loss(similarity_matrix(T.getitem(features[i], rows), T.getitem(features[j], rows), cfg.tau))
        total = term if total is None else total + term
    if total is None:
        return T.Tensor(0.0)
    return total * (1.0 / len(pairs))
