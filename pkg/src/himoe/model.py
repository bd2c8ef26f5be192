"""The assembled hierarchical MoE regressor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .alignment import AlignmentConfig, pairwise_alignment_loss
from .data import SampleBatch
from .emotion_moe import EmotionBankParams, emotion_bank_forward, init_emotion_bank
from .encoders import EncoderParams, encode, init_encoder
from .heads import REGRESSION, HeadParams, binarize, emo_loss, init_heads, predict, total_loss
from .modality_moe import BankOutput, init_fusion, init_modality_bank, modality_bank_forward
from .nn import ParamStore


@dataclass
class ModelConfig:
    d: int = 32
    enc_hidden: int = 64
    expert_hidden: int = 32
    K: int = 4
    L: int = 6
    tau: float = 0.1
    lam: float = 0.1
    align_enabled: bool = True
    use_emotion_bank: bool = True
    soft_routing: bool = True
    modes: tuple[str, ...] = (REGRESSION,) * 4
    baseline_hidden: int = 64


@dataclass
class ForwardOutput:
    preds: T.Tensor
    encoded: list[T.Tensor]
    bank: BankOutput | None = None
    beta: T.Tensor | None = None
    extras: dict = field(default_factory=dict)


def masked_inputs(batch: SampleBatch) -> list[np.ndarray]:
    """Per-modality feature matrices with absent rows forced to exact zeros."""
    pres = batch.presence
    return [np.where(pres[:, [m]], x, 0.0) for m, x in enumerate(batch.features.values())]


def targets_for(labels: np.ndarray, modes) -> np.ndarray:
    """Rating labels, with binary-mode columns split at the midpoint."""
    out = np.array(labels, dtype=np.float64)
    for i, m in enumerate(modes):
        if m != REGRESSION:
            out[:, i] = binarize(labels[:, i])
    return out


class HiMoE:
    """Encoders -> modality expert bank + fusion -> emotion expert bank -> heads."""

    kind = "himoe"

    def __init__(self, cfg: ModelConfig, modality_dims: dict[str, int], seed: int = 0):
        self.cfg = cfg
        self.modalities = list(modality_dims)
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        d = cfg.d
        self.encoders: list[EncoderParams] = [
            init_encoder(self.params, f"enc.{name}", n_in, cfg.enc_hidden, d, rng)
            for name, n_in in modality_dims.items()
        ]
        self.banks = [
            init_modality_bank(self.params, f"mbank.{name}", d, cfg.K, cfg.expert_hidden, rng)
            for name in self.modalities
        ]
        self.fusion = init_fusion(self.params, "fusion", len(self.modalities), d, rng)
        self.emotion: EmotionBankParams | None = (
            init_emotion_bank(self.params, "ebank", d, cfg.L, cfg.expert_hidden, rng) if cfg.use_emotion_bank else None
        )
        self.heads: HeadParams = init_heads(self.params, "heads", d, cfg.modes, rng)
        self.align_cfg = AlignmentConfig(tau=cfg.tau, enabled=cfg.align_enabled)

    @property
    def alignment_active(self) -> bool:
        return self.align_cfg.enabled and self.cfg.lam > 0

    def encode_all(self, batch: SampleBatch) -> list[T.Tensor]:
        pres = batch.presence
        return [
            T.masked_fill_zero(encode(enc, x), pres[:, [m]])
            for m, (enc, x) in enumerate(zip(self.encoders, masked_inputs(batch)))
        ]

    def forward(self, batch: SampleBatch) -> ForwardOutput:
        Z = self.encode_all(batch)
        bank = modality_bank_forward(self.banks, self.fusion, Z, batch.presence, soft_routing=self.cfg.soft_routing)
        beta = None
        if self.emotion is not None:
            e, beta = emotion_bank_forward(self.emotion, bank.z)
        else:
            e = bank.z
        return ForwardOutput(predict(self.heads, e), Z, bank, beta)

    def loss(self, batch: SampleBatch, out: ForwardOutput | None = None):
        out = out or self.forward(batch)
        emo = emo_loss(out.preds, targets_for(batch.labels, self.cfg.modes), batch.label_mask, self.cfg.modes)
        if not self.alignment_active:
            return emo, {"emo": emo.item(), "ntxent": 0.0}
        nt = pairwise_alignment_loss(out.encoded, batch.presence, self.align_cfg)
        return total_loss(emo, nt, self.cfg.lam), {"emo": emo.item(), "ntxent": nt.item()}

    def predict_numpy(self, batch: SampleBatch) -> np.ndarray:
        return self.forward(batch).preds.data
