"""Zero-imputation late-fusion reference: encoders, mean pooling, shared head."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import SampleBatch
from .encoders import encode, init_encoder
from .heads import emo_loss, squash_rating
from .model import ForwardOutput, ModelConfig, masked_inputs, targets_for
from .nn import ParamStore, glorot


def mean_pool(Z: list[T.Tensor], presence: np.ndarray) -> T.Tensor:
    """Average of the present modalities' features, row by row."""
    presence = np.asarray(presence, dtype=bool)
    stacked = T.stack([T.masked_fill_zero(z, presence[:, [m]]) for m, z in enumerate(Z)], axis=1)
    counts = np.maximum(presence.sum(axis=1, keepdims=True), 1).astype(np.float64)
    return T.tsum(stacked, axis=1) * (1.0 / counts)


class LateFusionBaseline:
    kind = "baseline"

    def __init__(self, cfg: ModelConfig, modality_dims: dict[str, int], seed: int = 0):
        self.cfg = cfg
        self.modalities = list(modality_dims)
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        self.encoders = [
            init_encoder(self.params, f"enc.{name}", n_in, cfg.enc_hidden, cfg.d, rng)
            for name, n_in in modality_dims.items()
        ]
        D = len(cfg.modes)
        self.W1 = self.params.add("head.W1", glorot(rng, (cfg.baseline_hidden, cfg.d)))
        self.b1 = self.params.add("head.b1", np.zeros(cfg.baseline_hidden))
        self.W2 = self.params.add("head.W2", glorot(rng, (D, cfg.baseline_hidden)))
        self.b2 = self.params.add("head.b2", np.zeros(D))

    alignment_active = False

    def forward(self, batch: SampleBatch) -> ForwardOutput:
        Z = [encode(enc, x) for enc, x in zip(self.encoders, masked_inputs(batch))]
        pooled = mean_pool(Z, batch.presence)
        h = T.tanh(T.affine(pooled, self.W1, self.b1))
        logits = T.affine(h, self.W2, self.b2)
        out = squash_rating(logits) if all(m == "regression" for m in self.cfg.modes) else logits
        return ForwardOutput(out, Z, extras={"pooled": pooled})

    def loss(self, batch: SampleBatch, out: ForwardOutput | None = None):
        out = out or self.forward(batch)
        emo = emo_loss(out.preds, targets_for(batch.labels, self.cfg.modes), batch.label_mask, self.cfg.modes)
        return emo, {"emo": emo.item(), "ntxent": 0.0}

    def predict_numpy(self, batch: SampleBatch) -> np.ndarray:
        return self.forward(batch).preds.data


def build_model(kind: str, cfg: ModelConfig, modality_dims: dict[str, int], seed: int = 0):
    from .model import HiMoE

    if kind in ("himoe", "full"):
        return HiMoE(cfg, modality_dims, seed)
    if kind == "baseline":
        return LateFusionBaseline(cfg, modality_dims, seed)
    raise ValueError(f"unknown model {kind!r}")
