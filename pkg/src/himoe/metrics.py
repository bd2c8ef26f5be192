"""Regression and classification metrics reported per emotion dimension."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

EPS = 1e-12


class DegenerateVarianceWarning(RuntimeWarning):
    pass


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    return p, t


def ccc(pred, truth) -> float:
    """Lin's concordance correlation with population (1/n) moments."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise ContractError("CCC needs at least two points")
    mp, mt = p.mean(), t.mean()
    vp, vt = np.mean((p - mp) ** 2), np.mean((t - mt) ** 2)
    cov = np.mean((p - mp) * (t - mt))
    denom = vp + vt + (mp - mt) ** 2
    if denom < EPS:
        return 0.0
    return float(2.0 * cov / denom)


def pcc(pred, truth) -> float:
    """Pearson r; 0.0 plus a DegenerateVarianceWarning for a constant input."""
    p, t = _pair(pred, truth)
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = np.sqrt(np.mean(dp * dp)), np.sqrt(np.mean(dt * dt))
    if sp < EPS or st < EPS:
        warnings.warn("constant sequence: Pearson correlation undefined, reporting 0", DegenerateVarianceWarning, stacklevel=2)
        return 0.0
    return float(np.clip(np.mean(dp * dt) / (sp * st), -1.0, 1.0))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def acc_f1(pred, truth, threshold: float = 0.5) -> tuple[float, float]:
    """Accuracy and positive-class F1; scores at or above ``threshold`` count as 1."""
    p, t = _pair(pred, truth)
    yp, yt = p >= threshold, t >= threshold
    tp = int(np.sum(yp & yt))
    fp = int(np.sum(yp & ~yt))
    fn = int(np.sum(~yp & yt))
    acc = float(np.mean(yp == yt))
    f1 = 2.0 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    return acc, float(f1)


@dataclass
class DimensionMetrics:
    ccc: float
    pcc: float
    mae: float
    acc: float | None = None
    f1: float | None = None


@dataclass
class MetricsReport:
    dims: dict[str, DimensionMetrics]
    seed: int | None = None
    missing_rate: float | None = None
    split: str = "val"
    degenerate: list[str] = field(default_factory=list)

    def mean(self, key: str) -> float:
        vals = [getattr(m, key) for m in self.dims.values() if getattr(m, key) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_ccc(self) -> float:
        return self.mean("ccc")


def evaluate(preds: np.ndarray, labels: np.ndarray, label_mask: np.ndarray, dims, modes=None,
             seed=None, missing_rate=None, split="val") -> MetricsReport:
    """Per-dimension metrics over unmasked rows.

    Regression dims get CCC/PCC/MAE on the rating scale.  Binary dims get
    ACC/F1 of sigmoid(logit) against the >5 split of the rating, and CCC/PCC/MAE
    of the probability against the 0/1 target.
    """
    modes = modes or ["regression"] * len(dims)
    out: dict[str, DimensionMetrics] = {}
    degenerate = []
    for i, (dim, mode) in enumerate(zip(dims, modes)):
        keep = np.asarray(label_mask[:, i], dtype=bool)
        p, t = preds[keep, i], labels[keep, i]
        if mode == "binary":
            p = 1.0 / (1.0 + np.exp(-p))
            t = (t > 5.0).astype(np.float64)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateVarianceWarning)
            r = pcc(p, t)
        if caught:
            degenerate.append(dim)
        m = DimensionMetrics(ccc(p, t), r, mae(p, t))
        if mode == "binary":
            m.acc, m.f1 = acc_f1(p, t)
        out[dim] = m
    return MetricsReport(out, seed, missing_rate, split, degenerate)
