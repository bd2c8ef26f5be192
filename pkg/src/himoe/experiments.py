"""Experiment drivers: missing-rate sweep, expert-count sweep, ablations, routing report.

Every sweep cell is an independent training run with its own seed, so cells
can be farmed out to worker processes; results are merged in cell order and
do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import DatasetBundle
from .train import eval_batch, evaluate_model, fit, load_bundle, write_csv

log = logging.getLogger(__name__)

ABLATIONS = {
    "full": {},
    "no_emotion_bank": {"emotion_bank": False},
    "no_alignment": {"lam": 0.0},
    "no_soft_routing": {"soft_routing": False},
}


@dataclass(frozen=True)
class CellResult:
    key: tuple
    seed: int
    ccc: float
    pcc: float
    mae: float


def _run_cell(job) -> CellResult:
    key, cfg, bundle = job
    result = fit(cfg, bundle)
    rep = result.reports[cfg.eval_split] if cfg.eval_split in result.reports else evaluate_model(
        result.model, eval_batch(bundle[cfg.eval_split], cfg.missing_rate, cfg.seed), bundle.manifest["dims"])
    return CellResult(key, cfg.seed, rep.mean("ccc"), rep.mean("pcc"), rep.mean("mae"))


def run_cells(jobs: list[tuple[tuple, RunConfig]], bundle: DatasetBundle, workers: int = 1) -> list[CellResult]:
    payload = [(key, cfg, bundle) for key, cfg in jobs]
    if workers <= 1 or len(payload) <= 1:
        out = []
        for i, job in enumerate(payload):
            out.append(_run_cell(job))
            log.info("cell %d/%d %s seed=%d ccc=%.4f", i + 1, len(payload), job[0], job[1].seed, out[-1].ccc)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, payload))


def summarize(results: list[CellResult]) -> dict[tuple, dict[str, float]]:
    """Mean and (population) std of ccc/pcc/mae per cell key, in first-seen order."""
    groups: dict[tuple, list[CellResult]] = {}
    for r in results:
        groups.setdefault(r.key, []).append(r)
    out = {}
    for key, rs in groups.items():
        stats = {"n": len(rs)}
        for metric in ("ccc", "pcc", "mae"):
            vals = np.array([getattr(r, metric) for r in rs])
            stats[metric] = float(vals.mean())
            stats[f"{metric}_std"] = float(vals.std())
        out[key] = stats
    return out


def _f(v: float) -> str:
    return format(v, ".10g")


# ---------------------------------------------------------------- missing-rate sweep

def sweep_missing(cfg: RunConfig, bundle: DatasetBundle | None = None, models=("himoe", "baseline")) -> list[CellResult]:
    """Train-and-evaluate under masking at every r of the grid, for every model and seed."""
    bundle = bundle or load_bundle(cfg)
    jobs = [
        ((model, r), replace(cfg, model=model, missing_rate=r, seed=seed))
        for model in models for r in cfg.r_grid for seed in cfg.sweep_seeds
    ]
    return run_cells(jobs, bundle, cfg.workers)


def write_degradation(results: list[CellResult], path) -> Path:
    """Per-seed rows followed by one ``mean`` and one ``std`` row per (model, r)."""
    path = Path(path)
    rows = [[r.key[0], f"{r.key[1]:.2f}", r.seed, _f(r.ccc), _f(r.pcc), _f(r.mae)] for r in results]
    for (model, r), s in summarize(results).items():
        rows.append([model, f"{r:.2f}", "mean", _f(s["ccc"]), _f(s["pcc"]), _f(s["mae"])])
        rows.append([model, f"{r:.2f}", "std", _f(s["ccc_std"]), _f(s["pcc_std"]), _f(s["mae_std"])])
    write_csv(path, ["model", "r", "seed", "ccc", "pcc", "mae"], rows)
    return path


@dataclass
class DegradationCheck:
    rates: list[float]
    full_mean: list[float]
    base_mean: list[float]
    pooled_std: float
    monotone: bool
    beats_baseline: bool
    gap_grows: bool

    @property
    def ok(self) -> bool:
        return self.monotone and self.beats_baseline and self.gap_grows


def check_degradation(results: list[CellResult], model="himoe", baseline="baseline",
                      beat_from: float = 0.15, gap_at: float = 0.3) -> DegradationCheck:
    """Non-increasing full-model curve (up to one pooled std) and a baseline gap that opens with r."""
    s = summarize(results)
    rates = sorted({k[1] for k in s if k[0] == model})
    full = [s[(model, r)]["ccc"] for r in rates]
    base = [s[(baseline, r)]["ccc"] for r in rates]
    pooled = math.sqrt(np.mean([s[(model, r)]["ccc_std"] ** 2 for r in rates]))
    monotone = all(full[j] <= full[i] + pooled for i in range(len(rates)) for j in range(i + 1, len(rates)))
    beats = all(f > b for r, f, b in zip(rates, full, base) if r >= beat_from - 1e-9)
    gap = dict(zip(rates, np.subtract(full, base)))
    grows = _nearest(gap, gap_at) > _nearest(gap, 0.0)
    return DegradationCheck(rates, full, base, pooled, monotone, beats, grows)


def _nearest(d: dict[float, float], key: float) -> float:
    return d[min(d, key=lambda k: abs(k - key))]


# ---------------------------------------------------------------- emotion-expert sweep

def sweep_experts(cfg: RunConfig, bundle: DatasetBundle | None = None) -> list[CellResult]:
    bundle = bundle or load_bundle(cfg)
    jobs = [((L,), replace(cfg, model="himoe", L=L, seed=seed)) for L in cfg.expert_grid for seed in cfg.sweep_seeds]
    return run_cells(jobs, bundle, cfg.workers)


def write_expert_sweep(results: list[CellResult], path) -> Path:
    path = Path(path)
    rows = [[r.key[0], r.seed, _f(r.ccc), _f(r.pcc), _f(r.mae)] for r in results]
    for (L,), s in summarize(results).items():
        rows.append([L, "mean", _f(s["ccc"]), _f(s["pcc"]), _f(s["mae"])])
        rows.append([L, "std", _f(s["ccc_std"]), _f(s["pcc_std"]), _f(s["mae_std"])])
    write_csv(path, ["emotion_experts", "seed", "ccc", "pcc", "mae"], rows)
    return path


@dataclass
class ExpertCheck:
    grid: list[int]
    mean_ccc: list[float]
    pooled_std: float
    best: int
    margin: float

    @property
    def ok(self) -> bool:
        return self.margin > self.pooled_std


def check_expert_sweep(results: list[CellResult]) -> ExpertCheck:
    """Best L must beat L=1 by more than the pooled seed std."""
    s = summarize(results)
    grid = sorted(k[0] for k in s)
    means = [s[(L,)]["ccc"] for L in grid]
    pooled = math.sqrt(np.mean([s[(L,)]["ccc_std"] ** 2 for L in grid]))
    best = grid[int(np.argmax(means))]
    return ExpertCheck(grid, means, pooled, best, max(means) - s[(grid[0],)]["ccc"])


# ---------------------------------------------------------------- ablations

def ablate(cfg: RunConfig, bundle: DatasetBundle | None = None, variants: dict | None = None) -> list[CellResult]:
    bundle = bundle or load_bundle(cfg)
    variants = ABLATIONS if variants is None else variants
    jobs = [((name,), replace(cfg, model="himoe", seed=seed, **changes))
            for seed in cfg.sweep_seeds for name, changes in variants.items()]
    return run_cells(jobs, bundle, cfg.workers)


def ablation_deltas(results: list[CellResult], reference: str = "full") -> dict[str, list[float]]:
    """Per-seed CCC difference (variant - reference) for every non-reference variant."""
    ref = {r.seed: r.ccc for r in results if r.key == (reference,)}
    out: dict[str, list[float]] = {}
    for r in results:
        if r.key != (reference,):
            out.setdefault(r.key[0], []).append(r.ccc - ref[r.seed])
    return out


def sign_test_p(deltas) -> float:
    """One-sided exact sign test p-value for 'the variant is worse' (ties count against)."""
    n = len(deltas)
    k = sum(1 for d in deltas if d < 0)
    return sum(math.comb(n, j) for j in range(k, n + 1)) / 2 ** n


def write_ablation(results: list[CellResult], path) -> Path:
    path = Path(path)
    ref = {r.seed: r.ccc for r in results if r.key == ("full",)}
    rows = [[r.key[0], r.seed, _f(r.ccc), _f(r.pcc), _f(r.mae), _f(r.ccc - ref.get(r.seed, math.nan))] for r in results]
    write_csv(path, ["variant", "seed", "ccc", "pcc", "mae", "delta_ccc"], rows)
    return path


# ---------------------------------------------------------------- routing report

def pattern_string(row: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in row)


def routing_rows(model, batch) -> list[list]:
    """Mean gate weight per (pattern, modality, expert) and mean fusion weight per (pattern, modality)."""
    out = model.forward(batch)
    alphas = [a.data for a in out.bank.alphas]
    fusion = out.bank.fusion_weights.data
    patterns = [pattern_string(p) for p in batch.presence]
    rows = []
    for pat in sorted(set(patterns), key=lambda p: (-p.count("1"), p), reverse=False):
        idx = np.array([i for i, p in enumerate(patterns) if p == pat])
        for m, name in enumerate(model.modalities):
            for k, w in enumerate(alphas[m][idx].mean(axis=0)):
                rows.append([pat, name, k, _f(float(w))])
            rows.append([pat, name, "fusion", _f(float(fusion[idx, m].mean()))])
    return rows


def report_routing(model, bundle: DatasetBundle, cfg: RunConfig, path) -> Path:
    if getattr(model, "kind", "") != "himoe":
        raise ValueError("routing report needs a himoe checkpoint")
    batch = eval_batch(bundle[cfg.eval_split], cfg.routing_missing_rate, cfg.seed, salt=99)
    path = Path(path)
    write_csv(path, ["presence_pattern", "modality", "expert_index", "mean_weight"], routing_rows(model, batch))
    return path
