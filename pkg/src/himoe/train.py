"""Training loop, evaluation and run outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .baseline import build_model
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetBundle, SampleBatch, generate, read_dataset
from .errors import TrainingDiverged
from .metrics import MetricsReport, evaluate
from .optim import Adam, EarlyStopping, cosine_lr

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["split", "dimension", "ccc", "pcc", "mae", "acc", "f1", "seed", "missing_rate"]


def load_bundle(cfg: RunConfig) -> DatasetBundle:
    if cfg.dataset:
        return read_dataset(cfg.dataset)
    return generate(cfg.generator(), cfg.synth_seed)


def modality_dims(bundle: DatasetBundle) -> dict[str, int]:
    win = bundle.manifest["window_samples"]
    return {m["name"]: win * m["d_raw"] for m in bundle.manifest["modalities"]}


def combine_presence(stored: np.ndarray, r: float, rng: np.random.Generator) -> np.ndarray:
    """Drop each stored-present cell with probability r, keeping one per row."""
    if r <= 0:
        return stored.copy()
    drop = rng.random(stored.shape) < r
    out = stored & ~drop
    for row in np.flatnonzero(~out.any(axis=1)):
        out[row, rng.choice(np.flatnonzero(stored[row]))] = True
    return out


def eval_batch(batch: SampleBatch, r: float, seed: int, salt: int = 0) -> SampleBatch:
    """The fixed evaluation view of a split at missing rate ``r``.

    Depends only on (seed, r, salt), so different models see identical inputs.
    """
    if r <= 0:
        return batch
    rng = np.random.default_rng(np.random.SeedSequence([seed, int(round(r * 10_000)), 2718, salt]))
    return batch.with_presence(combine_presence(batch.presence, r, rng))


def predict_batches(model, batch: SampleBatch, chunk: int = 1024) -> np.ndarray:
    if batch.B <= chunk:
        return model.predict_numpy(batch)
    parts = [model.predict_numpy(batch.subset(np.arange(s, min(s + chunk, batch.B)))) for s in range(0, batch.B, chunk)]
    return np.concatenate(parts)


def evaluate_model(model, batch: SampleBatch, dims, seed=None, missing_rate=None, split="val") -> MetricsReport:
    preds = predict_batches(model, batch)
    return evaluate(preds, batch.labels, batch.label_mask, dims, model.cfg.modes, seed, missing_rate, split)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_emo: float
    train_ntxent: float
    val_loss: float
    val_ccc: float


@dataclass
class TrainResult:
    model: object
    history: list[EpochLog]
    best_epoch: int
    reports: dict[str, MetricsReport]
    out_dir: Path | None = None
    extras: dict = field(default_factory=dict)

    @property
    def val_ccc(self) -> float:
        return self.reports["val"].mean_ccc


def fit(cfg: RunConfig, bundle: DatasetBundle, model=None) -> TrainResult:
    """Train under per-epoch random masking at ``cfg.missing_rate``; keep the best-val state."""
    dims = bundle.manifest["dims"]
    if model is None:
        model = build_model(cfg.model, cfg.model_config(len(dims)), modality_dims(bundle), seed=cfg.seed)
    train, val = bundle["train"], bundle["val"]
    val_view = eval_batch(val, cfg.missing_rate, cfg.seed, salt=1)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31337]))
    opt = Adam(model.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    steps_per_epoch = max(1, math.ceil(train.B / cfg.batch_size))
    horizon = (cfg.horizon or cfg.epochs) * steps_per_epoch
    stopper = EarlyStopping(cfg.patience)
    best_state = model.params.state()
    history: list[EpochLog] = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_view = train.with_presence(combine_presence(train.presence, cfg.missing_rate, rng))
        order = rng.permutation(train.B)
        sums = np.zeros(3)
        lr = cfg.lr
        for bi, start in enumerate(range(0, train.B, cfg.batch_size)):
            mb = epoch_view.subset(order[start:start + cfg.batch_size])
            model.params.zero_grad()
            loss, parts = model.loss(mb)
            value = loss.item()
            if not math.isfinite(value):
                bad = [k for k, v in parts.items() if not math.isfinite(v)] or ["total"]
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {bi}: offending term(s) {bad}, parts={parts}")
            T.backward(loss)
            lr = cosine_lr(step, horizon, cfg.lr, cfg.lr_min)
            opt.step(lr)
            step += 1
            sums += (value, parts["emo"], parts["ntxent"])
        sums /= steps_per_epoch
        val_loss, _ = model.loss(val_view)
        report = evaluate_model(model, val_view, dims)
        score = report.mean_ccc
        history.append(EpochLog(epoch, lr, *sums, val_loss.item(), score))
        log.info("epoch %d loss %.4f val_loss %.4f val_ccc %.4f", epoch, sums[0], val_loss.item(), score)
        if stopper.update(score, epoch):
            best_state = model.params.state()
        if stopper.should_stop:
            log.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break
    model.params.load_state(best_state)
    reports = {
        split: evaluate_model(model, eval_batch(bundle[split], cfg.missing_rate, cfg.seed, salt=i + 1), dims,
                              cfg.seed, cfg.missing_rate, split)
        for i, split in enumerate(("val", "test"))
    }
    return TrainResult(model, history, stopper.best_epoch, reports)


# ---------------------------------------------------------------- outputs

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def metrics_rows(report: MetricsReport) -> list[list[str]]:
    rows = []
    for dim, m in report.dims.items():
        rows.append([report.split, dim, m.ccc, m.pcc, m.mae, m.acc, m.f1, report.seed, report.missing_rate])
    acc = report.mean("acc")
    f1 = report.mean("f1")
    rows.append([report.split, "mean", report.mean("ccc"), report.mean("pcc"), report.mean("mae"),
                 None if math.isnan(acc) else acc, None if math.isnan(f1) else f1, report.seed, report.missing_rate])
    return [[_fmt(v) for v in r] for r in rows]


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_run(result: TrainResult, cfg: RunConfig, bundle: DatasetBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for rep in result.reports.values() for r in metrics_rows(rep)]
    write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    write_csv(out / "history.csv", ["epoch", "lr", "train_loss", "train_emo", "train_ntxent", "val_loss", "val_ccc"],
              [[_fmt(getattr(h, k)) for k in ("epoch", "lr", "train_loss", "train_emo", "train_ntxent", "val_loss", "val_ccc")]
               for h in result.history])
    save_checkpoint(result.model.params.state(), out / "checkpoint")
    manifest = {
        "config": cfg.to_flat(),
        "model": result.model.kind,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "dataset_manifest": bundle.manifest,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    result.out_dir = out
    return out


def train(cfg: RunConfig, bundle: DatasetBundle | None = None, out_dir=None) -> TrainResult:
    bundle = bundle or load_bundle(cfg)
    result = fit(cfg, bundle)
    if out_dir is not None:
        write_run(result, cfg, bundle, out_dir)
    return result


def load_trained(run_dir, bundle: DatasetBundle | None = None):
    """Rebuild a model from a run directory's manifest and checkpoint."""
    from .config import RunConfig as _RC

    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    cfg = _RC().with_overrides({k: _flat_str(v) for k, v in manifest["config"].items()})
    if bundle is None:
        bundle = load_bundle(cfg)
    dims = bundle.manifest["dims"]
    model = build_model(cfg.model, cfg.model_config(len(dims)), modality_dims(bundle), seed=cfg.seed)
    model.params.load_state(load_checkpoint(run_dir / "checkpoint"))
    return model, cfg, bundle


def _flat_str(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
