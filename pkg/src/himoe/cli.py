"""Command-line entry point: ``himoe <command> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as X
from .config import load_config
from .data import generate, write_dataset
from .errors import HiMoEError
from .gradcheck import run_gradcheck
from .train import METRIC_COLUMNS, eval_batch, evaluate_model, load_bundle, load_trained, metrics_rows, train, write_csv

log = logging.getLogger("himoe")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (defaults to output_dir from the config)")
    _verbose(p)


def _verbose(p: argparse.ArgumentParser) -> None:
    # accepted before or after the subcommand
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="himoe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("synth", "generate a synthetic dataset directory"),
        ("train", "train one model; writes metrics.csv, history.csv, checkpoint/, run_manifest.json"),
        ("sweep-missing", "missing-rate sweep for himoe and the baseline -> degradation_curve.csv"),
        ("sweep-experts", "emotion-expert count sweep -> expert_sweep.csv"),
        ("ablate", "component ablations -> ablation.csv"),
    ]:
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("eval", help="evaluate a trained run directory -> metrics.csv")
    _common(p)
    p.add_argument("run_dir")
    p.add_argument("--split", default=None, choices=["train", "val", "test"])
    p.add_argument("--missing-rate", type=float, default=None)

    p = sub.add_parser("report-routing", help="average routing weights per presence pattern -> routing_weights.csv")
    _common(p)
    p.add_argument("run_dir")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the composite losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help="include a deliberately wrong op (negative control)")
    _verbose(p)
    return ap


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except HiMoEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # ConfigError / FormatError / DimensionError subclass ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "gradcheck":
        report = run_gradcheck(seed=args.seed, tolerance=args.tol, corrupt=args.corrupt)
        print(report.format())
        return 0 if report.ok else 1

    cfg = load_config(args.config, args.overrides)

    if args.command == "synth":
        out = _out(args, cfg)
        write_dataset(generate(cfg.generator(), cfg.synth_seed), out)
        print(out)
        return 0

    if args.command == "train":
        out = _out(args, cfg)
        result = train(cfg, out_dir=out)
        print(f"best epoch {result.best_epoch}  val ccc {result.val_ccc:.4f}  -> {out}")
        return 0

    if args.command == "eval":
        model, run_cfg, bundle = load_trained(args.run_dir, load_bundle(cfg) if cfg.dataset else None)
        split = args.split or cfg.eval_split
        r = run_cfg.missing_rate if args.missing_rate is None else args.missing_rate
        salt = {"train": 0, "val": 1, "test": 2}[split]
        rep = evaluate_model(model, eval_batch(bundle[split], r, run_cfg.seed, salt), bundle.manifest["dims"],
                             run_cfg.seed, r, split)
        out = Path(args.out or args.run_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics_rows(rep))
        print(f"{split} mean ccc {rep.mean_ccc:.4f} at r={r:g}")
        return 0

    if args.command == "report-routing":
        model, run_cfg, bundle = load_trained(args.run_dir, load_bundle(cfg) if cfg.dataset else None)
        out = Path(args.out or args.run_dir)
        out.mkdir(parents=True, exist_ok=True)
        view_cfg = replace(run_cfg, routing_missing_rate=cfg.routing_missing_rate, eval_split=cfg.eval_split)
        print(X.report_routing(model, bundle, view_cfg, out / "routing_weights.csv"))
        return 0

    out = _out(args, cfg)
    if args.command == "sweep-missing":
        results = X.sweep_missing(cfg)
        X.write_degradation(results, out / "degradation_curve.csv")
        chk = X.check_degradation(results)
        for r, f, b in zip(chk.rates, chk.full_mean, chk.base_mean):
            print(f"r={r:.2f}  himoe {f:.4f}  baseline {b:.4f}")
        print(f"monotone={chk.monotone} beats_baseline={chk.beats_baseline} gap_grows={chk.gap_grows}")
        return 0

    if args.command == "sweep-experts":
        results = X.sweep_experts(cfg)
        X.write_expert_sweep(results, out / "expert_sweep.csv")
        chk = X.check_expert_sweep(results)
        for L, m in zip(chk.grid, chk.mean_ccc):
            print(f"L={L:<3d} ccc {m:.4f}")
        print(f"best L={chk.best} margin over L=1 {chk.margin:.4f} pooled std {chk.pooled_std:.4f}")
        return 0

    if args.command == "ablate":
        results = X.ablate(cfg)
        X.write_ablation(results, out / "ablation.csv")
        for name, d in X.ablation_deltas(results).items():
            print(f"{name:<16s} mean delta {sum(d) / len(d):+.4f}  sign-test p={X.sign_test_p(d):.4f}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
