"""Run configuration: flat ``key = value`` files plus ``--set`` overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import GeneratorConfig, ModalitySpec, default_modalities, missing_rate_grid
from .errors import ConfigError
from .heads import BINARY, REGRESSION
from .model import ModelConfig


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _k(key: str, parse):
    return {"key": key, "parse": parse}


_R_GRID = ",".join(f"{r:.2f}" for r in missing_rate_grid())


@dataclass(frozen=True)
class RunConfig:
    seed: int = field(default=0, metadata=_k("seed", int))
    model: str = field(default="himoe", metadata=_k("model", str))
    epochs: int = field(default=30, metadata=_k("train.epochs", int))
    batch_size: int = field(default=32, metadata=_k("train.batch_size", int))
    lr: float = field(default=1e-3, metadata=_k("train.lr", float))
    lr_min: float = field(default=1e-5, metadata=_k("train.lr_min", float))
    beta1: float = field(default=0.9, metadata=_k("adam.beta1", float))
    beta2: float = field(default=0.999, metadata=_k("adam.beta2", float))
    adam_eps: float = field(default=1e-8, metadata=_k("adam.eps", float))
    horizon: int = field(default=0, metadata=_k("schedule.horizon_epochs", int))
    patience: int = field(default=10, metadata=_k("train.patience", int))
    missing_rate: float = field(default=0.0, metadata=_k("train.missing_rate", float))
    d: int = field(default=32, metadata=_k("encoder.out_dim", int))
    enc_hidden: int = field(default=64, metadata=_k("encoder.hidden", int))
    expert_hidden: int = field(default=32, metadata=_k("moe.expert_hidden", int))
    K: int = field(default=4, metadata=_k("moe.modality_experts", int))
    L: int = field(default=6, metadata=_k("moe.emotion_experts", int))
    soft_routing: bool = field(default=True, metadata=_k("moe.soft_routing", _bool))
    emotion_bank: bool = field(default=True, metadata=_k("moe.emotion_bank", _bool))
    tau: float = field(default=0.1, metadata=_k("align.tau", float))
    align_enabled: bool = field(default=True, metadata=_k("align.enabled", _bool))
    lam: float = field(default=0.1, metadata=_k("loss.lambda", float))
    head_modes: str = field(default="regression", metadata=_k("heads.mode", str))
    baseline_hidden: int = field(default=64, metadata=_k("baseline.hidden", int))
    r_grid: tuple[float, ...] = field(default=_floats(_R_GRID), metadata=_k("sweep.r_grid", _floats))
    sweep_seeds: tuple[int, ...] = field(default=(0, 1, 2, 3, 4), metadata=_k("sweep.seeds", _ints))
    expert_grid: tuple[int, ...] = field(default=(1, 2, 4, 6, 8, 12), metadata=_k("sweep.emotion_experts", _ints))
    workers: int = field(default=1, metadata=_k("sweep.workers", int))
    dataset: str = field(default="", metadata=_k("dataset", str))
    output_dir: str = field(default="runs/default", metadata=_k("output_dir", str))
    eval_split: str = field(default="val", metadata=_k("eval.split", str))
    routing_missing_rate: float = field(default=0.3, metadata=_k("routing.missing_rate", float))
    synth_seed: int = field(default=0, metadata=_k("synth.seed", int))
    synth_M: int = field(default=4, metadata=_k("synth.modalities", int))
    synth_d_raw: int = field(default=4, metadata=_k("synth.d_raw", int))
    synth_lags: tuple[int, ...] = field(default=(), metadata=_k("synth.lags", _ints))
    synth_noise: float = field(default=0.1, metadata=_k("synth.noise_std", float))
    synth_trials: tuple[int, ...] = field(default=(69, 12, 12), metadata=_k("synth.trials", _ints))
    synth_sample_rate: float = field(default=4.0, metadata=_k("synth.sample_rate", float))
    synth_trial_len: float = field(default=60.0, metadata=_k("synth.trial_len_s", float))
    synth_window: float = field(default=4.0, metadata=_k("synth.window_len_s", float))
    synth_step: float = field(default=2.0, metadata=_k("synth.step_s", float))
    synth_map_gain: float = field(default=1.5, metadata=_k("synth.map_gain", float))
    synth_missing_rate: float = field(default=0.0, metadata=_k("synth.missing_rate", float))
    synth_label_missing_rate: float = field(default=0.0, metadata=_k("synth.label_missing_rate", float))
    synth_observe: tuple[str, ...] = field(default=(), metadata=_k("synth.observe", _strs))
    synth_nuisance: float = field(default=0.0, metadata=_k("synth.nuisance_gain", float))
    synth_corrupt_rate: float = field(default=0.0, metadata=_k("synth.corrupt_rate", float))
    synth_corrupt_std: float = field(default=1.0, metadata=_k("synth.corrupt_std", float))
    synth_regime_flip: float = field(default=0.0, metadata=_k("synth.regime_flip", float))
    synth_regime_shared: bool = field(default=False, metadata=_k("synth.regime_shared", _bool))

    def __post_init__(self):
        if self.model not in ("himoe", "baseline"):
            raise ConfigError(f"model must be himoe or baseline, got {self.model!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigError(f"missing rate must lie in [0, 1], got {self.missing_rate}")
        if self.lam < 0 or self.tau <= 0:
            raise ConfigError("loss.lambda must be >= 0 and align.tau > 0")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigError(f"unknown eval split {self.eval_split!r}")
        for mode in self.head_modes.split(","):
            if mode not in (REGRESSION, BINARY):
                raise ConfigError(f"unknown head mode {mode!r}")

    # ------------------------------------------------------------ conversion

    @classmethod
    def keys(cls) -> dict[str, str]:
        return {f.metadata["key"]: f.name for f in fields(cls)}

    def with_overrides(self, pairs: dict[str, str]) -> RunConfig:
        keymap = self.keys()
        by_name = {f.name: f for f in fields(self)}
        changes = {}
        modes = None
        for key, raw in pairs.items():
            if key.startswith("heads.mode."):
                modes = dict(modes or {})
                modes[key.split(".", 2)[2]] = str(raw).strip()
                continue
            if key not in keymap:
                raise ConfigError(f"unknown config key {key!r}")
            name = keymap[key]
            try:
                changes[name] = by_name[name].metadata["parse"](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        cfg = replace(self, **changes)
        if modes:
            dims = cfg.generator().dims
            current = dict(zip(dims, cfg.modes(len(dims))))
            unknown = set(modes) - set(dims)
            if unknown:
                raise ConfigError(f"heads.mode for unknown dimension(s) {sorted(unknown)}")
            current.update(modes)
            cfg = replace(cfg, head_modes=",".join(current[d] for d in dims))
        return cfg

    def to_flat(self) -> dict[str, object]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.metadata["key"]] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
        return out

    def modes(self, D: int) -> tuple[str, ...]:
        parts = self.head_modes.split(",")
        if len(parts) == 1:
            return (parts[0],) * D
        if len(parts) != D:
            raise ConfigError(f"heads.mode lists {len(parts)} modes for {D} dimensions")
        return tuple(parts)

    def model_config(self, D: int) -> ModelConfig:
        return ModelConfig(
            d=self.d, enc_hidden=self.enc_hidden, expert_hidden=self.expert_hidden, K=self.K, L=self.L,
            tau=self.tau, lam=self.lam, align_enabled=self.align_enabled, use_emotion_bank=self.emotion_bank,
            soft_routing=self.soft_routing, modes=self.modes(D), baseline_hidden=self.baseline_hidden,
        )

    def generator(self) -> GeneratorConfig:
        lags = self.synth_lags or (0,) * self.synth_M
        if len(lags) != self.synth_M:
            raise ConfigError(f"synth.lags has {len(lags)} entries for {self.synth_M} modalities")
        if len(self.synth_trials) != 3:
            raise ConfigError("synth.trials needs train,val,test counts")
        observe = self.synth_observe or ("signed",) * self.synth_M
        if len(observe) != self.synth_M:
            raise ConfigError(f"synth.observe has {len(observe)} entries for {self.synth_M} modalities")
        mods: tuple[ModalitySpec, ...] = default_modalities(self.synth_M, self.synth_d_raw, lags, self.synth_noise, observe)
        return GeneratorConfig(
            modalities=mods, sample_rate=self.synth_sample_rate, trial_len_s=self.synth_trial_len,
            window_len_s=self.synth_window, step_s=self.synth_step, trials=tuple(self.synth_trials),
            map_gain=self.synth_map_gain, missing_rate=self.synth_missing_rate,
            label_missing_rate=self.synth_label_missing_rate, nuisance_gain=self.synth_nuisance,
            corrupt_rate=self.synth_corrupt_rate, corrupt_std=self.synth_corrupt_std,
            regime_flip=self.synth_regime_flip, regime_shared=self.synth_regime_shared,
        )


def parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    pairs: dict[str, str] = {}
    if path:
        pairs.update(parse_kv_text(Path(path).read_text()))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return RunConfig().with_overrides(pairs)
