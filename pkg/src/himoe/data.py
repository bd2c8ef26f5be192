"""Synthetic multimodal affect data with known latent trajectories.

Each trial draws a smooth latent emotion trajectory per dimension on the
1-9 rating scale.  Every modality observes that trajectory through its own
fixed random affine map, a tanh squashing, an optional response lag and
Gaussian noise.  Streams are cut into sliding windows whose label is the
latent value at the window's last sample.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_DIMS = ("V", "A", "D", "L")
DEFAULT_MODALITIES = ("eeg", "pps", "face", "eda", "eog", "emg", "ecg", "resp")
FLOAT_FMT = "%.9g"
STUDIED_MAX_MISSING_RATE = 0.4


OBSERVATIONS = ("signed", "magnitude", "polarity")
_VIEW_CODES = {"s": "signed", "m": "magnitude", "p": "polarity"}


def _valid_observe(code: str, D: int) -> bool:
    return code in OBSERVATIONS or (len(code) == D and set(code) <= set(_VIEW_CODES))


@dataclass(frozen=True)
class ModalitySpec:
    """One sensor stream.

    ``observe`` picks what the stream sees of the normalised latent u in
    [-1, 1]: u itself ("signed"), only its intensity 2|u| - 1 ("magnitude"),
    or only its direction tanh(4u) ("polarity").  A string of one code per
    emotion dimension ("s", "m", "p", e.g. "ssmp") mixes views per dimension.
    """

    name: str
    d_raw: int = 4
    lag_steps: int = 0
    noise_std: float = 0.1
    observe: str = "signed"


@dataclass(frozen=True)
class GeneratorConfig:
    modalities: tuple[ModalitySpec, ...] = field(default_factory=lambda: default_modalities(4))
    dims: tuple[str, ...] = DEFAULT_DIMS
    sample_rate: float = 4.0
    trial_len_s: float = 60.0
    window_len_s: float = 4.0
    step_s: float = 2.0
    trials: tuple[int, int, int] = (69, 12, 12)
    n_sinusoids: tuple[int, int] = (3, 6)
    freq_range: tuple[float, float] = (0.01, 0.08)
    map_gain: float = 1.5
    map_kind: str = "random"
    missing_rate: float = 0.0
    label_missing_rate: float = 0.0
    nuisance_gain: float = 0.0
    corrupt_rate: float = 0.0
    corrupt_std: float = 1.0
    regime_flip: float = 0.0
    regime_offset: float = 0.5
    regime_shared: bool = False  # one flip draw per trial instead of per modality

    @property
    def window_samples(self) -> int:
        return int(round(self.window_len_s * self.sample_rate))

    @property
    def step_samples(self) -> int:
        return int(round(self.step_s * self.sample_rate))

    @property
    def trial_samples(self) -> int:
        return int(round(self.trial_len_s * self.sample_rate))

    @property
    def smoothness_bound(self) -> float:
        """Largest possible per-sample change of any latent value."""
        return 4.0 * 2.0 * math.pi * self.freq_range[1] / self.sample_rate

    def validate(self) -> None:
        if len(self.modalities) < 2:
            raise ConfigError("need at least two modalities")
        if len({m.name for m in self.modalities}) != len(self.modalities):
            raise ConfigError("modality names must be unique")
        if self.step_s <= 0:
            raise ConfigError(f"step_s must be positive, got {self.step_s}")
        if self.window_len_s > self.trial_len_s:
            raise ConfigError(f"window ({self.window_len_s} s) longer than trial ({self.trial_len_s} s)")
        if self.map_kind not in ("random", "identity"):
            raise ConfigError(f"unknown map_kind {self.map_kind!r}")
        for m in self.modalities:
            if m.lag_steps < 0 or m.noise_std < 0 or m.d_raw < 1 or not _valid_observe(m.observe, len(self.dims)):
                raise ConfigError(f"bad modality spec {m}")
            if self.map_kind == "identity" and m.d_raw < len(self.dims):
                raise ConfigError("identity maps need d_raw >= number of emotion dimensions")
        if not (0 <= self.corrupt_rate <= 1 and self.nuisance_gain >= 0 and self.corrupt_std >= 0):
            raise ConfigError("corrupt_rate must lie in [0, 1]; nuisance_gain and corrupt_std >= 0")
        if not 0 <= self.regime_flip <= 1:
            raise ConfigError(f"regime_flip must lie in [0, 1], got {self.regime_flip}")
        lo, hi = self.n_sinusoids
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad sinusoid count range {self.n_sinusoids}")


def default_modalities(M: int, d_raw: int = 4, lags=None, noise_std: float = 0.1, observe=None) -> tuple[ModalitySpec, ...]:
    lags = [0] * M if lags is None else list(lags)
    observe = ["signed"] * M if observe is None else list(observe)
    names = DEFAULT_MODALITIES if M <= len(DEFAULT_MODALITIES) else [f"mod{i}" for i in range(M)]
    return tuple(ModalitySpec(names[i], d_raw, int(lags[i]), noise_std, observe[i]) for i in range(M))


# ---------------------------------------------------------------- batches

@dataclass(eq=False)
class SampleBatch:
    """Windowed inputs for one split.

    ``features[name]`` is B x (window_samples * d_raw); rows of an absent
    modality are expected to be zero but consumers re-mask defensively.
    """

    features: dict[str, np.ndarray]
    presence: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    trial: np.ndarray

    def __post_init__(self):
        B = self.labels.shape[0]
        if self.presence.shape != (B, len(self.features)):
            raise ContractError(f"presence shape {self.presence.shape} != ({B}, {len(self.features)})")
        if self.label_mask.shape != self.labels.shape:
            raise ContractError("label_mask and labels disagree in shape")
        for name, x in self.features.items():
            if x.ndim != 2 or x.shape[0] != B:
                raise ContractError(f"features[{name}] has shape {x.shape}, expected ({B}, n)")
        if B and not self.presence.any(axis=1).all():
            raise ContractError("every row needs at least one present modality")

    @property
    def modalities(self) -> list[str]:
        return list(self.features)

    @property
    def M(self) -> int:
        return len(self.features)

    @property
    def B(self) -> int:
        return self.labels.shape[0]

    def __len__(self) -> int:
        return self.B

    def subset(self, idx) -> SampleBatch:
        return SampleBatch(
            {k: v[idx] for k, v in self.features.items()},
            self.presence[idx],
            self.labels[idx],
            self.label_mask[idx],
            self.trial[idx],
        )

    def with_presence(self, presence: np.ndarray) -> SampleBatch:
        """Same samples under a new mask; newly absent rows are zeroed."""
        presence = np.asarray(presence, dtype=bool)
        feats = {
            k: np.where(presence[:, [m]], v, 0.0) for m, (k, v) in enumerate(self.features.items())
        }
        return SampleBatch(feats, presence, self.labels, self.label_mask, self.trial)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleBatch) or self.modalities != other.modalities:
            return False
        return (
            all(np.array_equal(self.features[k], other.features[k]) for k in self.features)
            and np.array_equal(self.presence, other.presence)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.label_mask, other.label_mask)
            and np.array_equal(self.trial, other.trial)
        )


@dataclass(eq=False)
class DatasetBundle:
    manifest: dict
    splits: dict[str, SampleBatch]

    def __getitem__(self, split: str) -> SampleBatch:
        return self.splits[split]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DatasetBundle)
            and self.manifest == other.manifest
            and self.splits.keys() == other.splits.keys()
            and all(self.splits[k] == other.splits[k] for k in self.splits)
        )


# ---------------------------------------------------------------- primitives

def slide_windows(stream: np.ndarray, window_len_s: float, step_s: float, sample_rate: float) -> np.ndarray:
    """Cut a T_raw x d_raw stream into flattened, row-major windows."""
    if step_s <= 0:
        raise ConfigError(f"step_s must be positive, got {step_s}")
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim == 1:
        stream = stream[:, None]
    win = int(round(window_len_s * sample_rate))
    step = int(round(step_s * sample_rate))
    if step < 1 or win < 1:
        raise ConfigError("window and step must each span at least one sample")
    T_raw = stream.shape[0]
    if win > T_raw:
        raise ConfigError(f"window of {win} samples exceeds trial of {T_raw}")
    n = (T_raw - win) // step + 1
    starts = np.arange(n) * step
    return np.stack([stream[s:s + win].reshape(-1) for s in starts])


def window_end_indices(T_raw: int, win: int, step: int) -> np.ndarray:
    n = (T_raw - win) // step + 1
    return np.arange(n) * step + win - 1


def sample_presence(B: int, M: int, r: float, seed=None) -> np.ndarray:
    """Independent per-cell absence with probability ``r``; empty rows get one modality back."""
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"missing rate must lie in [0, 1], got {r}")
    if r > STUDIED_MAX_MISSING_RATE:
        warnings.warn(f"missing rate {r} is beyond the studied 0-0.4 range", stacklevel=2)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    present = rng.random((B, M)) >= r
    empty = np.flatnonzero(~present.any(axis=1))
    if empty.size:
        present[empty, rng.integers(0, M, size=empty.size)] = True
    return present


def missing_rate_grid(step: float = 0.05, top: float = 0.40) -> list[float]:
    n = int(round(top / step))
    return [round(i * step, 10) for i in range(n + 1)]


def quantize(x: np.ndarray) -> np.ndarray:
    """Round to the values the CSV format stores (9 significant digits)."""
    x = np.asarray(x, dtype=np.float64)
    flat = np.char.mod(FLOAT_FMT, x.reshape(-1)).astype(np.float64)
    return flat.reshape(x.shape)


# ---------------------------------------------------------------- generator

def latent_trajectory(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    """T_raw x D trajectory; each column a random sinusoid sum squeezed into [1, 9]."""
    t = np.arange(cfg.trial_samples) / cfg.sample_rate
    cols = []
    for _ in cfg.dims:
        n = int(rng.integers(cfg.n_sinusoids[0], cfg.n_sinusoids[1] + 1))
        amp = rng.uniform(0.5, 1.0, n)
        freq = rng.uniform(*cfg.freq_range, n)
        phase = rng.uniform(0.0, 2.0 * math.pi, n)
        s = (amp[:, None] * np.sin(2.0 * math.pi * freq[:, None] * t[None, :] + phase[:, None])).sum(0)
        # the amplitude sum bounds |s|, so this stays in [1, 9] for every draw
        cols.append(5.0 + 4.0 * s / amp.sum())
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class ObservationMap:
    A: np.ndarray
    c: np.ndarray
    N: np.ndarray | None = None


def modality_maps(rng: np.random.Generator, cfg: GeneratorConfig) -> list[ObservationMap]:
    D = len(cfg.dims)
    maps = []
    for m in cfg.modalities:
        if cfg.map_kind == "identity":
            A = np.zeros((m.d_raw, D))
            A[:D, :D] = np.eye(D)
            c = np.zeros(m.d_raw)
        else:
            A = rng.normal(0.0, cfg.map_gain / math.sqrt(D), (m.d_raw, D))
            c = rng.normal(0.0, 0.1, m.d_raw)
        N = rng.normal(0.0, cfg.nuisance_gain / math.sqrt(D), (m.d_raw, D)) if cfg.nuisance_gain > 0 else None
        maps.append(ObservationMap(A, c, N))
    return maps


def _view(u: np.ndarray, kind: str) -> np.ndarray:
    if kind not in OBSERVATIONS:
        return np.stack([_view(u[:, j], _VIEW_CODES[c]) for j, c in enumerate(kind)], axis=1)
    if kind == "magnitude":
        return 2.0 * np.abs(u) - 1.0
    if kind == "polarity":
        return np.tanh(4.0 * u)
    return u


def observe(latent: np.ndarray, spec: ModalitySpec, obs: ObservationMap, rng: np.random.Generator,
            nuisance: np.ndarray | None = None, sign: float = 1.0, offset: float = 0.0) -> np.ndarray:
    """Raw stream for one modality: lagged latent -> affine -> tanh -> noise.

    ``nuisance`` is a private, label-free trajectory mixed in through ``obs.N``.
    ``sign`` = -1 flips the response (a reversed sensor regime); the regime is
    announced by a constant ``sign * offset`` shift of the whole stream.
    """
    idx = np.maximum(np.arange(latent.shape[0]) - spec.lag_steps, 0)
    u = _view((latent[idx] - 5.0) / 4.0, spec.observe)
    pre = u @ obs.A.T + obs.c
    if obs.N is not None and nuisance is not None:
        pre = pre + ((nuisance - 5.0) / 4.0) @ obs.N.T
    raw = sign * np.tanh(pre) + sign * offset
    if spec.noise_std > 0:
        raw = raw + rng.normal(0.0, spec.noise_std, raw.shape)
    return raw


def corrupt_windows(windows: np.ndarray, rate: float, std: float, rng: np.random.Generator) -> np.ndarray:
    """Replace a random subset of windows by pure artifact noise."""
    if rate <= 0:
        return windows
    hit = rng.random(windows.shape[0]) < rate
    out = windows.copy()
    out[hit] = rng.normal(0.0, std, (int(hit.sum()), windows.shape[1]))
    return out


def _generate_split(cfg: GeneratorConfig, maps, n_trials: int, trial_offset: int, rng: np.random.Generator,
                    label_missing_rate: float = 0.0) -> SampleBatch:
    win, step, T_raw = cfg.window_samples, cfg.step_samples, cfg.trial_samples
    ends = window_end_indices(T_raw, win, step)
    feats: dict[str, list[np.ndarray]] = {m.name: [] for m in cfg.modalities}
    labels, trials = [], []
    for k in range(n_trials):
        latent = latent_trajectory(rng, cfg)
        shared = -1.0 if cfg.regime_shared and rng.random() < cfg.regime_flip else 1.0
        for spec, obs in zip(cfg.modalities, maps):
            nuisance = latent_trajectory(rng, cfg) if obs.N is not None else None
            sign, offset = 1.0, 0.0
            if cfg.regime_flip > 0:
                sign = shared if cfg.regime_shared else (-1.0 if rng.random() < cfg.regime_flip else 1.0)
                offset = cfg.regime_offset
            raw = observe(latent, spec, obs, rng, nuisance, sign, offset)
            windows = slide_windows(raw, cfg.window_len_s, cfg.step_s, cfg.sample_rate)
            feats[spec.name].append(corrupt_windows(windows, cfg.corrupt_rate, cfg.corrupt_std, rng))
        labels.append(latent[ends])
        trials.append(np.full(ends.size, trial_offset + k))
    B = sum(len(x) for x in labels)
    M, D = len(cfg.modalities), len(cfg.dims)
    presence = sample_presence(B, M, cfg.missing_rate, rng) if cfg.missing_rate > 0 else np.ones((B, M), bool)
    label_mask = rng.random((B, D)) >= label_missing_rate if label_missing_rate > 0 else np.ones((B, D), bool)
    lab = quantize(np.concatenate(labels))
    batch = SampleBatch(
        {name: quantize(np.concatenate(v)) for name, v in feats.items()},
        presence,
        np.where(label_mask, lab, 0.0),
        label_mask,
        np.concatenate(trials).astype(np.int64),
    )
    return batch.with_presence(presence)


def make_manifest(cfg: GeneratorConfig, seed: int, sizes: dict[str, int]) -> dict:
    return {
        "format": "himoe-dataset/1",
        "seed": int(seed),
        "modalities": [
            {"name": m.name, "d_raw": m.d_raw, "lag_steps": m.lag_steps, "noise_std": m.noise_std, "observe": m.observe}
            for m in cfg.modalities
        ],
        "window_samples": cfg.window_samples,
        "window_len_s": cfg.window_len_s,
        "step_s": cfg.step_s,
        "sample_rate": cfg.sample_rate,
        "dims": list(cfg.dims),
        "D_emo": len(cfg.dims),
        "splits": dict(sizes),
        "generator": _config_to_json(cfg),
    }


def _config_to_json(cfg: GeneratorConfig) -> dict:
    d = asdict(cfg)
    d["modalities"] = [asdict(m) for m in cfg.modalities]
    return json.loads(json.dumps(d))


def config_from_json(d: dict) -> GeneratorConfig:
    d = dict(d)
    d["modalities"] = tuple(ModalitySpec(**m) for m in d["modalities"])
    for key in ("dims", "trials", "n_sinusoids", "freq_range"):
        d[key] = tuple(d[key])
    return GeneratorConfig(**d)


def generate(cfg: GeneratorConfig | None = None, seed: int = 0) -> DatasetBundle:
    """Deterministic train/val/test bundle for ``(cfg, seed)``.

    Maps are shared by all splits; splits never share a trial.
    """
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    root = np.random.SeedSequence(seed)
    map_seq, *split_seqs = root.spawn(1 + len(SPLITS))
    maps = modality_maps(np.random.default_rng(map_seq), cfg)
    splits, offset = {}, 0
    for name, n_trials, seq in zip(SPLITS, cfg.trials, split_seqs):
        # only training labels go missing; evaluation splits stay fully labelled
        lm = cfg.label_missing_rate if name == "train" else 0.0
        splits[name] = _generate_split(cfg, maps, n_trials, offset, np.random.default_rng(seq), lm)
        offset += n_trials
    manifest = make_manifest(cfg, seed, {k: v.B for k, v in splits.items()})
    log.debug("generated %s", manifest["splits"])
    return DatasetBundle(manifest, splits)


def recover_latent(window_row: np.ndarray, d_raw: int, D: int) -> np.ndarray:
    """Invert the noiseless identity-map generator at a window's last sample."""
    last = np.asarray(window_row).reshape(-1, d_raw)[-1, :D]
    return 5.0 + 4.0 * np.arctanh(last)


# ---------------------------------------------------------------- disk format

def _header(n: int) -> str:
    return ",".join(f"f{i}" for i in range(n))


def _write_csv(path: Path, header: str, rows: np.ndarray, fmt) -> None:
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, rows, fmt=fmt, delimiter=",", header=header, comments="", newline="\n")


def _read_csv(path: Path, header: str, n_rows: int, dtype=np.float64) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"{path.name}: file missing")
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != header:
            raise FormatError(f"{path.name}: header mismatch (expected {header[:40]!r}, got {first[:40]!r})")
        try:
            rows = np.loadtxt(fh, delimiter=",", dtype=dtype, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path.name}: unparsable row ({exc})") from exc
    n_cols = header.count(",") + 1
    if n_rows == 0:
        rows = rows.reshape(0, n_cols)
    if rows.shape[0] != n_rows:
        raise FormatError(f"{path.name}: expected {n_rows} rows, found {rows.shape[0]}")
    if rows.shape[1] != n_cols:
        raise FormatError(f"{path.name}: expected {n_cols} columns, found {rows.shape[1]}")
    return rows


def _labels_header(dims) -> str:
    return ",".join(["trial", *dims, *(f"mask_{d}" for d in dims)])


def write_dataset(bundle: DatasetBundle, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    man = bundle.manifest
    dims = man["dims"]
    names = [m["name"] for m in man["modalities"]]
    for split, batch in bundle.splits.items():
        for name in names:
            x = batch.features[name]
            _write_csv(path / f"{split}.{name}.csv", _header(x.shape[1]), x, FLOAT_FMT)
        D = len(dims)
        table = np.concatenate(
            [batch.trial[:, None].astype(np.float64), batch.labels, batch.label_mask.astype(np.float64)], axis=1
        )
        fmt = ["%d"] + [FLOAT_FMT] * D + ["%d"] * D
        _write_csv(path / f"{split}.labels.csv", _labels_header(dims), table, fmt)
        _write_csv(path / f"{split}.presence.csv", ",".join(names), batch.presence.astype(np.int64), "%d")
    (path / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> DatasetBundle:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise FormatError(f"{mf.name}: file missing")
    try:
        man = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mf.name}: not valid JSON ({exc})") from exc
    dims = man["dims"]
    D = len(dims)
    win = man["window_samples"]
    names = [m["name"] for m in man["modalities"]]
    splits = {}
    for split, n in man["splits"].items():
        feats = {
            m["name"]: _read_csv(path / f"{split}.{m['name']}.csv", _header(win * m["d_raw"]), n)
            for m in man["modalities"]
        }
        table = _read_csv(path / f"{split}.labels.csv", _labels_header(dims), n)
        pres = _read_csv(path / f"{split}.presence.csv", ",".join(names), n, dtype=np.int64)
        try:
            splits[split] = SampleBatch(
                feats, pres.astype(bool), table[:, 1:1 + D], table[:, 1 + D:].astype(bool), table[:, 0].astype(np.int64)
            )
        except ContractError as exc:
            raise FormatError(f"{split}: {exc}") from exc
    return DatasetBundle(man, splits)


def with_lags(cfg: GeneratorConfig, lags) -> GeneratorConfig:
    mods = tuple(replace(m, lag_steps=int(l)) for m, l in zip(cfg.modalities, lags))
    return replace(cfg, modalities=mods)
