import numpy as np
import pytest

from himoe.config import RunConfig, load_config
from himoe.data import GeneratorConfig, SampleBatch, default_modalities, generate
from himoe.heads import BINARY, REGRESSION
from himoe.model import HiMoE, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_gen() -> GeneratorConfig:
    return GeneratorConfig(modalities=default_modalities(3, d_raw=2), trial_len_s=20.0, trials=(4, 2, 2))


@pytest.fixture(scope="session")
def tiny_bundle(tiny_gen):
    return generate(tiny_gen, seed=5)


@pytest.fixture(scope="session")
def tiny_run_cfg() -> RunConfig:
    return load_config(None, [
        "synth.modalities=3", "synth.d_raw=2", "synth.trial_len_s=20", "synth.trials=6,2,2",
        "train.epochs=2", "encoder.out_dim=8", "encoder.hidden=8", "moe.expert_hidden=6",
        "moe.modality_experts=2", "moe.emotion_experts=2", "baseline.hidden=8",
    ])


@pytest.fixture
def toy_cfg() -> ModelConfig:
    return ModelConfig(d=4, enc_hidden=5, expert_hidden=3, K=2, L=2, tau=0.5, lam=0.5,
                       modes=(REGRESSION, BINARY, REGRESSION, REGRESSION), baseline_hidden=5)


@pytest.fixture
def toy_dims():
    return {"eeg": 6, "face": 6, "pps": 4}


@pytest.fixture
def toy_model(toy_cfg, toy_dims):
    return HiMoE(toy_cfg, toy_dims, seed=11)


def make_batch(rng, dims, B=6, presence=None):
    feats = {k: rng.normal(size=(B, n)) for k, n in dims.items()}
    if presence is None:
        presence = np.ones((B, len(dims)), bool)
    feats = {k: np.where(presence[:, [m]], v, 0.0) for m, (k, v) in enumerate(feats.items())}
    labels = rng.uniform(1, 9, size=(B, 4))
    return SampleBatch(feats, presence, labels, np.ones((B, 4), bool), np.arange(B))


@pytest.fixture
def toy_batch(rng, toy_dims):
    pres = np.array([[1, 1, 1], [1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 1, 1]], bool)
    return make_batch(rng, toy_dims, presence=pres)


# criterion number -> "PASS ..." / "FAIL ..." line, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
