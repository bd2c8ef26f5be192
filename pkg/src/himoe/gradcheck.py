"""Central-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward


def _named(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    if isinstance(params, Tensor):
        return {"p0": params}
    return {f"p{i}": p for i, p in enumerate(params)}


def _scalar(value: Tensor) -> float:
    if value.data.size != 1:
        raise ContractError(f"gradient oracle needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def finite_diff_errors(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor] | Tensor,
    h: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter max of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` closes over ``params`` and rebuilds its graph on every call.
    """
    if h <= 0:
        raise ContractError("finite difference step must be positive")
    named = _named(params)
    for p in named.values():
        p.zero_grad()

    loss = f()
    again = f()
    if not np.array_equal(loss.data, again.data):
        raise ContractError("function is not deterministic: two forward passes disagree")
    backward(loss)

    errors: dict[str, float] = {}
    for name, p in named.items():
        analytic = np.zeros(p.shape) if p.grad is None else np.array(p.grad)
        base = np.array(p.data)
        numeric = np.empty(p.size)
        flat = base.reshape(-1)
        try:
            for i in range(p.size):
                probe = flat.copy()
                probe[i] = flat[i] + h
                p.assign(probe.reshape(base.shape))
                up = _scalar(f())
                probe[i] = flat[i] - h
                p.assign(probe.reshape(base.shape))
                down = _scalar(f())
                numeric[i] = (up - down) / (2.0 * h)
        finally:
            p.assign(base)
        a = analytic.reshape(-1)
        rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
        errors[name] = float(rel.max()) if rel.size else 0.0
    for p in named.values():
        p.zero_grad()
    return errors


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Max relative gradient error over every coordinate of ``params``."""
    errors = finite_diff_errors(f, params, h)
    return max(errors.values()) if errors else 0.0


# ---------------------------------------------------------------- suite

TOLERANCE = 1e-4


def corrupted_tanh(a):
    """tanh with a deliberately wrong derivative; negative control for the suite."""
    from . import tensor as T

    a = T.as_tensor(a)
    out = np.tanh(a.data)
    return T._result(out, (a,), lambda g: (g * (1.0 - out),), "tanh_corrupted")


_STACK_W = np.random.default_rng(7).normal(size=(3, 2, 4))
_SEL_MASK = np.array([[True, False, True, True], [False, True, False, True], [True, True, True, False]])
_KEEP_ROWS = np.array([[True], [False], [True]])


def _op_cases(rng: np.random.Generator, corrupt: bool):
    """(name, loss builder, params) triples covering every differentiable op."""
    from . import tensor as T

    def p(*shape, lo=-1.0, hi=1.0):
        return T.parameter(rng.uniform(lo, hi, shape))

    w3 = rng.normal(size=(3, 4))  # fixed readout so non-scalar ops reduce to a scalar

    def read(t):
        return T.tsum(t * w3[: t.shape[0], : t.shape[1]] if t.ndim == 2 else t * w3.reshape(-1)[: t.size].reshape(t.shape))

    a, b = p(3, 4), p(3, 4)
    pos = p(3, 4, lo=0.5, hi=2.0)
    W, x, bias = p(4, 4), p(3, 4), p(4)
    cases = [
        ("add", lambda: read(a + b), [a, b]),
        ("sub", lambda: read(a - b), [a, b]),
        ("mul", lambda: read(a * b), [a, b]),
        ("neg", lambda: read(-a), [a]),
        ("reciprocal", lambda: read(T.reciprocal(pos)), [pos]),
        ("tanh", lambda: read(T.tanh(a)), [a]),
        ("sigmoid", lambda: read(T.sigmoid(a * 3.0)), [a]),
        ("exp", lambda: read(T.exp(a)), [a]),
        ("log", lambda: read(T.log(pos)), [pos]),
        ("square", lambda: read(T.square(a)), [a]),
        ("matmul", lambda: read(T.matmul(x, W)), [x, W]),
        ("affine", lambda: read(T.affine(x, W, bias)), [x, W, bias]),
        ("transpose", lambda: read(T.transpose(T.transpose(a)) * b), [a, b]),
        ("reshape", lambda: read(T.reshape(T.reshape(a, (4, 3)), (3, 4)) * b), [a, b]),
        ("sum", lambda: T.tsum(T.tsum(a * b, axis=0) * w3[0]), [a, b]),
        ("mean", lambda: T.tsum(T.mean(a * b, axis=1) * w3[:, 0]), [a, b]),
        ("logsumexp", lambda: T.tsum(T.logsumexp(a * 4.0, axis=1) * w3[:, 1]), [a]),
        ("softmax", lambda: read(T.softmax(a * 2.0, axis=1)), [a]),
        ("l2_normalize", lambda: read(T.l2_normalize(a, axis=1)), [a]),
        ("concat", lambda: T.tsum(T.concat([a, b], axis=0) * np.tile(w3, (2, 1))), [a, b]),
        ("stack", lambda: T.tsum(T.stack([a, b], axis=1) * _STACK_W), [a, b]),
        ("getitem", lambda: read(T.getitem(a, np.array([0, 2, 2]))), [a]),
        ("masked_select", lambda: T.tsum(T.masked_select(a, _SEL_MASK) * 1.7), [a]),
        ("masked_fill", lambda: read(T.masked_fill_zero(a, _KEEP_ROWS)), [a]),
    ]
    if corrupt:
        cases.append(("tanh_corrupted", lambda: read(corrupted_tanh(a)), [a]))
    return cases


def _module_cases(rng: np.random.Generator):
    """Composite losses of every module at toy size (M=2, K=2, L=2, d=4, B=2)."""
    from . import tensor as T
    from .alignment import AlignmentConfig, ntxent_loss, pairwise_alignment_loss, similarity_matrix
    from .baseline import LateFusionBaseline
    from .data import SampleBatch
    from .emotion_moe import emotion_bank_forward, init_emotion_bank
    from .heads import BINARY, REGRESSION, emo_loss
    from .model import HiMoE, ModelConfig
    from .modality_moe import init_fusion, init_modality_bank, modality_bank_forward
    from .nn import ParamStore

    d, B = 4, 2
    modes = (REGRESSION, BINARY, REGRESSION, BINARY)
    cfg = ModelConfig(d=d, enc_hidden=5, expert_hidden=3, K=2, L=2, tau=0.5, lam=0.5, modes=modes, baseline_hidden=5)
    dims = {"a": 6, "b": 6}
    labels = np.array([[7.0, 8.0, 2.0, 3.0], [3.0, 1.0, 6.0, 9.0]])
    batch = SampleBatch(
        {k: rng.normal(size=(B, n)) for k, n in dims.items()},
        np.ones((B, 2), bool), labels, np.array([[True, True, False, True], [True, True, True, True]]),
        np.zeros(B, int),
    )
    model = HiMoE(cfg, dims, seed=3)
    base = LateFusionBaseline(cfg, dims, seed=3)

    store = ParamStore()
    banks = [init_modality_bank(store, f"m{i}", d, 2, 3, rng) for i in range(2)]
    fp = init_fusion(store, "fusion", 2, d, rng)
    estore = ParamStore()
    ebank = init_emotion_bank(estore, "ebank", d, 2, 3, rng)
    zin = [T.parameter(rng.normal(size=(B, d))) for _ in range(2)]
    half = np.array([[True, False], [True, True]])
    zi, zj = T.parameter(rng.normal(size=(B, d))), T.parameter(rng.normal(size=(B, d)))
    zz = T.parameter(rng.normal(size=(B, d)))
    preds = T.parameter(rng.normal(size=(B, 4)) + 5.0)
    readout = rng.normal(size=(B, d))

    def bank_loss(presence):
        out = modality_bank_forward(banks, fp, zin, presence)
        return T.tsum(out.z * readout)

    ebank_params = dict(estore.items()) | {"z": zz}
    return [
        ("modality_bank", lambda: bank_loss(np.ones((B, 2), bool)), dict(store.items()) | {"z0": zin[0], "z1": zin[1]}),
        ("modality_bank_missing", lambda: bank_loss(half), dict(store.items()) | {"z0": zin[0], "z1": zin[1]}),
        ("emotion_bank", lambda: T.tsum(emotion_bank_forward(ebank, zz)[0] * readout), ebank_params),
        ("ntxent", lambda: ntxent_loss(similarity_matrix(zi, zj, 0.5)), {"zi": zi, "zj": zj}),
        ("alignment_pairs", lambda: pairwise_alignment_loss([zi, zj, zz], np.ones((B, 3), bool), AlignmentConfig(tau=0.5)),
         {"zi": zi, "zj": zj, "zk": zz}),
        ("emo_loss", lambda: emo_loss(preds, np.where(np.array([False, True, False, True]), labels > 5, labels),
                                      batch.label_mask, modes), {"preds": preds}),
        ("himoe_total", lambda: model.loss(batch)[0], dict(model.params.items())),
        ("baseline_total", lambda: base.loss(batch)[0], dict(base.params.items())),
    ]


@dataclass
class GradcheckReport:
    rows: list[tuple[str, str, float]]
    tolerance: float = TOLERANCE

    @property
    def failures(self) -> list[tuple[str, str, float]]:
        return [r for r in self.rows if not r[2] < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures

    def per_op(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for op, _, err in self.rows:
            out[op] = max(out.get(op, 0.0), err)
        return out

    def format(self) -> str:
        lines = [f"{op:<24s} max_rel_err={err:.3e}  {'ok' if err < self.tolerance else 'FAIL'}"
                 for op, err in self.per_op().items()]
        for op, name, err in self.failures:
            lines.append(f"FAILED {op}:{name} rel_err={err:.3e} > {self.tolerance:g}")
        return "\n".join(lines)


def run_gradcheck(seed: int = 0, h: float = 1e-5, tolerance: float = TOLERANCE, corrupt: bool = False) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    rows = []
    for op, f, params in _op_cases(rng, corrupt) + _module_cases(rng):
        for name, err in finite_diff_errors(f, params, h).items():
            rows.append((op, name, err))
    return GradcheckReport(rows, tolerance)
