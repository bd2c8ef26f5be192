import math

import numpy as np
import pytest

from himoe import tensor as T
from himoe.emotion_moe import da_route, emotion_bank_forward, emotion_mix, init_emotion_bank
from himoe.errors import ContractError
from himoe.gradcheck import finite_diff_check
from himoe.modality_moe import (
    expert_mix,
    fuse,
    gate_weights,
    init_fusion,
    init_modality_bank,
    modality_bank_forward,
)
from himoe.nn import ParamStore


@pytest.fixture
def bank(rng):
    store = ParamStore()
    return store, init_modality_bank(store, "mb", 4, 3, 5, rng)


@pytest.fixture
def ebank(rng):
    store = ParamStore()
    return store, init_emotion_bank(store, "eb", 4, 3, 5, rng)


def clone_experts(experts, k: int):
    """Overwrite every expert with expert k."""
    for name in ("W1", "b1", "W2", "b2"):
        t = getattr(experts, name)
        t.assign(np.repeat(t.data[k:k + 1], t.shape[0], axis=0))


class TestGate:
    def test_zero_input_uniform(self, bank):
        _, b = bank
        np.testing.assert_allclose(gate_weights(b, np.zeros(4)).data, [1 / 3] * 3, atol=1e-15)

    def test_zero_input_bias_only(self, bank):
        _, b = bank
        b.bg.assign([1.0, 0.0, 0.0])
        e = math.e
        np.testing.assert_allclose(gate_weights(b, np.zeros(4)).data, [e / (e + 2), 1 / (e + 2), 1 / (e + 2)], atol=1e-15)
        np.testing.assert_allclose(gate_weights(b, np.zeros(4)).data, [0.5761, 0.2119, 0.2119], atol=5e-5)

    def test_zero_input_matches_softmax_of_bias_exactly(self, bank, rng):
        _, b = bank
        b.bg.assign(rng.normal(size=3))
        assert gate_weights(b, np.zeros((5, 4))).data.tobytes() == np.tile(T.softmax(b.bg).data, (5, 1)).tobytes()

    def test_sums_to_one(self, bank, rng):
        _, b = bank
        a = gate_weights(b, rng.normal(size=(1000, 4)) * 5).data
        assert np.all(a > 0) and np.abs(a.sum(1) - 1).max() < 1e-12


class TestExpertMix:
    def test_one_hot(self, bank, rng):
        _, b = bank
        x = rng.normal(size=(2, 4))
        z = expert_mix(b, x, np.tile([0.0, 1.0, 0.0], (2, 1))).data
        np.testing.assert_array_equal(z, b.experts.one(1, T.Tensor(x)).data)

    def test_identical_experts(self, bank, rng):
        _, b = bank
        clone_experts(b.experts, 0)
        x = rng.normal(size=(3, 4))
        alpha = rng.dirichlet(np.ones(3), size=3)
        np.testing.assert_allclose(expert_mix(b, x, alpha).data, b.experts.one(0, T.Tensor(x)).data, atol=1e-14)

    def test_gradient(self, bank, rng):
        store, b = bank
        x = T.parameter(rng.normal(size=(2, 4)))
        w = rng.normal(size=(2, 4))
        f = lambda: T.tsum(expert_mix(b, x, gate_weights(b, x)) * w)
        assert finite_diff_check(f, dict(store.items()) | {"x": x}) < 1e-5

    def test_permutation_equivariance(self, bank, rng):
        _, b = bank
        x = rng.normal(size=(6, 4))
        before = expert_mix(b, x, gate_weights(b, x)).data
        perm = np.array([2, 0, 1])
        b.Wg.assign(b.Wg.data[perm])
        b.bg.assign(b.bg.data[perm])
        for name in ("W1", "b1", "W2", "b2"):
            t = getattr(b.experts, name)
            t.assign(t.data[perm])
        np.testing.assert_allclose(expert_mix(b, x, gate_weights(b, x)).data, before, atol=1e-12)


class TestFuse:
    def test_single_modality(self, rng):
        fp = init_fusion(ParamStore(), "f", 1, 4, rng)
        z = rng.normal(size=(1, 4))
        np.testing.assert_allclose(fuse(z, np.array([True]), fp).data, z[0] + fp.p_present.data[0], atol=1e-15)

    def test_identical_tokens(self, rng):
        fp = init_fusion(ParamStore(), "f", 3, 4, rng)
        fp.p_present.assign(np.zeros((3, 4)))
        z = np.tile(rng.normal(size=4), (3, 1))
        np.testing.assert_allclose(fuse(z, np.ones(3, bool), fp).data, z[0], atol=1e-14)

    def test_all_absent_rejected(self, rng):
        fp = init_fusion(ParamStore(), "f", 2, 4, rng)
        with pytest.raises(ContractError):
            fuse(np.zeros((2, 4)), np.zeros(2, bool), fp)

    def test_weights_sum_to_one(self, rng):
        fp = init_fusion(ParamStore(), "f", 3, 4, rng)
        _, w = fuse(rng.normal(size=(5, 3, 4)), (rng.random((5, 3)) < 0.7) | np.eye(5, 3, dtype=bool), fp, return_weights=True)
        np.testing.assert_allclose(w.data.sum(1), 1.0, atol=1e-12)


class TestBank:
    @pytest.fixture
    def parts(self, rng):
        store = ParamStore()
        banks = [init_modality_bank(store, f"m{i}", 4, 2, 3, rng) for i in range(2)]
        fp = init_fusion(store, "fusion", 2, 4, rng)
        return store, banks, fp

    def test_masking_equals_zeroing(self, parts, rng):
        _, banks, fp = parts
        xs = [rng.normal(size=(3, 4)) for _ in range(2)]
        pres = np.array([[1, 0], [1, 1], [0, 1]], bool)
        zeroed = [np.where(pres[:, [m]], x, 0.0) for m, x in enumerate(xs)]
        a = modality_bank_forward(banks, fp, xs, pres).z.data
        b = modality_bank_forward(banks, fp, zeroed, pres).z.data
        assert a.tobytes() == b.tobytes()

    def test_absent_alpha_is_constant(self, parts, rng):
        _, banks, fp = parts
        banks[1].bg.assign([0.3, -0.2])
        pres = np.array([[1, 0], [1, 0], [1, 1]], bool)
        out = modality_bank_forward(banks, fp, [rng.normal(size=(3, 4)) for _ in range(2)], pres)
        a = out.alphas[1].data
        assert a[0].tobytes() == a[1].tobytes() == T.softmax(banks[1].bg).data.tobytes()

    def test_absence_changes_output(self, parts, rng):
        _, banks, fp = parts
        xs = [rng.normal(size=(1, 4)) for _ in range(2)]
        full = modality_bank_forward(banks, fp, xs, np.array([[1, 1]], bool)).z.data
        part = modality_bank_forward(banks, fp, xs, np.array([[1, 0]], bool)).z.data
        assert not np.allclose(full, part)

    def test_end_to_end_gradient(self, parts, rng):
        store, banks, fp = parts
        xs = [T.parameter(rng.normal(size=(2, 4))) for _ in range(2)]
        w = rng.normal(size=(2, 4))
        pres = np.array([[1, 1], [0, 1]], bool)
        f = lambda: T.tsum(modality_bank_forward(banks, fp, xs, pres).z * w)
        assert finite_diff_check(f, dict(store.items()) | {"x0": xs[0], "x1": xs[1]}) < 1e-4


class TestEmotionBank:
    def test_identical_experts_uniform(self, ebank, rng):
        _, eb = ebank
        clone_experts(eb.experts, 1)
        np.testing.assert_allclose(da_route(eb, rng.normal(size=(4, 4))).data, 1 / 3, atol=1e-14)

    def test_single_expert(self, rng):
        eb = init_emotion_bank(ParamStore(), "e", 4, 1, 5, rng)
        z = rng.normal(size=(3, 4))
        assert np.all(da_route(eb, z).data == 1.0)
        np.testing.assert_array_equal(emotion_mix(eb, z, np.ones((3, 1))).data, eb.experts.one(0, T.Tensor(z)).data)

    def test_one_hot_mix(self, ebank, rng):
        _, eb = ebank
        z = rng.normal(size=(2, 4))
        np.testing.assert_array_equal(emotion_mix(eb, z, np.tile([0, 0, 1.0], (2, 1))).data,
                                      eb.experts.one(2, T.Tensor(z)).data)

    def test_forward_matches_route_then_mix(self, ebank, rng):
        _, eb = ebank
        z = rng.normal(size=(5, 4))
        e, beta = emotion_bank_forward(eb, T.Tensor(z))
        np.testing.assert_allclose(beta.data, da_route(eb, z).data, atol=1e-15)
        np.testing.assert_allclose(e.data, emotion_mix(eb, z, beta.data).data, atol=1e-14)

    def test_beta_sums_to_one(self, ebank, rng):
        _, eb = ebank
        b = da_route(eb, rng.normal(size=(1000, 4)) * 3).data
        assert np.all(b > 0) and np.abs(b.sum(1) - 1).max() < 1e-12

    def test_gradient(self, ebank, rng):
        store, eb = ebank
        z = T.parameter(rng.normal(size=(2, 4)))
        w = rng.normal(size=(2, 4))
        f = lambda: T.tsum(emotion_bank_forward(eb, z)[0] * w)
        assert finite_diff_check(f, dict(store.items()) | {"z": z}) < 1e-5

    def test_permutation_equivariance(self, ebank, rng):
        _, eb = ebank
        z = T.Tensor(rng.normal(size=(6, 4)))
        e0, b0 = emotion_bank_forward(eb, z)
        perm = np.array([1, 2, 0])
        for name in ("W1", "b1", "W2", "b2"):
            t = getattr(eb.experts, name)
            t.assign(t.data[perm])
        e1, b1 = emotion_bank_forward(eb, z)
        np.testing.assert_allclose(b1.data, b0.data[:, perm], atol=1e-12)
        np.testing.assert_allclose(e1.data, e0.data, atol=1e-12)

    def test_phi_starts_as_identity(self, ebank):
        _, eb = ebank
        np.testing.assert_array_equal(eb.W_phi.data, np.eye(4))
