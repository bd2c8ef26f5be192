import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from himoe import tensor as T
from himoe.alignment import AlignmentConfig, ntxent_loss, pairwise_alignment_loss, similarity_matrix
from himoe.errors import ConfigError, ContractError
from himoe.gradcheck import finite_diff_check


def orthogonal_rows(n, d, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(d, d)))
    return q[:n]


class TestSimilarity:
    def test_identical_blocks_cross_diagonal(self, rng):
        z = rng.normal(size=(3, 5))
        S = similarity_matrix(z, z, 1.0).scores.data
        np.testing.assert_allclose(np.diag(S[:3, 3:]), 1.0, atol=1e-12)

    def test_orthonormal_rows(self):
        q = orthogonal_rows(4, 8)
        S = similarity_matrix(q[:2], q[2:], 1.0).scores.data
        np.testing.assert_allclose(S[~np.eye(4, dtype=bool)], 0.0, atol=1e-12)

    def test_temperature_scales(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        np.testing.assert_allclose(similarity_matrix(a, b, 0.5).scores.data, 2 * similarity_matrix(a, b, 1.0).scores.data)

    def test_symmetric_and_masked(self, rng):
        sm = similarity_matrix(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), 0.3)
        np.testing.assert_allclose(sm.scores.data, sm.scores.data.T, atol=1e-14)
        assert np.all(np.diag(sm.masked()) < -1e29)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_tau(self, tau, rng):
        with pytest.raises(ConfigError):
            similarity_matrix(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), tau)


class TestNTXent:
    def test_orthogonal_gives_log3(self):
        q = orthogonal_rows(4, 4)
        loss = ntxent_loss(similarity_matrix(q[:2], q[2:], 0.1)).item()
        assert abs(loss - 1.0986122886681098) < 1e-12

    def test_paired_closed_form(self):
        q = orthogonal_rows(2, 4)
        loss = ntxent_loss(similarity_matrix(q, q, 0.5)).item()
        assert abs(loss - 0.2395447662) < 1e-9
        assert abs(loss + math.log(math.e ** 2 / (math.e ** 2 + 2))) < 1e-12

    def test_single_row_rejected(self, rng):
        with pytest.raises(ContractError):
            ntxent_loss(similarity_matrix(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), 0.1))

    def test_gradient_b3(self, rng):
        zi, zj = T.parameter(rng.normal(size=(3, 5))), T.parameter(rng.normal(size=(3, 5)))
        assert finite_diff_check(lambda: ntxent_loss(similarity_matrix(zi, zj, 0.2)), [zi, zj]) < 1e-5

    def test_sample_permutation_invariance(self, rng):
        zi, zj = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        a = ntxent_loss(similarity_matrix(zi, zj, 0.2)).item()
        b = ntxent_loss(similarity_matrix(zi[perm], zj[perm], 0.2)).item()
        assert abs(a - b) < 1e-12

    def test_positive_similarity_monotone(self, rng):
        zi, zj = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        sm = similarity_matrix(zi, zj, 0.5)
        base = ntxent_loss(sm).item()
        bumped = sm.scores.data.copy()
        bumped[0, 4] += 0.3
        bumped[4, 0] += 0.3
        sm2 = type(sm)(T.Tensor(bumped), sm.B)
        assert ntxent_loss(sm2).item() < base


class TestPairwise:
    def test_two_modalities_reduce_to_single_pair(self, rng):
        zi, zj = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        got = pairwise_alignment_loss([T.Tensor(zi), T.Tensor(zj)], np.ones((4, 2), bool), AlignmentConfig(0.2)).item()
        assert got == ntxent_loss(similarity_matrix(zi, zj, 0.2)).item()

    def test_absent_pair_contributes_zero(self, rng):
        z = [T.Tensor(rng.normal(size=(4, 3))) for _ in range(3)]
        pres = np.ones((4, 3), bool)
        pres[:, 2] = False
        got = pairwise_alignment_loss(z, pres, AlignmentConfig(0.2)).item()
        only = ntxent_loss(similarity_matrix(z[0], z[1], 0.2)).item()
        assert abs(got - only / 3) < 1e-12

    def test_equal_pair_losses_average(self):
        q = orthogonal_rows(3, 3)
        z = [T.Tensor(q) for _ in range(3)]
        got = pairwise_alignment_loss(z, np.ones((3, 3), bool), AlignmentConfig(0.5)).item()
        assert abs(got - ntxent_loss(similarity_matrix(q, q, 0.5)).item()) < 1e-12

    def test_pairs_use_jointly_present_rows(self, rng):
        zi, zj = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        pres = np.array([[1, 1], [1, 0], [1, 1], [0, 1], [1, 1]], bool)
        got = pairwise_alignment_loss([T.Tensor(zi), T.Tensor(zj)], pres, AlignmentConfig(0.2)).item()
        rows = [0, 2, 4]
        assert got == ntxent_loss(similarity_matrix(zi[rows], zj[rows], 0.2)).item()

    def test_single_modality_rejected(self, rng):
        with pytest.raises(ContractError):
            pairwise_alignment_loss([T.Tensor(rng.normal(size=(3, 2)))], np.ones((3, 1), bool), AlignmentConfig())


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(2, 5), st.floats(0.05, 2.0), st.integers(0, 10_000))
def test_ntxent_finite(B, d, tau, seed):
    r = np.random.default_rng(seed)
    assert np.isfinite(ntxent_loss(similarity_matrix(r.normal(size=(B, d)), r.normal(size=(B, d)), tau)).item())
