from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellwatch import pca
from cellwatch.data import SignalKind
from cellwatch.errors import InsufficientTrainingError, NumericError, UsageError

V, T = SignalKind.VOLTAGE, SignalKind.TEMPERATURE


def _model(basis, tracing=None, kind=V):
    basis = np.asarray(basis, dtype=float).reshape(len(basis), -1)
    tracing = basis if tracing is None else np.asarray(tracing, dtype=float).reshape(len(tracing), -1)
    return pca.PcaModel(basis, tracing, np.ones(basis.shape[0]), kind)


def _random_model(rng, n, k=None, kind=V):
    k = k or 3 * n + 5
    scales = rng.uniform(0.05, 3.0, n)
    return pca.train(scales[:, None] * rng.standard_normal((n, k)), kind)


class TestTrain:
    def test_rank_one_gives_single_component(self):
        rng = np.random.default_rng(0)
        direction = rng.standard_normal(6)
        x = np.outer(direction, rng.standard_normal(200)) + 1e-4 * rng.standard_normal((6, 200))
        m = pca.train(x, V)
        assert m.p == 1

    def test_full_rank_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 100))
        m = pca.train(x, V, variance_threshold=1.0)
        assert m.p == 4
        np.testing.assert_allclose(pca.reconstruct(m, x.T), x.T, atol=1e-8)

    def test_threshold_minimality(self):
        # variances 50, 30, 15, 5 percent: 90% needs three components
        s = np.sqrt([50.0, 30.0, 15.0, 5.0])
        q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((4, 4)))
        r, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((40, 4)))
        m = pca.train(q @ np.diag(s) @ r.T, V)
        assert m.p == 3
        np.testing.assert_allclose(m.explained_variance(), [0.5, 0.8, 0.95, 1.0])

    def test_threshold_hit_exactly_counts(self):
        assert pca.components_for_threshold(np.sqrt([9.0, 1.0]), 0.9) == 1

    def test_tracing_depth_by_kind(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 50))
        assert pca.train(x, V).p_trace == 1
        assert pca.train(x, T).p_trace == 2
        np.testing.assert_array_equal(pca.train(x, T).tracing_basis, pca.train(x, T, 1.0).basis[:, :2])

    def test_too_few_samples(self):
        with pytest.raises(InsufficientTrainingError):
            pca.train(np.ones((5, 4)), V)

    def test_non_finite(self):
        x = np.random.default_rng(0).standard_normal((3, 10))
        x[1, 2] = np.nan
        with pytest.raises(NumericError):
            pca.train(x, V)

    def test_rank_deficient_and_zero_input(self):
        m = pca.train(np.zeros((3, 10)), V)
        assert m.p == 1
        x = np.outer([1.0, -1.0, 0.0], np.arange(10.0))
        m = pca.train(x, V)
        assert m.p == 1
        assert m.singular_values[-1] == pytest.approx(0.0, abs=1e-12)

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 40))
        a, b = pca.train(x, V, 1.0), pca.train(-x, V, 1.0)
        np.testing.assert_allclose(a.basis, b.basis, atol=1e-12)
        idx = np.argmax(np.abs(a.basis), axis=0)
        assert (a.basis[idx, np.arange(a.p)] > 0).all()

    def test_deterministic(self):
        x = np.random.default_rng(6).standard_normal((7, 30))
        assert pca.train(x, T).to_dict() == pca.train(x, T).to_dict()

    def test_dict_roundtrip(self):
        m = _random_model(np.random.default_rng(7), 5, kind=T)
        back = pca.PcaModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.basis, m.basis)
        np.testing.assert_array_equal(back.tracing_basis, m.tracing_basis)
        assert back.kind is T and back.p == m.p

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 16), st.integers(0, 2**32 - 1))
    def test_orthonormal_and_minimal(self, n, seed):
        m = _random_model(np.random.default_rng(seed), n)
        np.testing.assert_allclose(m.basis.T @ m.basis, np.eye(m.p), atol=1e-8)
        cum = m.explained_variance()
        assert cum[m.p - 1] >= 0.9
        if m.p > 1:
            assert cum[m.p - 2] < 0.9
        assert (np.diff(m.singular_values) <= 1e-12).all()
        assert (m.singular_values >= 0).all()


class TestReconstructScore:
    def test_hand_projection(self):
        m = _model([[1 / math.sqrt(2)], [1 / math.sqrt(2)]])
        z = np.array([1.0, -1.0])
        np.testing.assert_allclose(pca.reconstruct(m, z), [0.0, 0.0], atol=1e-15)
        assert pca.score(m, z) == pytest.approx(1.0)

    def test_in_span_scores_zero(self):
        m = _model([[1 / math.sqrt(2)], [1 / math.sqrt(2)]])
        assert pca.score(m, np.array([2.0, 2.0])) == pytest.approx(0.0, abs=1e-12)

    def test_length_mismatch(self):
        m = _model([[1.0], [0.0]])
        with pytest.raises(UsageError):
            pca.reconstruct(m, np.zeros(3))
        with pytest.raises(UsageError):
            pca.score(m, np.zeros(3))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        m = _random_model(rng, 6)
        z = rng.standard_normal((10, 6))
        np.testing.assert_allclose(pca.score(m, z), [pca.score(m, row) for row in z], rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_projection_properties(self, n, seed):
        rng = np.random.default_rng(seed)
        m = _random_model(rng, n)
        z = rng.standard_normal(n)
        r = pca.reconstruct(m, z)
        np.testing.assert_allclose(pca.reconstruct(m, r), r, atol=1e-8)
        assert np.linalg.norm(r) <= np.linalg.norm(z) + 1e-12
        assert pca.score(m, r) == pytest.approx(0.0, abs=1e-8)
        assert pca.score(m, z) >= 0.0
        orth = z - r
        np.testing.assert_allclose(pca.reconstruct(m, orth), 0.0, atol=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        m = _random_model(rng, n)
        perm = rng.permutation(n)
        mp = _model(m.basis[perm], m.tracing_basis[perm])
        z = rng.standard_normal(n)
        assert pca.score(mp, z[perm]) == pytest.approx(pca.score(m, z), rel=1e-10, abs=1e-12)


class TestTrace:
    def test_zero_vector_ties_to_first(self):
        m = _random_model(np.random.default_rng(9), 5)
        assert pca.trace(m, np.zeros(5)) == 0

    def test_single_cell_bias(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((8, 400))
        m = pca.train(x, V)
        z = rng.standard_normal(8)
        z[3] += 10.0
        errs = pca.tracing_errors(m, z)
        assert pca.trace(m, z) == int(np.argmax(errs)) == 3

    def test_two_cell_bias_picks_larger(self):
        rng = np.random.default_rng(11)
        m = pca.train(rng.standard_normal((9, 400)), T)
        z = 0.1 * rng.standard_normal(9)
        z[2] += 6.0
        z[7] += 12.0
        errs = pca.tracing_errors(m, z)
        brute = max(range(9), key=lambda i: (errs[i], -i))
        assert pca.trace(m, z) == brute == 7

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 16), st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        m = _random_model(rng, n, kind=T if seed % 2 else V)
        z = rng.standard_normal(n)
        tb = m.tracing_basis
        err = [abs(z[i] - sum(tb[i, j] * (tb[:, j] @ z) for j in range(tb.shape[1]))) for i in range(n)]
        best = max(err)
        expected = next(i for i in range(n) if err[i] >= best - 1e-12 * (1 + np.abs(z).max()))
        assert pca.trace(m, z) == expected

    def test_batch_trace(self):
        rng = np.random.default_rng(12)
        m = _random_model(rng, 5)
        z = rng.standard_normal((7, 5))
        assert list(pca.trace(m, z)) == [pca.trace(m, row) for row in z]
