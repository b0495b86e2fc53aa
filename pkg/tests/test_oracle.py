import math

import numpy as np
import pytest

from botmon import correlation as C
from botmon.oracle import EigenResult, JacobiConvergenceError, jacobi_eigen, recompute_correlation
from botmon.window import CountMatrix


def check_certificates(matrix, result: EigenResult):
    m = matrix.shape[0]
    q = result.eigenvectors
    ortho = np.abs(q.T @ q - np.eye(m)).max()
    assert ortho <= 1e-10
    resid = np.abs(matrix @ q - q * result.eigenvalues).max()
    assert resid <= 1e-9 * max(np.abs(matrix).max(), 1e-300) * m


class TestJacobiEigen:
    def test_identity(self):
        result = jacobi_eigen(np.eye(5))
        assert np.array_equal(result.eigenvalues, np.ones(5))
        check_certificates(np.eye(5), result)

    def test_rank_one_ones_matrix(self):
        result = jacobi_eigen(np.ones((2, 2)))
        assert np.allclose(result.eigenvalues, [2.0, 0.0], atol=1e-12)
        top = result.eigenvectors[:, 0]
        assert np.allclose(np.abs(top), [1 / math.sqrt(2)] * 2, atol=1e-12)

    def test_two_by_two_analytic(self):
        result = jacobi_eigen(np.array([[1.0, 0.5], [0.5, 1.0]]))
        assert np.allclose(result.eigenvalues, [1.5, 0.5], atol=1e-12)

    def test_eigenvalue_sum_equals_trace(self):
        rng = np.random.default_rng(70)
        for m in (3, 10, 40):
            a = rng.standard_normal((m, m))
            matrix = 0.5 * (a + a.T)
            result = jacobi_eigen(matrix)
            assert abs(result.eigenvalues.sum() - np.trace(matrix)) <= 1e-9 * m
            check_certificates(matrix, result)

    def test_descending_order_with_matching_vectors(self):
        rng = np.random.default_rng(71)
        a = rng.standard_normal((20, 30))
        matrix = a.T @ a / 20
        result = jacobi_eigen(matrix)
        assert (np.diff(result.eigenvalues) <= 1e-12).all()
        check_certificates(matrix, result)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            jacobi_eigen(np.ones((2, 3)))

    def test_tiny_sizes(self):
        assert jacobi_eigen(np.zeros((0, 0))).eigenvalues.size == 0
        assert jacobi_eigen(np.array([[4.0]])).eigenvalues.tolist() == [4.0]

    def test_nonconvergence_guard(self):
        with pytest.raises(JacobiConvergenceError):
            jacobi_eigen(np.array([[1.0, 0.5], [0.5, 1.0]]), max_sweeps=0)


class TestRecomputeCorrelation:
    def test_matches_init_state_bitwise(self):
        cm = CountMatrix()
        for req, host, k in [("/a", "h1", 1), ("/a", "h2", 2), ("/b", "h1", 3),
                             ("/b", "h2", 4), ("/c", "h1", 2)]:
            cm.add(req, host, k)
        ours = C.init_state(cm)
        oracle_state = recompute_correlation(cm)
        assert np.array_equal(ours.corr, oracle_state.corr)
        assert np.array_equal(ours.sigma, oracle_state.sigma)
        assert np.array_equal(ours.means, oracle_state.means)

    def test_perfectly_correlated_two_columns(self):
        rows = {"q0": {"h0": 1, "h1": 2}, "q1": {"h0": 3, "h1": 4}}
        state = recompute_correlation(rows)
        assert np.allclose(state.corr, [[1, 1], [1, 1]])

    def test_random_matrix_properties(self):
        rng = np.random.default_rng(72)
        rows = {}
        for i in range(100):
            row = {f"h{j}": int(v) for j, v in enumerate(rng.integers(0, 5, size=30)) if v}
            if row:
                rows[f"q{i}"] = row
        state = recompute_correlation(rows)
        assert np.array_equal(state.corr, state.corr.T)
        assert np.abs(np.diag(state.corr)[state.active] - 1.0).max() <= 1e-9
        assert np.abs(state.corr).max() <= 1.0 + 1e-9
