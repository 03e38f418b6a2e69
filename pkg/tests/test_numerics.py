import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbridge.errors import NoConvergence, NotPositiveDefinite, SingularMatrix
from fbridge.numerics import cholesky, quadrature, sample_gaussian, solve_linear
from fbridge.rng import RngStream


class TestSolveLinear:
    def test_identity(self):
        x = solve_linear(np.eye(2), np.array([3.0, 5.0]))
        assert np.allclose(x, [3.0, 5.0], atol=0, rtol=0)

    def test_diagonal(self):
        x = solve_linear(np.diag([2.0, 4.0]), np.array([2.0, 2.0]))
        assert np.allclose(x, [1.0, 0.5], atol=0, rtol=0)

    def test_recovers_known_solution_spd(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(5, 5))
        A = B @ B.T + 5 * np.eye(5)
        w = rng.normal(size=5)
        x = solve_linear(A, A @ w)
        assert np.abs(x - w).max() < 1e-9

    def test_residual_small_for_ill_conditioned(self):
        # condition number around 1e8, solution of moderate norm
        rng = np.random.default_rng(1)
        U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        V, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        A = U @ np.diag(np.logspace(0, -8, 6)) @ V.T
        x_true = rng.normal(size=6)
        b = A @ x_true
        x = solve_linear(A, b)
        assert np.abs(A @ x - b).max() < 1e-9 * np.abs(b).max()

    def test_singular_raises(self):
        A = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrix):
            solve_linear(A, np.array([1.0, 1.0]))


class TestCholesky:
    def test_identity(self):
        L, jitter = cholesky(np.eye(3))
        assert np.array_equal(L, np.eye(3))
        assert jitter == 0.0

    def test_two_by_two(self):
        M = np.array([[4.0, 2.0], [2.0, 3.0]])
        L, _ = cholesky(M)
        assert np.allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]])
        assert np.abs(L @ L.T - M).max() < 1e-12

    def test_zero_eigenvalue(self):
        v = np.array([1.0, 2.0, 3.0])
        M = np.outer(v, v)          # rank one, two zero eigenvalues
        L, _ = cholesky(M)
        assert np.abs(L @ L.T - M).max() <= 1e-8 * np.abs(M).max()

    def test_zero_matrix(self):
        L, jitter = cholesky(np.zeros((4, 4)))
        assert np.array_equal(L, np.zeros((4, 4)))
        assert jitter == 0.0

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))

    @pytest.mark.parametrize("seed", range(5))
    def test_reconstruction_random_spd(self, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(6, 6))
        M = B @ B.T
        L, _ = cholesky(M)
        assert np.abs(L @ L.T - M).max() <= 1e-8 * np.abs(M).max()


class TestSampleGaussian:
    def test_zero_cov_returns_mean_exactly(self):
        mean = np.array([1.5, -2.0])
        out = sample_gaussian(mean, np.zeros((2, 2)), RngStream(0))
        assert np.array_equal(out, mean)

    def test_moments(self):
        rng = RngStream(7)
        n = 100_000
        draws = np.array([sample_gaussian(np.zeros(2), np.eye(2), rng)
                          for _ in range(n)])
        assert np.abs(draws.mean(0)).max() < 4.0 / math.sqrt(n)
        emp_cov = np.cov(draws.T)
        assert np.abs(emp_cov - np.eye(2)).max() < 0.02

    def test_bit_reproducible(self):
        mean = np.array([0.3, 0.7, -1.0])
        cov = np.diag([1.0, 2.0, 0.5])
        a = sample_gaussian(mean, cov, RngStream(42, stream_id=3))
        b = sample_gaussian(mean, cov, RngStream(42, stream_id=3))
        assert np.array_equal(a, b)

    def test_correlated_cov(self):
        cov = np.array([[2.0, 0.8], [0.8, 1.0]])
        rng = RngStream(5)
        draws = np.array([sample_gaussian(np.zeros(2), cov, rng)
                          for _ in range(20_000)])
        assert np.abs(np.cov(draws.T) - cov).max() < 0.06


class TestQuadrature:
    def test_constant(self):
        assert quadrature(lambda u: np.ones_like(u), 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_exponential(self):
        val = quadrature(lambda u: 1.0 - np.exp(-u), 0.0, 1.0)
        assert val == pytest.approx(math.exp(-1.0), abs=1e-10)

    def test_power_law_singularity(self):
        val = quadrature(lambda u: u ** (-0.3), 0.0, 1.0)
        assert val == pytest.approx(1.0 / 0.7, abs=1e-9)

    @pytest.mark.parametrize("a,b,gamma", [(0.0, 1.0, 0.25), (0.0, 1.0, 4.0),
                                           (0.2, 0.9, 1.0)])
    def test_exponential_products(self, a, b, gamma):
        # kernel family Cov(Y^k, Y^l): (1 - exp(-2 gamma t)) / (2 gamma)
        val = quadrature(lambda u: (1 - np.exp(-2 * gamma * u)) / (2 * gamma), a, b)
        exact = ((b - a) - (math.exp(-2 * gamma * a) - math.exp(-2 * gamma * b))
                 / (2 * gamma)) / (2 * gamma)
        assert val == pytest.approx(exact, abs=1e-10)

    @pytest.mark.parametrize("hurst,gamma", [(0.2, 1.0), (0.8, 0.5), (0.5, 2.0)])
    def test_power_law_times_exponential(self, hurst, gamma):
        # downstream kernel u^(H-1/2) e^(-gamma u); oracle via mpmath-free
        # high-resolution Riemann sum on a graded grid
        grid = np.concatenate([[0.0], np.logspace(-12, 0, 20_000)])
        mids = 0.5 * (grid[1:] + grid[:-1])
        widths = np.diff(grid)
        oracle = float(np.sum(widths * mids ** (hurst - 0.5)
                              * np.exp(-gamma * mids)))
        val = quadrature(lambda u: u ** (hurst - 0.5) * np.exp(-gamma * u),
                         0.0, 1.0)
        assert val == pytest.approx(oracle, abs=5e-5)

    def test_reversed_interval(self):
        v = quadrature(lambda u: u, 1.0, 0.0)
        assert v == pytest.approx(-0.5, abs=1e-12)

    def test_no_convergence(self):
        with pytest.raises(NoConvergence):
            quadrature(lambda u: u ** (-1.5), 0.0, 1.0)


class TestRngStream:
    def test_same_address_same_sequence(self):
        a = RngStream(1, stream_id=2).standard_normal(16)
        b = RngStream(1, stream_id=2).standard_normal(16)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(1, stream_id=2).standard_normal(1000)
        b = RngStream(1, stream_id=3).standard_normal(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_state_roundtrip(self):
        s = RngStream(9, stream_id=4)
        s.standard_normal(7)
        snap = s.get_state()
        rest = RngStream.from_state(snap)
        assert np.array_equal(s.standard_normal(13), rest.standard_normal(13))

    def test_split(self):
        s = RngStream(11)
        t = s.split(5)
        assert (t.seed, t.stream_id) == (11, 5)

    @given(st.integers(min_value=0, max_value=2 ** 63 - 1),
           st.integers(min_value=0, max_value=2 ** 63 - 1))
    @settings(max_examples=20, deadline=None)
    def test_reproducible_for_any_address(self, seed, sid):
        assert np.array_equal(RngStream(seed, sid).standard_normal(4),
                              RngStream(seed, sid).standard_normal(4))
