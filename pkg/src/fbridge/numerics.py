"""Dense linear algebra, Gaussian sampling and adaptive quadrature.

Everything here is pure given its inputs and safe to call from multiple
threads. Matrices are plain float64 numpy arrays in row-major order.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import NoConvergence, NotPositiveDefinite, ShapeMismatch, SingularMatrix
from .rng import RngStream

PIVOT_REL_TOL = 1e-14
CHOLESKY_RECON_REL_TOL = 1e-8
CHOLESKY_MAX_JITTER_REL = 1e-9
QUAD_DEFAULT_TOL = 1e-10
QUAD_MAX_DEPTH = 60


def solve_linear(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b by LU with partial pivoting plus one refinement pass.

    Raises SingularMatrix when a pivot falls below 1e-14 * max|A|.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ShapeMismatch(f"expected ({n},{n}) matrix and ({n},) vector, "
                            f"got {A.shape} and {b.shape}")
    if not (np.isfinite(A).all() and np.isfinite(b).all()):
        raise ShapeMismatch("non-finite entries in linear system")

    pivot_floor = PIVOT_REL_TOL * np.abs(A).max()

    def lu_solve(rhs: np.ndarray) -> np.ndarray:
        U = A.copy()
        y = rhs.copy()
        for j in range(n):
            p = j + int(np.argmax(np.abs(U[j:, j])))
            if np.abs(U[p, j]) < pivot_floor:
                raise SingularMatrix(
                    f"pivot {U[p, j]:.3e} below threshold {pivot_floor:.3e} "
                    f"at column {j}")
            if p != j:
                U[[j, p]] = U[[p, j]]
                y[[j, p]] = y[[p, j]]
            factors = U[j + 1:, j] / U[j, j]
            U[j + 1:, j:] -= factors[:, None] * U[j, j:]
            y[j + 1:] -= factors * y[j]
        x = np.zeros(n)
        for j in range(n - 1, -1, -1):
            x[j] = (y[j] - U[j, j + 1:] @ x[j + 1:]) / U[j, j]
        return x

    x = lu_solve(b)
    # one step of iterative refinement keeps the residual near machine level
    # even for ill-conditioned coefficient grids
    r = b - A @ x
    if np.abs(r).max() > 0:
        x = x + lu_solve(r)
    return x


def cholesky(M: np.ndarray,
             max_jitter_rel: float = CHOLESKY_MAX_JITTER_REL,
             ) -> tuple[np.ndarray, float]:
    """Lower-triangular L with L L^T ~ M, tolerant of semidefinite input.

    Returns (L, jitter) where jitter is the diagonal shift that was needed
    (at most max_jitter_rel * trace). Raises NotPositiveDefinite when the
    jittered factorization still fails the reconstruction tolerance.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ShapeMismatch(f"expected square matrix, got {M.shape}")
    scale = np.abs(M).max()
    if scale == 0.0:
        return np.zeros((n, n)), 0.0
    trace = float(np.trace(M))

    def attempt(jitter: float) -> np.ndarray | None:
        L = _chol_semidefinite(M + jitter * np.eye(n), trace)
        if L is None:
            return None
        if np.abs(L @ L.T - M).max() <= CHOLESKY_RECON_REL_TOL * scale:
            return L
        return None

    L = attempt(0.0)
    if L is not None:
        return L, 0.0
    jitter = max_jitter_rel * trace
    L = attempt(jitter)
    if L is not None:
        return L, jitter
    raise NotPositiveDefinite(
        f"factorization failed after jitter {jitter:.3e} (trace {trace:.3e})")


CHOLESKY_ZERO_PIVOT_REL = 1e-11
CHOLESKY_NEG_PIVOT_REL = 1e-9


def _chol_semidefinite(M: np.ndarray, trace: float) -> np.ndarray | None:
    """Outer-product Cholesky that zeroes columns on vanishing pivots.

    Pivots within accumulated roundoff of zero (-1e-9 * trace < d <=
    1e-11 * trace) are treated as an exactly null direction, which is exact
    for semidefinite input and keeps numerically singular Gram matrices
    factorizable; the caller verifies the reconstruction bound afterwards,
    so clipping can never produce an out-of-tolerance factor. Returns None
    on a more negative pivot, deferring to the jitter retry.
    """
    n = M.shape[0]
    zero_tol = CHOLESKY_ZERO_PIVOT_REL * max(trace, 0.0) + 1e-300
    neg_floor = CHOLESKY_NEG_PIVOT_REL * max(trace, 0.0) + 1e-300
    L = np.zeros((n, n))
    for j in range(n):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        if d <= zero_tol:
            if d < -neg_floor:
                return None
            continue  # column stays zero; exact for semidefinite input
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_batch(M: np.ndarray) -> np.ndarray:
    """Semidefinite-tolerant Cholesky over a stack of matrices (..., n, n).

    Near-zero or slightly negative pivots are clamped to exact nulls; meant
    for covariance stacks that are singular by construction.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    tr = np.einsum("...ii->...", M)
    zero_tol = CHOLESKY_ZERO_PIVOT_REL * np.maximum(tr, 0.0) + 1e-300
    L = np.zeros_like(M)
    for j in range(n):
        d = M[..., j, j] - np.einsum("...k,...k->...", L[..., j, :j], L[..., j, :j])
        ok = d > zero_tol
        piv = np.where(ok, np.sqrt(np.where(ok, d, 1.0)), 0.0)
        L[..., j, j] = piv
        if j + 1 < n:
            num = M[..., j + 1:, j] - np.einsum(
                "...ik,...k->...i", L[..., j + 1:, :j], L[..., j, :j])
            L[..., j + 1:, j] = np.where(ok[..., None], num / np.where(
                ok, piv, 1.0)[..., None], 0.0)
    return L


def sample_gaussian(mean: np.ndarray, cov: np.ndarray, rng: RngStream) -> np.ndarray:
    """Draw mean + L xi with L from the jitter-tolerant Cholesky of cov."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise ShapeMismatch(f"cov shape {cov.shape} incompatible with mean "
                            f"size {mean.size}")
    L, _ = cholesky(cov)
    return mean + L @ rng.standard_normal(mean.size)


_GL_NODES, _GL_WEIGHTS = leggauss(20)


def _gl_panel(f: Callable, a: float, b: float) -> float:
    half = 0.5 * (b - a)
    x = half * _GL_NODES + 0.5 * (a + b)
    return half * float(np.sum(_GL_WEIGHTS * f(x)))


def quadrature(f: Callable, a: float, b: float,
               tol: float = QUAD_DEFAULT_TOL,
               max_depth: int = QUAD_MAX_DEPTH) -> float:
    """Adaptive Gauss-Legendre integral of a vectorized f over [a, b].

    Handles integrable power-law singularities at the left endpoint by
    recursive bisection; the error estimate is the difference between one
    panel and its two halves. Raises NoConvergence past max_depth levels.
    """
    if b == a:
        return 0.0
    if b < a:
        return -quadrature(f, b, a, tol=tol, max_depth=max_depth)

    def recurse(lo: float, hi: float, whole: float, depth: int) -> float:
        mid = 0.5 * (lo + hi)
        left = _gl_panel(f, lo, mid)
        right = _gl_panel(f, mid, hi)
        if not np.isfinite(whole) or not np.isfinite(left + right):
            raise NoConvergence(f"non-finite panel on [{lo}, {hi}]")
        if abs(left + right - whole) <= 0.25 * tol:
            return left + right
        if depth >= max_depth:
            raise NoConvergence(
                f"no convergence at depth {depth} on [{lo}, {hi}]")
        return (recurse(lo, mid, left, depth + 1)
                + recurse(mid, hi, right, depth + 1))

    return recurse(a, b, _gl_panel(f, a, b), 0)
