"""Shared Monte-Carlo machinery for the oracle-style tests."""

from __future__ import annotations

import numpy as np

from fbridge.mafbm import BridgeKernel
from fbridge.rng import RngStream


def simulate_reference(kernel: BridgeKernel, n_paths: int, n_steps: int,
                       rng: RngStream, snapshot_steps=()):
    """Euler-Maruyama of the unconditioned augmented SDE dZ = F Z dt + G dB,
    one data dimension. Returns (terminal (n, K+1), snapshots by step)."""
    dt = 1.0 / n_steps
    z = np.zeros((n_paths, kernel.state_dim))
    want = set(int(s) for s in snapshot_steps)
    snaps = {}
    sq = np.sqrt(dt)
    for j in range(n_steps):
        dB = rng.standard_normal(n_paths) * sq
        z = z + z @ kernel.F.T * dt + dB[:, None] * kernel.G
        if (j + 1) in want:
            snaps[j + 1] = z.copy()
    return z, snaps


def batch_z_scores(sample_a: np.ndarray, sample_b: np.ndarray):
    """Componentwise z-scores for the difference of two sample means."""
    ma, mb = sample_a.mean(0), sample_b.mean(0)
    se = np.sqrt(sample_a.var(0) / len(sample_a) + sample_b.var(0) / len(sample_b))
    return np.abs(ma - mb) / np.maximum(se, 1e-300)


def cov_z_scores(sample_a: np.ndarray, sample_b: np.ndarray):
    """Entrywise z-scores for the difference of two sample covariances."""
    ca, cb = np.cov(sample_a.T), np.cov(sample_b.T)
    va = _cov_entry_var(sample_a)
    vb = _cov_entry_var(sample_b)
    se = np.sqrt(va / len(sample_a) + vb / len(sample_b))
    return np.abs(ca - cb) / np.maximum(se, 1e-300)


def _cov_entry_var(sample: np.ndarray) -> np.ndarray:
    """Var of empirical covariance entries for Gaussian-ish data:
    (S_ii S_jj + S_ij^2)."""
    S = np.cov(sample.T)
    d = np.diag(S)
    return np.outer(d, d) + S ** 2


def sinkhorn_coupling_correlation(x_grid: np.ndarray, y_grid: np.ndarray,
                                  p: np.ndarray, q: np.ndarray,
                                  epsilon: float, n_iter: int = 2000) -> float:
    """Entropic OT on a grid by log-domain Sinkhorn; returns the coupling
    correlation. Cost |x-y|^2 / 2, entropic weight epsilon."""
    C = 0.5 * (x_grid[:, None] - y_grid[None, :]) ** 2
    logp = np.log(p)
    logq = np.log(q)
    f = np.zeros_like(p)
    g = np.zeros_like(q)
    for _ in range(n_iter):
        # f_i = -eps logsumexp over j of (g_j - C_ij)/eps + log q_j
        M = (g[None, :] - C) / epsilon + logq[None, :]
        f = -epsilon * _logsumexp(M, axis=1)
        M = (f[:, None] - C) / epsilon + logp[:, None]
        g = -epsilon * _logsumexp(M, axis=0)
    logpi = (f[:, None] + g[None, :] - C) / epsilon + logp[:, None] + logq[None, :]
    pi = np.exp(logpi)
    pi /= pi.sum()
    mx = float(pi.sum(1) @ x_grid)
    my = float(pi.sum(0) @ y_grid)
    vx = float(pi.sum(1) @ (x_grid - mx) ** 2)
    vy = float(pi.sum(0) @ (y_grid - my) ** 2)
    cxy = float(((x_grid - mx)[:, None] * (y_grid - my)[None, :] * pi).sum())
    return cxy / np.sqrt(vx * vy)


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    mx = M.max(axis=axis, keepdims=True)
    out = np.log(np.exp(M - mx).sum(axis=axis)) + np.squeeze(mx, axis=axis)
    return out
