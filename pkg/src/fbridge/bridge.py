"""Sampling the partially pinned bridge of the augmented reference process.

The augmented state Z = (X, Y) conditioned on X_0 = x0 and X_1 = x1 (the OU
endpoint stays free) is Gaussian at every time, so marginals can be sampled
in closed form; an Euler-Maruyama integrator of the pinned SDE provides the
independent cross-check and full trajectories. The scaled Brownian bridge
used by the Brownian baseline lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch, TimeTooCloseToOne
from .mafbm import BridgeKernel
from .numerics import cholesky, cholesky_batch
from .rng import RngStream

DRIFT_TIME_CLAMP = 1e-3


@dataclass
class AugmentedState:
    """Data coordinates x (d,) plus OU states y (d, K)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 1 or self.y.ndim != 2 or self.y.shape[0] != self.x.shape[0]:
            raise ShapeMismatch(
                f"expected x (d,) and y (d,K), got {self.x.shape} {self.y.shape}")

    @classmethod
    def initial(cls, x0: np.ndarray, n_ou: int) -> "AugmentedState":
        x0 = np.asarray(x0, dtype=float)
        return cls(x0.copy(), np.zeros((x0.shape[0], n_ou)))

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def stacked(self) -> np.ndarray:
        """Per-dimension blocks (x_i, y_i1..y_iK), shape (d, K+1)."""
        return np.concatenate([self.x[:, None], self.y], axis=1)


@dataclass
class Trajectory:
    """Time-indexed augmented states of one path."""

    times: np.ndarray
    xs: np.ndarray          # (n_times, d)
    ys: np.ndarray          # (n_times, d, K)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ShapeMismatch("trajectory times must be strictly increasing")
        if len(self.times) != len(self.xs) or len(self.xs) != len(self.ys):
            raise ShapeMismatch("times/states length mismatch")

    def state_at(self, i: int) -> AugmentedState:
        return AugmentedState(self.xs[i], self.ys[i])

    @property
    def terminal_x(self) -> np.ndarray:
        return self.xs[-1]


def write_trajectories_csv(path, trajectories: Sequence[Trajectory],
                           comment: str | None = None) -> None:
    """CSV with header traj_id,t,x_1..x_d,y_1_1..y_d_K, one row per time."""
    first = trajectories[0]
    d = first.xs.shape[1]
    K = first.ys.shape[2]
    cols = (["traj_id", "t"]
            + [f"x_{i + 1}" for i in range(d)]
            + [f"y_{i + 1}_{k + 1}" for i in range(d) for k in range(K)])
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(cols) + "\n")
        for tid, traj in enumerate(trajectories):
            for j, t in enumerate(traj.times):
                vals = [str(tid), repr(float(t))]
                vals += [repr(float(v)) for v in traj.xs[j]]
                vals += [repr(float(v)) for v in traj.ys[j].ravel()]
                fh.write(",".join(vals) + "\n")


# -- closed-form conditional Gaussians ----------------------------------------


def joint_covariance(kernel: BridgeKernel, s: float, t: float
                     ) -> tuple[np.ndarray, np.ndarray, float]:
    """Covariance blocks of (Z_t, X_1) given Z_s, per data dimension.

    Returns (Sigma_ts, Sigma_12, sigma2_1s): the (K+1)x(K+1) covariance of
    Z_t, the (K+1,) cross-covariance with X_1, and the variance of X_1. All
    entries are integrals over [s, t] of products of exponential kernels.
    """
    if not (0.0 <= s < t <= 1.0):
        raise ShapeMismatch(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    S, S12 = _cov_blocks(kernel, np.asarray([s]), np.asarray([t]))
    return S[0], S12[0], float(kernel.sigma2_between(s, 1.0))


def _cov_blocks(kernel: BridgeKernel, s: np.ndarray, t: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Sigma_{t|s} and Sigma_12(t|s) for stacked times."""
    gamma = kernel.gamma
    w = kernel.omega
    g = kernel.sqrt_eps
    eps = kernel.config.epsilon
    gg = gamma[:, None] + gamma[None, :]
    dt = (t - s)[:, None, None]
    base = (1.0 - np.exp(-dt * gg)) / gg                      # (n, K, K)
    n, K = base.shape[0], len(gamma)
    S = np.zeros((n, K + 1, K + 1))
    S[:, 1:, 1:] = base
    xy = g * np.einsum("k,nkl->nl", w, base)
    S[:, 0, 1:] = xy
    S[:, 1:, 0] = xy
    S[:, 0, 0] = eps * np.einsum("k,nkl,l->n", w, base, w)
    # rows l: OU state at t; columns k: contribution of kernel exp(-g_k(1-u))
    cross = (np.exp(-gamma[None, None, :] * (1.0 - t)[:, None, None])
             - np.exp(-gamma[None, :, None] * dt[:, :, 0, None]
                      - gamma[None, None, :] * (1.0 - s)[:, None, None])) / gg
    S12 = np.zeros((n, K + 1))
    S12[:, 1:] = g * np.einsum("nlk,k->nl", cross, w)
    S12[:, 0] = eps * np.einsum("l,nlk,k->n", w, cross, w)
    return S, S12


def pinned_mean_cov(kernel: BridgeKernel, x0: np.ndarray, x1: np.ndarray,
                    t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean (d, K+1) and shared covariance (K+1, K+1) of Z_t | (x0, x1)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    S, S12, s2 = joint_covariance(kernel, 0.0, t)
    d = x0.shape[0]
    eta = np.zeros((d, kernel.state_dim))
    eta[:, 0] = x0
    eta += S12[None, :] * ((x1 - x0) / s2)[:, None]
    cov = S - np.outer(S12, S12) / s2
    return eta, cov


def sample_pinned_marginal(kernel: BridgeKernel, x0: np.ndarray,
                           x1: np.ndarray, t: float, rng: RngStream
                           ) -> AugmentedState:
    """Exact draw of Z_t | (X_0 = x0, X_1 = x1), dimensions independent."""
    if not (0.0 < t < 1.0):
        raise ShapeMismatch(f"need 0 < t < 1, got t={t}")
    eta, cov = pinned_mean_cov(kernel, x0, x1, t)
    L, _ = cholesky(cov)
    d = eta.shape[0]
    z = eta + rng.standard_normal((d, kernel.state_dim)) @ L.T
    return AugmentedState(z[:, 0], z[:, 1:])


def sample_pinned_marginal_batch(kernel: BridgeKernel, x0: np.ndarray,
                                 x1: np.ndarray, t: np.ndarray,
                                 rng: RngStream
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized exact pinned draws for per-sample times.

    x0, x1: (n, d); t: (n,) in (0, 1). Returns (x (n, d), y (n, d, K)).
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    t = np.asarray(t, dtype=float)
    n, d = x0.shape
    S, S12 = _cov_blocks(kernel, np.zeros(n), t)
    s2 = kernel.sigma2_between(np.zeros(n), np.ones(n))[:, None]
    cov = S - S12[:, :, None] * S12[:, None, :] / s2[..., None]
    L = cholesky_batch(cov)
    eta = np.zeros((n, d, kernel.state_dim))
    eta[:, :, 0] = x0
    eta += S12[:, None, :] * ((x1 - x0) / s2)[:, :, None]
    xi = rng.standard_normal((n, d, kernel.state_dim))
    z = eta + np.einsum("nij,ndj->ndi", L, xi)
    return z[..., 0], z[..., 1:]


def sample_pinned_path(kernel: BridgeKernel, x0: np.ndarray, x1: np.ndarray,
                       times: np.ndarray, rng: RngStream,
                       meta: dict | None = None) -> Trajectory:
    """Jointly consistent exact draws of the pinned process at given times.

    Sequential conditioning: each state is drawn from the closed-form
    Gaussian of Z_t given (Z_s = previous state, X_1 = x1), so no SDE
    discretization error enters. Times must lie strictly inside (0, 1).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0.0) or np.any(times >= 1.0):
        raise ShapeMismatch("exact path times must lie strictly inside (0,1)")
    d = x0.shape[0]
    m = kernel.state_dim
    z = np.zeros((d, m))
    z[:, 0] = x0
    s = 0.0
    xs = np.empty((len(times), d))
    ys = np.empty((len(times), d, kernel.n_ou))
    for j, t in enumerate(times):
        S, S12, s2_1s = joint_covariance(kernel, s, t)
        # conditional mean of Z_t given Z_s: exp(F (t-s)) z, by blocks
        eta = np.empty((d, m))
        eta[:, 0] = z[:, 0] + z[:, 1:] @ (kernel.omega * kernel.zeta(s, t))
        eta[:, 1:] = z[:, 1:] * np.exp(-kernel.gamma * (t - s))
        mu1s = z[:, 0] + z[:, 1:] @ (kernel.omega * kernel.zeta(s, 1.0))
        eta += S12[None, :] * ((x1 - mu1s) / s2_1s)[:, None]
        cov = S - np.outer(S12, S12) / s2_1s
        L, _ = cholesky(cov)
        z = eta + rng.standard_normal((d, m)) @ L.T
        xs[j], ys[j] = z[:, 0], z[:, 1:]
        s = float(t)
    return Trajectory(times, xs, ys, meta=dict(meta or {}))


# -- pinned SDE ---------------------------------------------------------------


def pinned_drift(kernel: BridgeKernel, t: float, z: AugmentedState,
                 x1: np.ndarray, delta: float = DRIFT_TIME_CLAMP) -> np.ndarray:
    """Drift of the pinned augmented SDE at (t, z), shape (d, K+1).

    F z plus the conditioning term G G^T lift(t) (x1 - mu) / sigma2. The
    conditioning part is singular at t = 1; times within delta of 1 are
    rejected.
    """
    if 1.0 - t < delta:
        raise TimeTooCloseToOne(f"t={t} within {delta} of the endpoint")
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    zb = z.stacked()
    mu, s2 = kernel.conditional_moments(z, t)
    v1 = kernel.lift(t)
    gv = float(kernel.G @ v1)
    score = (x1 - mu) / s2
    return zb @ kernel.F.T + np.outer(score * gv, kernel.G)


def _em_drift_batch(kernel: BridgeKernel, t: float, z: np.ndarray,
                    x1: np.ndarray) -> np.ndarray:
    """Pinned drift for stacked states z (n, d, K+1) and targets x1 (n, d)."""
    mu = kernel.mu_terminal(z[..., 0], z[..., 1:], t)
    s2 = kernel.sigma2_terminal(t)
    v1 = kernel.lift(t)
    gv = float(kernel.G @ v1)
    score = (x1 - mu) / s2
    return z @ kernel.F.T + score[..., None] * (gv * kernel.G)


def simulate_pinned_em_batch(kernel: BridgeKernel, x0: np.ndarray,
                             x1: np.ndarray, n_steps: int, rng: RngStream,
                             snapshot_steps: Sequence[int] = (),
                             delta: float = DRIFT_TIME_CLAMP,
                             ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Euler-Maruyama of the pinned SDE for a batch of endpoint pairs.

    x0, x1: (n, d). Returns (terminal states (n, d, K+1), snapshots keyed by
    step index). One scalar Brownian increment drives each dimension block.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    n, d = x0.shape
    dt = 1.0 / n_steps
    t_max = 1.0 - min(delta, dt)
    z = np.zeros((n, d, kernel.state_dim))
    z[..., 0] = x0
    snaps: dict[int, np.ndarray] = {}
    want = set(int(s) for s in snapshot_steps)
    sq = np.sqrt(dt)
    for j in range(n_steps):
        td = min(j * dt, t_max)
        drift = _em_drift_batch(kernel, td, z, x1)
        dB = rng.standard_normal((n, d)) * sq
        z = z + drift * dt + dB[..., None] * kernel.G
        if (j + 1) in want:
            snaps[j + 1] = z.copy()
    return z, snaps


def simulate_pinned_em(kernel: BridgeKernel, x0: np.ndarray, x1: np.ndarray,
                       n_steps: int, rng: RngStream,
                       delta: float = DRIFT_TIME_CLAMP,
                       meta: dict | None = None) -> Trajectory:
    """Single pinned trajectory on the uniform grid, recorded at every step."""
    if n_steps < 10:
        raise ShapeMismatch(f"need n_steps >= 10, got {n_steps}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    d = x0.shape[0]
    dt = 1.0 / n_steps
    t_max = 1.0 - min(delta, dt)
    z = np.zeros((d, kernel.state_dim))
    z[:, 0] = x0
    times = np.linspace(0.0, 1.0, n_steps + 1)
    xs = np.empty((n_steps + 1, d))
    ys = np.empty((n_steps + 1, d, kernel.n_ou))
    xs[0], ys[0] = z[:, 0], z[:, 1:]
    sq = np.sqrt(dt)
    for j in range(n_steps):
        td = min(j * dt, t_max)
        drift = _em_drift_batch(kernel, td, z[None], x1[None])[0]
        dB = rng.standard_normal(d) * sq
        z = z + drift * dt + dB[:, None] * kernel.G
        xs[j + 1], ys[j + 1] = z[:, 0], z[:, 1:]
    return Trajectory(times, xs, ys, meta=dict(meta or {}))


# -- Brownian baseline ---------------------------------------------------------


def brownian_bridge_marginal(epsilon: float, x0: np.ndarray, x1: np.ndarray,
                             t, rng: RngStream) -> np.ndarray:
    """Scaled Brownian bridge marginal N(x0 + t (x1 - x0), eps t (1 - t)).

    Accepts (d,) endpoints with scalar t, or (n, d) endpoints with (n,) t.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    mean = x0 + t_arr[..., None] * (x1 - x0) if x0.ndim == 2 else x0 + t_arr * (x1 - x0)
    var = epsilon * t_arr * (1.0 - t_arr)
    sd = np.sqrt(np.maximum(var, 0.0))
    noise = rng.standard_normal(x0.shape)
    return mean + (sd[..., None] if x0.ndim == 2 else sd) * noise
