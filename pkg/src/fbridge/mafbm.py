"""Markov-approximate fractional Brownian motion as a bridge reference process.

A superposition of K Ornstein-Uhlenbeck processes driven by one Brownian
motion approximates Riemann-Liouville fBM with Hurst index H. The scaled
process X = sqrt(eps) * sum_k omega_k Y^k together with the OU vector Y forms
the augmented state Z = (X, Y), which is Markov and obeys dZ = F Z dt + G dB.
This module computes the geometric mean-reversion grid, the L2-optimal
superposition weights, and the closed-form conditional moments of X_1 | Z_t
that every bridge computation downstream relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ShapeMismatch, SingularMatrix
from .numerics import quadrature, solve_linear
from .rng import RngStream

OMEGA_RESIDUAL_REL_TOL = 1e-10
CROSS_VECTOR_TOL = 1e-9


@dataclass(frozen=True)
class ProcessConfig:
    """Parameters that fully determine the reference process.

    hurst: roughness index in (0, 1); 0.5 recovers Brownian motion.
    n_ou: number K of OU components.
    grid_ratio: geometric spacing r > 1 of the mean-reversion speeds.
    epsilon: diffusion scale (the process is sqrt(epsilon)-scaled).
    horizon: terminal time; bridges always run on [0, 1].
    """

    hurst: float
    n_ou: int = 5
    grid_ratio: float = 2.0
    epsilon: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.hurst < 1.0):
            raise InvalidConfig("hurst", f"must lie in (0,1), got {self.hurst}")
        if self.n_ou < 1 or int(self.n_ou) != self.n_ou:
            raise InvalidConfig("n_ou", f"must be an integer >= 1, got {self.n_ou}")
        if not self.grid_ratio > 1.0:
            raise InvalidConfig("grid_ratio", f"must exceed 1, got {self.grid_ratio}")
        if not self.epsilon > 0.0:
            raise InvalidConfig("epsilon", f"must be positive, got {self.epsilon}")
        if not self.horizon > 0.0:
            raise InvalidConfig("horizon", f"must be positive, got {self.horizon}")


def build_grid(n_ou: int, grid_ratio: float) -> np.ndarray:
    """Geometric grid gamma_k = r^(k - (K+1)/2), increasing, log-symmetric."""
    if n_ou < 1 or int(n_ou) != n_ou:
        raise InvalidConfig("n_ou", f"must be an integer >= 1, got {n_ou}")
    if not grid_ratio > 1.0:
        raise InvalidConfig("grid_ratio", f"must exceed 1, got {grid_ratio}")
    k = np.arange(1, n_ou + 1, dtype=float)
    return grid_ratio ** (k - (n_ou + 1) / 2.0)


def gram_matrix(gamma: np.ndarray, horizon: float) -> np.ndarray:
    """Time-integrated OU covariances A_kl = int_0^T Cov(Y^k_t, Y^l_t) dt.

    Cov(Y^k_t, Y^l_t) = (1 - exp(-(g_k+g_l) t)) / (g_k+g_l), which integrates
    to T/(g_k+g_l) - (1 - exp(-(g_k+g_l) T)) / (g_k+g_l)^2.
    """
    gamma = np.asarray(gamma, dtype=float)
    gg = gamma[:, None] + gamma[None, :]
    return horizon / gg - (1.0 - np.exp(-gg * horizon)) / gg ** 2


def fbm_kernel_scale(hurst: float) -> float:
    """Normalizing constant 1 / Gamma(H + 1/2) of the fBM moving-average kernel."""
    return 1.0 / math.gamma(hurst + 0.5)


def cross_vector(gamma: np.ndarray, hurst: float, horizon: float,
                 tol: float = CROSS_VECTOR_TOL) -> np.ndarray:
    """Time-integrated fBM-OU covariances b_k = int_0^T Cov(B^H_t, Y^k_t) dt.

    Cov(B^H_t, Y^k_t) = scale * int_0^t u^(H-1/2) exp(-g_k u) du, evaluated by
    nested adaptive quadrature (the inner kernel has an integrable power-law
    singularity at u = 0 for H < 1/2).
    """
    gamma = np.asarray(gamma, dtype=float)
    if not (0.0 < hurst < 1.0):
        raise InvalidConfig("hurst", f"must lie in (0,1), got {hurst}")
    scale = fbm_kernel_scale(hurst)
    expo = hurst - 0.5
    inner_tol = 0.05 * tol / max(horizon, 1.0)
    out = np.empty(len(gamma))
    for k, g in enumerate(gamma):
        def inner(t: float) -> float:
            if t <= 0.0:
                return 0.0
            return scale * quadrature(
                lambda u: u ** expo * np.exp(-g * u), 0.0, t, tol=inner_tol)

        def outer(ts: np.ndarray) -> np.ndarray:
            return np.array([inner(t) for t in np.atleast_1d(ts)])

        out[k] = quadrature(outer, 0.0, horizon, tol=0.5 * tol)
    return out


def fbm_variance_integral(hurst: float, horizon: float) -> float:
    """int_0^T Var(B^H_t) dt = T^(2H+1) / ((2H+1) 2H Gamma(H+1/2)^2)."""
    return horizon ** (2 * hurst + 1) / (
        (2 * hurst + 1) * 2 * hurst) * fbm_kernel_scale(hurst) ** 2


def optimal_coefficients(config: ProcessConfig) -> np.ndarray:
    """L2-optimal superposition weights: the solution of A omega = b."""
    gamma = build_grid(config.n_ou, config.grid_ratio)
    A = gram_matrix(gamma, config.horizon)
    b = cross_vector(gamma, config.hurst, config.horizon)
    omega = solve_linear(A, b)
    residual = np.abs(A @ omega - b).max()
    if residual > OMEGA_RESIDUAL_REL_TOL * np.abs(b).max():
        raise SingularMatrix(
            f"coefficient system residual {residual:.3e} exceeds tolerance "
            f"for grid K={config.n_ou}, r={config.grid_ratio}")
    return omega


def drift_matrices(config: ProcessConfig, d: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Augmented drift matrix F and diffusion vector G for d data dimensions.

    Per dimension the block is (K+1)x(K+1): the X row couples to the OU
    states through -sqrt(eps) omega_k gamma_k, the OU rows decay at -gamma_k,
    and one scalar Brownian motion drives the whole block through
    G = (sqrt(eps) sum_k omega_k, 1, ..., 1). Dimensions are independent
    blocks, each with its own driver.
    """
    kern = BridgeKernel.build(config)
    if d == 1:
        return kern.F.copy(), kern.G.copy()
    m = config.n_ou + 1
    F = np.zeros((d * m, d * m))
    G = np.zeros(d * m)
    for i in range(d):
        F[i * m:(i + 1) * m, i * m:(i + 1) * m] = kern.F
        G[i * m:(i + 1) * m] = kern.G
    return F, G


class BridgeKernel:
    """Precomputed grid, weights and conditional-moment evaluators.

    Immutable after construction; all evaluators are pure functions of
    their arguments and thread-safe.
    """

    def __init__(self, config: ProcessConfig, gamma: np.ndarray,
                 omega: np.ndarray):
        self.config = config
        self.gamma = np.asarray(gamma, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.sqrt_eps = math.sqrt(config.epsilon)
        self._gg = self.gamma[:, None] + self.gamma[None, :]
        self._ww = np.outer(self.omega, self.omega)
        K = config.n_ou
        F = np.zeros((K + 1, K + 1))
        F[0, 1:] = -self.sqrt_eps * self.omega * self.gamma
        F[np.arange(1, K + 1), np.arange(1, K + 1)] = -self.gamma
        self.F = F
        self.G = np.concatenate([[self.sqrt_eps * self.omega.sum()],
                                 np.ones(K)])

    @classmethod
    def build(cls, config: ProcessConfig) -> "BridgeKernel":
        gamma = build_grid(config.n_ou, config.grid_ratio)
        omega = optimal_coefficients(config)
        return cls(config, gamma, omega)

    @property
    def n_ou(self) -> int:
        return self.config.n_ou

    @property
    def state_dim(self) -> int:
        return self.config.n_ou + 1

    # -- kernels and moments --------------------------------------------------

    def zeta(self, t, u) -> np.ndarray:
        """sqrt(eps) (exp(-gamma_k (u - t)) - 1); zero at u=t, in (-sqrt(eps), 0]."""
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.sqrt_eps * (np.exp(-self.gamma * (u - t)[..., None]) - 1.0)

    def lift(self, t) -> np.ndarray:
        """Scaling vector (1, omega_1 zeta_1(t,1), ..., omega_K zeta_K(t,1)).

        Maps the scalar pinning score of X_1 | Z_t to the augmented state.
        """
        zk = self.omega * self.zeta(t, 1.0)
        ones = np.ones(np.shape(np.asarray(t)) + (1,))
        return np.concatenate([ones, zk], axis=-1)

    def sigma2_between(self, s, t) -> np.ndarray | float:
        """Var(X_t | Z_s) = eps sum_kl w_k w_l (1 - exp(-(t-s)(g_k+g_l)))/(g_k+g_l)."""
        dt = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        integ = (1.0 - np.exp(-dt[..., None, None] * self._gg)) / self._gg
        out = self.config.epsilon * np.sum(self._ww * integ, axis=(-2, -1))
        return float(out) if out.ndim == 0 else out

    def sigma2_terminal(self, t) -> np.ndarray | float:
        """Conditional variance of X_1 given Z_t."""
        return self.sigma2_between(t, 1.0)

    def mu_terminal(self, x: np.ndarray, y: np.ndarray, t) -> np.ndarray:
        """Conditional mean of X_1 given Z_t = (x, y).

        x: (..., d), y: (..., d, K), t: scalar or broadcastable (...,).
        """
        wz = self.omega * self.zeta(t, 1.0)          # (..., K)
        return x + np.einsum("...dk,...k->...d", y, np.atleast_1d(wz))

    def conditional_moments(self, z, t) -> tuple[np.ndarray, float]:
        """(mu, sigma2) of X_1 given the augmented state z at time t."""
        mu = self.mu_terminal(z.x, z.y, t)
        return mu, float(self.sigma2_terminal(t))

    def ou_covariance(self, t) -> np.ndarray:
        """Covariance of the OU block Y_t: (1 - exp(-t (g_i+g_j)))/(g_i+g_j)."""
        t = np.asarray(t, dtype=float)
        return (1.0 - np.exp(-t[..., None, None] * self._gg)) / self._gg

    def __repr__(self) -> str:
        c = self.config
        return (f"BridgeKernel(H={c.hurst}, K={c.n_ou}, r={c.grid_ratio}, "
                f"eps={c.epsilon})")


# -- Monte-Carlo estimate of the superposition L2 error ----------------------


def mc_l2_quadratic(config: ProcessConfig,
                    rng: RngStream,
                    n_paths: int = 10_000,
                    n_fine: int = 1000,
                    n_eval: int = 200,
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Empirical quadratic form of the approximation error integral.

    Simulates fBM and OU paths from shared Brownian increments (each process
    is the exact L2 projection onto the increments) and accumulates second
    moments so that for any weights omega the common-random-numbers
    Monte-Carlo estimate of int_0^T E[(B^H_t - sum_k omega_k Y^k_t)^2] dt is
    c0 - 2 omega.b_hat + omega.A_hat.omega.
    """
    gamma = build_grid(config.n_ou, config.grid_ratio)
    T = config.horizon
    hurst = config.hurst
    K = len(gamma)
    dt = T / n_fine
    eval_idx = np.linspace(1, n_fine, n_eval).astype(int)
    t_eval = eval_idx * dt
    w_time = T / n_eval

    # fBM projection weights: average of the kernel (t_j - s)^(H-1/2) over
    # each increment interval, with the closed-form antiderivative
    edges = np.arange(n_fine + 1) * dt
    Wf = np.zeros((n_eval, n_fine))
    for j, tj in enumerate(t_eval):
        iu = eval_idx[j]
        lo, hi = edges[:iu], edges[1:iu + 1]
        Wf[j, :iu] = ((tj - lo) ** (hurst + 0.5) - (tj - hi) ** (hurst + 0.5)) / (
            (hurst + 0.5) * dt)
    Wf *= fbm_kernel_scale(hurst)

    decay = np.exp(-gamma * dt)
    w_ou = (1.0 - decay) / (gamma * dt)

    A_hat = np.zeros((K, K))
    b_hat = np.zeros(K)
    c0 = 0.0
    chunk = 2000
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        dB = rng.normal(size=(n_fine, m), scale=math.sqrt(dt))
        BH = Wf @ dB
        Y = np.zeros((K, m))
        ptr = 0
        Y_eval = np.empty((n_eval, K, m))
        for i in range(n_fine):
            Y = Y * decay[:, None] + w_ou[:, None] * dB[i][None, :]
            if ptr < n_eval and i + 1 == eval_idx[ptr]:
                Y_eval[ptr] = Y
                ptr += 1
        for j in range(n_eval):
            Yj = Y_eval[j]
            A_hat += (w_time / n_paths) * (Yj @ Yj.T)
            b_hat += (w_time / n_paths) * (Yj @ BH[j])
            c0 += (w_time / n_paths) * float(BH[j] @ BH[j])
    return A_hat, b_hat, c0


def mc_l2_error(config: ProcessConfig, omega: np.ndarray, rng: RngStream,
                n_paths: int = 10_000, n_fine: int = 1000,
                n_eval: int = 200) -> float:
    """Monte-Carlo estimate of the L2 approximation error for given weights."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (config.n_ou,):
        raise ShapeMismatch(f"expected {config.n_ou} weights, got {omega.shape}")
    A_hat, b_hat, c0 = mc_l2_quadratic(config, rng, n_paths=n_paths,
                                       n_fine=n_fine, n_eval=n_eval)
    return float(c0 - 2.0 * omega @ b_hat + omega @ A_hat @ omega)
