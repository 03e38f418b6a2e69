"""Unpaired bridge training: bridge-matching pretraining on the independent
coupling, then online alpha-relaxed iterative Markovian fitting with the
forward-forward scheme (each direction is trained on couplings generated by
the opposite direction's EMA model).

The drift network of each direction only receives (t, mu_{1|t}(z_t)), never
the starting point. An optional regularizer penalizes disagreement with the
time-reversed pinned dynamics; its drift is

    u_back(t, z) = n (x0 - x + sqrt(eps) w.y) / s2_{t|0} + (0, Lambda(t)^{-1} y)

with n = (1, -sqrt(eps) w_1, ..., -sqrt(eps) w_K) and Lambda(t) the OU-block
covariance. The first term scores the support defect of the augmented state
(X - X_0 = sqrt(eps) w.Y holds along every exact path, making the pinned
covariance singular in that direction); the second is the Gaussian score of
the OU block. With the analytic forward drift the weighted residual

    Sigma_bar_t (u_fwd - u_back) + (z - eta_bar_t)

vanishes identically on the support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import _cov_blocks, sample_pinned_marginal_batch
from .errors import DivergenceDetected, InvalidConfig, ShapeMismatch
from .mafbm import BridgeKernel, ProcessConfig
from .nn import (MlpModel, adam_step, backward, ema_init, ema_model,
                 ema_update, forward, init_mlp)
from .rng import RngStream

TIME_CLAMP_DEFAULT = 1e-3
DIVERGENCE_FACTOR = 10.0


@dataclass
class MarginalPools:
    """Unpaired samples of the two marginals."""

    pool0: np.ndarray
    pool1: np.ndarray

    def __post_init__(self):
        self.pool0 = np.atleast_2d(np.asarray(self.pool0, dtype=float))
        self.pool1 = np.atleast_2d(np.asarray(self.pool1, dtype=float))
        if self.pool0.shape[0] == 0 or self.pool1.shape[0] == 0:
            raise ShapeMismatch("both marginal pools must be nonempty")
        if self.pool0.shape[1] != self.pool1.shape[1]:
            raise ShapeMismatch(
                f"pool dimensions differ: {self.pool0.shape} {self.pool1.shape}")

    @property
    def dim(self) -> int:
        return self.pool0.shape[1]


@dataclass(frozen=True)
class UnpairedConfig:
    process: ProcessConfig
    alpha: float = 0.5
    pretrain_steps: int = 3000
    finetune_steps: int = 2000
    lam: float = 0.0
    ema_decay: float = 0.999
    seed: int = 0
    batch_size: int = 256
    lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 128, 128)
    delta: float = TIME_CLAMP_DEFAULT
    em_steps: int = 100
    log_every: int = 200

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidConfig("alpha", f"must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise InvalidConfig("lam", f"must be >= 0, got {self.lam}")
        if not (0.0 < self.delta <= 0.1):
            raise InvalidConfig("delta", f"must lie in (0, 0.1], got {self.delta}")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size", f"must be >= 1, got {self.batch_size}")


@dataclass
class UnpairedModels:
    forward_model: MlpModel
    backward_model: MlpModel
    forward_ema: MlpModel
    backward_ema: MlpModel
    log: list = field(default_factory=list)


def _net_input(t: np.ndarray, state: np.ndarray) -> np.ndarray:
    return np.concatenate([t[:, None], state], axis=1)


def _predict(model, inputs: np.ndarray) -> np.ndarray:
    """Run an MlpModel, or any plain callable standing in for one."""
    if isinstance(model, MlpModel):
        return forward(model, inputs)
    return np.asarray(model(inputs), dtype=float)


def reverse_drift(kernel: BridgeKernel, t: np.ndarray, x: np.ndarray,
                  y: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Drift of the time-reversed pinned process, per dimension.

    t: (n,), x: (n, d), y: (n, d, K), x0: (n, d). Returns (n, d, K+1).
    """
    w = kernel.omega
    g = kernel.sqrt_eps
    normal_dir = np.concatenate([[1.0], -g * w])
    defect = x0 - x + np.einsum("ndk,k->nd", y, g * w)
    s2t0 = kernel.sigma2_between(np.zeros_like(t), t)
    out = normal_dir[None, None, :] * (defect / s2t0[:, None])[..., None]
    lam = kernel.ou_covariance(t)                       # (n, K, K)
    lam_inv_y = np.linalg.solve(lam[:, None, :, :],
                                y[..., None])[..., 0]   # (n, d, K)
    out[..., 1:] += lam_inv_y
    return out


def _regularizer_pieces(kernel: BridgeKernel, t: np.ndarray, x0: np.ndarray,
                        x1: np.ndarray, xt: np.ndarray, yt: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Sigma_bar (n,K+1,K+1), base residual (n,d,K+1), lift (n,K+1)).

    base residual = -Sigma_bar u_back + (z - eta_bar); the model term
    Sigma_bar lift(t) v(t, mu) is added by the caller.

    The OU-score part of Sigma_bar u_back is contracted in closed form:
    Cov(Y_t, X_1) = sqrt(eps) Lambda(t) diag(exp(-gamma (1-t))) omega, so
    Lambda^{-1} never has to be applied to anything. This keeps the residual
    at roundoff even when the optimal weights are huge and Lambda(t) is
    severely ill-conditioned.
    """
    n, d = x0.shape
    w = kernel.omega
    g = kernel.sqrt_eps
    S, S12 = _cov_blocks(kernel, np.zeros_like(t), t)
    s210 = kernel.sigma2_between(np.zeros_like(t), np.ones_like(t))
    Sbar = S - S12[:, :, None] * S12[:, None, :] / s210[:, None, None]
    eta = np.zeros((n, d, kernel.state_dim))
    eta[:, :, 0] = x0
    eta += S12[:, None, :] * ((x1 - x0) / s210[:, None])[:, :, None]
    z = np.concatenate([xt[..., None], yt], axis=2)
    # support-defect part of u_back, multiplied by Sigma_bar as matrices
    normal_dir = np.concatenate([[1.0], -g * w])
    defect = x0 - xt + np.einsum("ndk,k->nd", yt, g * w)
    s2t0 = kernel.sigma2_between(np.zeros_like(t), t)
    sn = np.einsum("nij,j->ni", Sbar, normal_dir)
    su_defect = sn[:, None, :] * (defect / s2t0[:, None])[..., None]
    # OU-score part: Sigma_bar (0, Lambda^{-1} y) in contracted form
    dw = g * np.exp(-kernel.gamma[None, :] * (1.0 - t)[:, None]) * w[None, :]
    s_tilde = np.einsum("nk,ndk->nd", dw, yt) / s210[:, None]     # (n, d)
    bottom = yt - S12[:, None, 1:] * s_tilde[..., None]           # (n, d, K)
    top = (np.einsum("ndk,k->nd", yt, g * w)
           - S12[:, 0][:, None] * s_tilde)                        # (n, d)
    su_ou = np.concatenate([top[..., None], bottom], axis=2)
    base = -(su_defect + su_ou) + (z - eta)
    return Sbar, base, kernel.lift(t)


def unpaired_loss(kernel: BridgeKernel, model, x0: np.ndarray,
                  x1: np.ndarray, rng: RngStream,
                  delta: float = TIME_CLAMP_DEFAULT, lam: float = 0.0
                  ) -> tuple[float, list[np.ndarray], dict]:
    """Pinning-score regression without the starting point as input, plus
    the optional reverse-drift residual term weighted by lam."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise ShapeMismatch(f"batch shapes differ: {x0.shape} vs {x1.shape}")
    n = x0.shape[0]
    t = rng.uniform(0.0, 1.0 - delta, size=n)
    xt, yt = sample_pinned_marginal_batch(kernel, x0, x1, t, rng)
    mu = kernel.mu_terminal(xt, yt, t)
    s2 = kernel.sigma2_terminal(t)
    target = (x1 - mu) / s2[:, None]
    pred = _predict(model, _net_input(t, mu))
    resid = pred - target
    fwd_loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    dpred = 2.0 * resid / n
    back_loss = 0.0
    if lam > 0.0:
        Sbar, base, lift = _regularizer_pieces(kernel, t, x0, x1, xt, yt)
        slift = np.einsum("nij,nj->ni", Sbar, lift)           # (n, K+1)
        rvec = base + slift[:, None, :] * pred[..., None]     # (n, d, K+1)
        back_loss = float(np.mean(np.sum(rvec ** 2, axis=(1, 2))))
        dpred = dpred + lam * 2.0 / n * np.einsum("ndi,ni->nd", rvec, slift)
    loss = fwd_loss + lam * back_loss
    grads = backward(model, dpred) if isinstance(model, MlpModel) else None
    return loss, grads, {"forward_loss": fwd_loss, "backward_loss": back_loss}


def backward_regularizer(kernel: BridgeKernel, model,
                         x0: np.ndarray, x1: np.ndarray, rng: RngStream,
                         delta: float = TIME_CLAMP_DEFAULT) -> float:
    """The reverse-drift residual loss term on its own (no gradient)."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    n = x0.shape[0]
    t = rng.uniform(0.0, 1.0 - delta, size=n)
    xt, yt = sample_pinned_marginal_batch(kernel, x0, x1, t, rng)
    mu = kernel.mu_terminal(xt, yt, t)
    pred = _predict(model, _net_input(t, mu))
    Sbar, base, lift = _regularizer_pieces(kernel, t, x0, x1, xt, yt)
    slift = np.einsum("nij,nj->ni", Sbar, lift)
    rvec = base + slift[:, None, :] * pred[..., None]
    return float(np.mean(np.sum(rvec ** 2, axis=(1, 2))))


def reverse_drift_residual(kernel: BridgeKernel, t: np.ndarray,
                           x0: np.ndarray, x1: np.ndarray, xt: np.ndarray,
                           yt: np.ndarray) -> np.ndarray:
    """Residual with the analytic forward drift, (n, d, K+1); zero on exact
    pinned samples up to roundoff."""
    mu = kernel.mu_terminal(xt, yt, t)
    s2 = kernel.sigma2_terminal(t)
    pred = (x1 - mu) / s2[:, None]
    Sbar, base, lift = _regularizer_pieces(kernel, t, x0, x1, xt, yt)
    slift = np.einsum("nij,nj->ni", Sbar, lift)
    return base + slift[:, None, :] * pred[..., None]


def simulate_endpoints(kernel: BridgeKernel, model, x0: np.ndarray,
                       n_steps: int, rng: RngStream) -> np.ndarray:
    """Euler-Maruyama terminal samples of the learned unpaired SDE."""
    x0 = np.asarray(x0, dtype=float)
    n, d = x0.shape
    dt = 1.0 / n_steps
    z = np.zeros((n, d, kernel.state_dim))
    z[..., 0] = x0
    sq = np.sqrt(dt)
    for j in range(n_steps):
        t = j * dt
        mu = kernel.mu_terminal(z[..., 0], z[..., 1:], t)
        pred = _predict(model, _net_input(np.full(n, t), mu))
        gv = float(kernel.G @ kernel.lift(t))
        drift = z @ kernel.F.T + (pred * gv)[..., None] * kernel.G
        z = z + drift * dt + (rng.standard_normal((n, d)) * sq)[..., None] * kernel.G
    return z[..., 0]


def _train_direction(kernel: BridgeKernel, pools_src: np.ndarray,
                     pools_tgt: np.ndarray, config: UnpairedConfig,
                     rng_init: RngStream, rng_batch: RngStream,
                     log: list, tag: str) -> tuple[MlpModel, list[np.ndarray]]:
    d = pools_src.shape[1]
    model = init_mlp([1 + d, *config.hidden, d], rng_init)
    i0 = rng_init.integers(0, len(pools_src), size=256)
    i1 = rng_init.integers(0, len(pools_tgt), size=256)
    t = rng_init.uniform(0.0, 1.0 - config.delta, size=256)
    xt, yt = sample_pinned_marginal_batch(kernel, pools_src[i0],
                                          pools_tgt[i1], t, rng_init)
    mu = kernel.mu_terminal(xt, yt, t)
    s2 = kernel.sigma2_terminal(t)
    targets = (pools_tgt[i1] - mu) / s2[:, None]
    model.output_scale = max(1.0, float(np.sqrt(np.mean(targets ** 2))))
    shadow = ema_init(model)
    for step in range(config.pretrain_steps):
        i0 = rng_batch.integers(0, len(pools_src), size=config.batch_size)
        i1 = rng_batch.integers(0, len(pools_tgt), size=config.batch_size)
        loss, grads, parts = unpaired_loss(kernel, model, pools_src[i0],
                                           pools_tgt[i1], rng_batch,
                                           delta=config.delta, lam=config.lam)
        adam_step(model, grads, config.lr)
        ema_update(shadow, model, config.ema_decay)
        if step % config.log_every == 0 or step == config.pretrain_steps - 1:
            log.append({"phase": f"pretrain_{tag}", "step": step,
                        "loss": loss, **parts})
    return model, shadow


def pretrain(pools: MarginalPools, config: UnpairedConfig) -> UnpairedModels:
    """Bridge matching on the independent coupling, one model per direction.

    The backward model bridges pool1 to pool0 with the same kernel: the
    pinned construction only depends on the endpoints handed to it.
    """
    kernel = BridgeKernel.build(config.process)
    log: list = []
    fwd, fwd_shadow = _train_direction(
        kernel, pools.pool0, pools.pool1, config,
        RngStream(config.seed, stream_id=11),
        RngStream(config.seed, stream_id=12), log, "forward")
    bwd, bwd_shadow = _train_direction(
        kernel, pools.pool1, pools.pool0, config,
        RngStream(config.seed, stream_id=21),
        RngStream(config.seed, stream_id=22), log, "backward")
    models = UnpairedModels(fwd, bwd, ema_model(fwd, fwd_shadow),
                            ema_model(bwd, bwd_shadow), log)
    models._shadows = (fwd_shadow, bwd_shadow)
    return models


def finetune_alpha_imf(models: UnpairedModels, pools: MarginalPools,
                       config: UnpairedConfig) -> UnpairedModels:
    """Online forward-forward finetuning.

    Each step trains every direction on a batch whose couplings are, per
    sample with probability alpha, fresh endpoint pairs generated by the
    opposite direction's EMA model, and otherwise independent pool pairs.
    Raises DivergenceDetected when the running loss exceeds ten times its
    level at the start of finetuning.
    """
    kernel = BridgeKernel.build(config.process)
    rng = RngStream(config.seed, stream_id=31)
    fwd, bwd = models.forward_model, models.backward_model
    if hasattr(models, "_shadows"):
        fwd_shadow, bwd_shadow = models._shadows
    else:
        fwd_shadow, bwd_shadow = ema_init(fwd), ema_init(bwd)
    n_b = config.batch_size
    running = None
    pre_losses = [e["loss"] for e in models.log
                  if str(e.get("phase", "")).startswith("pretrain")]
    baseline = float(np.mean(pre_losses[-4:])) if pre_losses else None
    for step in range(config.finetune_steps):
        # couplings from the forward EMA model train the backward model
        i0 = rng.integers(0, len(pools.pool0), size=n_b)
        x0 = pools.pool0[i0]
        x1_gen = simulate_endpoints(kernel, ema_model(fwd, fwd_shadow), x0,
                                    config.em_steps, rng)
        i1 = rng.integers(0, len(pools.pool1), size=n_b)
        use_gen = rng.uniform(size=n_b) < config.alpha
        x1_mix = np.where(use_gen[:, None], x1_gen, pools.pool1[i1])
        loss_b, grads, parts_b = unpaired_loss(kernel, bwd, x1_mix, x0, rng,
                                               delta=config.delta, lam=config.lam)
        adam_step(bwd, grads, config.lr)
        ema_update(bwd_shadow, bwd, config.ema_decay)

        # couplings from the backward EMA model train the forward model
        i1 = rng.integers(0, len(pools.pool1), size=n_b)
        x1 = pools.pool1[i1]
        x0_gen = simulate_endpoints(kernel, ema_model(bwd, bwd_shadow), x1,
                                    config.em_steps, rng)
        i0 = rng.integers(0, len(pools.pool0), size=n_b)
        use_gen = rng.uniform(size=n_b) < config.alpha
        x0_mix = np.where(use_gen[:, None], x0_gen, pools.pool0[i0])
        loss_f, grads, parts_f = unpaired_loss(kernel, fwd, x0_mix, x1, rng,
                                               delta=config.delta, lam=config.lam)
        adam_step(fwd, grads, config.lr)
        ema_update(fwd_shadow, fwd, config.ema_decay)

        step_loss = 0.5 * (loss_f + loss_b)
        running = step_loss if running is None else 0.95 * running + 0.05 * step_loss
        if baseline is None and step >= 10:
            baseline = running
        if baseline is not None and running > DIVERGENCE_FACTOR * max(
                baseline, 1e-12):
            raise DivergenceDetected(
                f"finetuning loss {running:.4g} exceeded 10x the pretraining "
                f"terminal value {baseline:.4g} at step {step}")
        if step % config.log_every == 0 or step == config.finetune_steps - 1:
            models.log.append({"phase": "finetune", "step": step,
                               "loss_forward": loss_f, "loss_backward": loss_b})
    out = UnpairedModels(fwd, bwd, ema_model(fwd, fwd_shadow),
                         ema_model(bwd, bwd_shadow), models.log)
    out._shadows = (fwd_shadow, bwd_shadow)
    return out


def coupling_correlation(x0: np.ndarray, x1: np.ndarray) -> float:
    """Mean per-dimension Pearson correlation of an endpoint coupling."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float).T).T
    x1 = np.atleast_2d(np.asarray(x1, dtype=float).T).T
    cors = [float(np.corrcoef(x0[:, i], x1[:, i])[0, 1])
            for i in range(x0.shape[1])]
    return float(np.mean(cors))


def eot_gaussian_correlation(epsilon: float, sd0: float, sd1: float) -> float:
    """Correlation of the entropy-regularized optimal Gaussian coupling.

    For marginals N(m0, sd0^2), N(m1, sd1^2), cost |x-y|^2/2 and entropic
    weight epsilon, the optimal cross-covariance solves c^2 + eps c =
    (sd0 sd1)^2, giving c = (-eps + sqrt(eps^2 + 4 sd0^2 sd1^2)) / 2.
    """
    c = 0.5 * (-epsilon + np.sqrt(epsilon ** 2 + 4.0 * (sd0 * sd1) ** 2))
    return float(c / (sd0 * sd1))
