"""Coupling-preserving bridge training on paired data, plus the Brownian
baseline that shares the same train/sample pipeline.

The drift network never sees the raw augmented state: it receives the time,
the starting point and the conditional terminal mean mu_{1|t}(z), and its
d-dimensional output is lifted to the augmented drift by the scaling vector
(1, omega_1 zeta_1(t,1), ..., omega_K zeta_K(t,1)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bridge import (Trajectory, brownian_bridge_marginal,
                     sample_pinned_marginal_batch)
from .errors import InvalidConfig, ShapeMismatch
from .mafbm import BridgeKernel, ProcessConfig
from .nn import (MlpModel, adam_step, backward, ema_init, ema_model,
                 ema_update, forward, init_mlp)
from .rng import RngStream

TIME_CLAMP_DEFAULT = 1e-3


@dataclass
class PairDataset:
    """N endpoint pairs from a coupling, with train/val/test tags."""

    x0: np.ndarray
    x1: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=float))
        self.x1 = np.atleast_2d(np.asarray(self.x1, dtype=float))
        if self.x0.shape != self.x1.shape or self.x0.shape[0] < 1:
            raise ShapeMismatch(
                f"need matching nonempty x0/x1, got {self.x0.shape} {self.x1.shape}")
        if not (np.isfinite(self.x0).all() and np.isfinite(self.x1).all()):
            raise ShapeMismatch("non-finite coordinates in dataset")
        if self.split is None:
            self.split = np.full(len(self.x0), "train")
        self.split = np.asarray(self.split)

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]

    def subset(self, tag: str) -> "PairDataset":
        m = self.split == tag
        return PairDataset(self.x0[m], self.x1[m], self.split[m])

    def with_splits(self, val_fraction: float, rng: RngStream) -> "PairDataset":
        n = len(self)
        perm = rng.permutation(n)
        n_val = int(round(val_fraction * n))
        split = np.full(n, "train", dtype="<U5")
        split[perm[:n_val]] = "val"
        return PairDataset(self.x0, self.x1, split)


@dataclass(frozen=True)
class PairedTrainConfig:
    process: ProcessConfig
    hidden: tuple[int, ...] = (128, 128, 128)
    batch_size: int = 128
    steps: int = 4000
    lr: float = 1e-3
    delta: float = TIME_CLAMP_DEFAULT
    seed: int = 0
    ema_decay: float = 0.999
    log_every: int = 100

    def __post_init__(self):
        if not (0.0 < self.delta <= 0.1):
            raise InvalidConfig("delta", f"must lie in (0, 0.1], got {self.delta}")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise InvalidConfig("steps", f"must be >= 1, got {self.steps}")
        if not self.lr > 0:
            raise InvalidConfig("lr", f"must be positive, got {self.lr}")


@dataclass
class TrainResult:
    model: MlpModel
    ema: MlpModel
    log: list = field(default_factory=list)
    kernel: BridgeKernel | None = None
    state: dict = field(default_factory=dict)


def _net_input(t: np.ndarray, x0: np.ndarray, state: np.ndarray) -> np.ndarray:
    return np.concatenate([t[:, None], x0, state], axis=1)


def _predict(model, inputs: np.ndarray) -> np.ndarray:
    """Run an MlpModel, or any plain callable standing in for one."""
    if isinstance(model, MlpModel):
        return forward(model, inputs)
    return np.asarray(model(inputs), dtype=float)


def paired_loss(kernel: BridgeKernel, model, x0: np.ndarray,
                x1: np.ndarray, rng: RngStream,
                delta: float = TIME_CLAMP_DEFAULT
                ) -> tuple[float, list[np.ndarray] | None]:
    """Squared-error regression of the network onto the pinning score.

    Draws t ~ U[0, 1-delta] and an exact pinned sample z_t per pair, then
    regresses model(t, x0, mu_{1|t}(z_t)) onto (x1 - mu_{1|t}(z_t)) / s2_{1|t}.
    Gradients are returned for MlpModel instances, None for plain callables.
    """
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
    pred = _predict(model, _net_input(t, x0, mu))
    resid = pred - target
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grads = backward(model, 2.0 * resid / n) if isinstance(model, MlpModel) else None
    return loss, grads


def _loop_setup(dataset: PairDataset, config: PairedTrainConfig,
                resume: dict | None):
    """Shared trainer plumbing: train split, model, EMA shadow, batch rng.

    With a resume state (model weights, shadow, rng state, step) the loop
    continues bit-exactly where it stopped.
    """
    train = dataset.subset("train") if (dataset.split != "train").any() else dataset
    if len(train) < 1:
        raise ShapeMismatch("empty train split")
    d = train.dim
    if resume:
        model = resume["model"].copy()
        shadow = [np.array(s, dtype=float) for s in resume["shadow"]]
        rng_batch = RngStream.from_state(resume["rng_state"])
        start = int(resume["step"])
    else:
        model = init_mlp([1 + 2 * d, *config.hidden, d],
                         RngStream(config.seed, stream_id=1))
        shadow = ema_init(model)
        rng_batch = RngStream(config.seed, stream_id=2)
        start = 0
    return train, model, shadow, rng_batch, start


def _loop_state(model: MlpModel, shadow, rng_batch: RngStream, step: int) -> dict:
    return {"model": model.copy(), "shadow": [s.copy() for s in shadow],
            "rng_state": rng_batch.get_state(), "step": step}


def _target_scale(targets: np.ndarray) -> float:
    return max(1.0, float(np.sqrt(np.mean(targets ** 2))))


def train_paired(dataset: PairDataset, config: PairedTrainConfig,
                 resume: dict | None = None) -> TrainResult:
    """Adam training of the paired drift network; deterministic per seed."""
    kernel = BridgeKernel.build(config.process)
    train, model, shadow, rng_batch, start = _loop_setup(dataset, config, resume)
    if start == 0:
        # pin the output scale to the regression-target magnitude so Adam
        # works with order-one weights even when 1/sigma2 targets are large
        probe = RngStream(config.seed, stream_id=3)
        idx = probe.integers(0, len(train), size=min(512, 4 * len(train)))
        t = probe.uniform(0.0, 1.0 - config.delta, size=len(idx))
        xt, yt = sample_pinned_marginal_batch(kernel, train.x0[idx],
                                              train.x1[idx], t, probe)
        mu = kernel.mu_terminal(xt, yt, t)
        s2 = kernel.sigma2_terminal(t)
        model.output_scale = _target_scale((train.x1[idx] - mu) / s2[:, None])
    log = []
    for step in range(start, config.steps):
        idx = rng_batch.integers(0, len(train), size=config.batch_size)
        loss, grads = paired_loss(kernel, model, train.x0[idx], train.x1[idx],
                                  rng_batch, delta=config.delta)
        adam_step(model, grads, config.lr)
        ema_update(shadow, model, config.ema_decay)
        if step % config.log_every == 0 or step == config.steps - 1:
            log.append({"step": step, "loss": loss})
    return TrainResult(model, ema_model(model, shadow), log, kernel,
                       _loop_state(model, shadow, rng_batch, config.steps))


def sample_paired(kernel: BridgeKernel, model, x0: np.ndarray,
                  n_steps: int, rng: RngStream,
                  record: bool = False) -> np.ndarray | Trajectory:
    """Euler-Maruyama of the learned augmented SDE from Z_0 = (x0, 0).

    x0: (n, d) batch (or (d,) for a single recorded trajectory). The network
    output is lifted to the augmented drift by the zeta-scaling vector.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    if single:
        x0 = x0[None, :]
    n, d = x0.shape
    dt = 1.0 / n_steps
    z = np.zeros((n, d, kernel.state_dim))
    z[..., 0] = x0
    sq = np.sqrt(dt)
    if record:
        times = np.linspace(0.0, 1.0, n_steps + 1)
        xs = np.empty((n_steps + 1, d))
        ys = np.empty((n_steps + 1, d, kernel.n_ou))
        xs[0], ys[0] = z[0, :, 0], z[0, :, 1:]
    for j in range(n_steps):
        t = j * dt
        mu = kernel.mu_terminal(z[..., 0], z[..., 1:], t)
        tt = np.full(n, t)
        pred = _predict(model, _net_input(tt, x0, mu))
        gv = float(kernel.G @ kernel.lift(t))
        drift = z @ kernel.F.T + (pred * gv)[..., None] * kernel.G
        dB = rng.standard_normal((n, d)) * sq
        z = z + drift * dt + dB[..., None] * kernel.G
        if record:
            xs[j + 1], ys[j + 1] = z[0, :, 0], z[0, :, 1:]
    if record:
        return Trajectory(times, xs, ys)
    return z[..., 0] if not single else z[0, :, 0]


# -- Brownian baseline ----------------------------------------------------------


def abm_loss(epsilon: float, model, x0: np.ndarray, x1: np.ndarray,
             rng: RngStream, delta: float = TIME_CLAMP_DEFAULT
             ) -> tuple[float, list[np.ndarray] | None]:
    """Bridge-matching loss with the scaled Brownian bridge as reference:
    regress model(t, x0, x_t) onto (x1 - x_t) / (1 - t)."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    n = x0.shape[0]
    t = rng.uniform(0.0, 1.0 - delta, size=n)
    xt = brownian_bridge_marginal(epsilon, x0, x1, t, rng)
    target = (x1 - xt) / (1.0 - t)[:, None]
    pred = _predict(model, _net_input(t, x0, xt))
    resid = pred - target
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grads = backward(model, 2.0 * resid / n) if isinstance(model, MlpModel) else None
    return loss, grads


def train_abm(dataset: PairDataset, config: PairedTrainConfig,
              resume: dict | None = None) -> TrainResult:
    """Same pipeline as train_paired with the Brownian reference process."""
    eps = config.process.epsilon
    train, model, shadow, rng_batch, start = _loop_setup(dataset, config, resume)
    if start == 0:
        probe = RngStream(config.seed, stream_id=3)
        idx = probe.integers(0, len(train), size=min(512, 4 * len(train)))
        t = probe.uniform(0.0, 1.0 - config.delta, size=len(idx))
        xt = brownian_bridge_marginal(eps, train.x0[idx], train.x1[idx], t,
                                      probe)
        model.output_scale = _target_scale(
            (train.x1[idx] - xt) / (1.0 - t)[:, None])
    log = []
    for step in range(start, config.steps):
        idx = rng_batch.integers(0, len(train), size=config.batch_size)
        loss, grads = abm_loss(eps, model, train.x0[idx], train.x1[idx],
                               rng_batch, delta=config.delta)
        adam_step(model, grads, config.lr)
        ema_update(shadow, model, config.ema_decay)
        if step % config.log_every == 0 or step == config.steps - 1:
            log.append({"step": step, "loss": loss})
    return TrainResult(model, ema_model(model, shadow), log, None,
                       _loop_state(model, shadow, rng_batch, config.steps))


def sample_abm(epsilon: float, model, x0: np.ndarray, n_steps: int,
               rng: RngStream) -> np.ndarray:
    """Euler-Maruyama of dX = v(t, x0, X) dt + sqrt(eps) dB from X_0 = x0."""
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    if single:
        x0 = x0[None, :]
    n, d = x0.shape
    dt = 1.0 / n_steps
    x = x0.copy()
    sq = np.sqrt(epsilon * dt)
    for j in range(n_steps):
        tt = np.full(n, j * dt)
        pred = _predict(model, _net_input(tt, x0, x))
        x = x + pred * dt + sq * rng.standard_normal((n, d))
    return x[0] if single else x
