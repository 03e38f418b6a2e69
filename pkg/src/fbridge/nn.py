"""Small fully connected network with hand-written backprop and Adam.

Sized for 2D toy problems: a few hidden layers of smooth units, one linear
output layer. Forward passes cache activations on the model so a subsequent
backward call can produce exact gradients; training on a fixed seed is
bit-reproducible.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch
from .rng import RngStream

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATIONS = {
    # smooth sigmoid-weighted linear unit and its derivative
    "silu": (lambda x: x * _sigmoid(x),
             lambda x: _sigmoid(x) * (1.0 + x * (1.0 - _sigmoid(x)))),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


class MlpModel:
    """Feed-forward network state: weights, biases, Adam accumulators.

    output_scale is a fixed (non-trainable) multiplier on the final layer,
    set by trainers to the regression-target scale so Adam never has to grow
    weights to large magnitudes.
    """

    def __init__(self, sizes: Sequence[int], weights: list[np.ndarray],
                 biases: list[np.ndarray], activation: str = "silu",
                 output_scale: float = 1.0):
        if activation not in _ACTIVATIONS:
            raise ShapeMismatch(f"unknown activation '{activation}'")
        self.sizes = list(int(s) for s in sizes)
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.output_scale = float(output_scale)
        self.adam_m = [np.zeros_like(w) for w in self._params()]
        self.adam_v = [np.zeros_like(w) for w in self._params()]
        self.step_count = 0
        self._cache = None

    def _params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        return forward(self, inputs)

    def copy(self) -> "MlpModel":
        m = MlpModel(self.sizes, [w.copy() for w in self.weights],
                     [b.copy() for b in self.biases], self.activation,
                     self.output_scale)
        m.adam_m = [a.copy() for a in self.adam_m]
        m.adam_v = [a.copy() for a in self.adam_v]
        m.step_count = self.step_count
        return m


def init_mlp(sizes: Sequence[int], rng: RngStream, activation: str = "silu",
             zero_final: bool = True) -> MlpModel:
    """He-scaled Gaussian init; the output layer starts at zero by default
    so an untrained drift model is the zero drift."""
    sizes = list(sizes)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        scale = np.sqrt(2.0 / sizes[i])
        w = rng.normal(size=(sizes[i], sizes[i + 1])) * scale
        b = np.zeros(sizes[i + 1])
        weights.append(w)
        biases.append(b)
    if zero_final:
        weights[-1][:] = 0.0
    return MlpModel(sizes, weights, biases, activation)


def forward(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    """Deterministic batched forward pass; caches activations for backward."""
    x = np.asarray(inputs, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != model.in_dim:
        raise ShapeMismatch(
            f"input width {x.shape[1]} != first layer {model.in_dim}")
    act, _ = _ACTIVATIONS[model.activation]
    pre, post = [], [x]
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = post[-1] @ w + b
        pre.append(h)
        post.append(act(h) if i < n_layers - 1 else h)
    model._cache = (pre, post)
    out = model.output_scale * post[-1]
    return out[0] if squeeze else out


def backward(model: MlpModel, loss_grad: np.ndarray) -> list[np.ndarray]:
    """Gradients of all parameters given d(loss)/d(output).

    Requires a cached forward pass. Returns [dW_0, db_0, dW_1, db_1, ...].
    """
    if model._cache is None:
        raise ShapeMismatch("backward called without a cached forward pass")
    pre, post = model._cache
    g = np.asarray(loss_grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != pre[-1].shape:
        raise ShapeMismatch(
            f"loss_grad shape {g.shape} != output shape {pre[-1].shape}")
    if not np.isfinite(g).all():
        raise NonFiniteGradient("non-finite loss gradient")
    g = g * model.output_scale
    _, dact = _ACTIVATIONS[model.activation]
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append(np.sum(g, axis=0))          # db_i
        grads.append(post[i].T @ g)              # dW_i
        if i > 0:
            g = (g @ model.weights[i].T) * dact(pre[i - 1])
    grads.reverse()
    if not all(np.isfinite(gr).all() for gr in grads):
        raise NonFiniteGradient("non-finite gradient in backward pass")
    return grads


def adam_step(model: MlpModel, grads: list[np.ndarray], lr: float) -> None:
    """One Adam update in place (beta1=0.9, beta2=0.999, eps=1e-8)."""
    model.step_count += 1
    t = model.step_count
    params = model._params()
    if len(grads) != len(params):
        raise ShapeMismatch(f"expected {len(params)} gradients, got {len(grads)}")
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for p, g, m, v in zip(params, grads, model.adam_m, model.adam_v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    for p in params:
        if not np.isfinite(p).all():
            raise NonFiniteGradient("non-finite parameter after Adam update")


def backward_and_step(model: MlpModel, loss_grad: np.ndarray, lr: float
                      ) -> list[np.ndarray]:
    grads = backward(model, loss_grad)
    adam_step(model, grads, lr)
    return grads


# -- parameter vector helpers (finite-difference checks) -----------------------


def params_vector(model: MlpModel) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model._params()])


def set_params_vector(model: MlpModel, vec: np.ndarray) -> None:
    off = 0
    for p in model._params():
        p[...] = vec[off:off + p.size].reshape(p.shape)
        off += p.size
    if off != vec.size:
        raise ShapeMismatch(f"vector length {vec.size}, model needs {off}")


def grads_vector(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


# -- exponential moving average -------------------------------------------------


def ema_init(model: MlpModel) -> list[np.ndarray]:
    return [p.copy() for p in model._params()]


def ema_update(shadow: list[np.ndarray], model: MlpModel, decay: float) -> None:
    for s, p in zip(shadow, model._params()):
        s *= decay
        s += (1.0 - decay) * p


def ema_model(model: MlpModel, shadow: list[np.ndarray]) -> MlpModel:
    m = model.copy()
    for p, s in zip(m._params(), shadow):
        p[...] = s
    return m


# -- checkpoints ----------------------------------------------------------------


def model_to_dict(model: MlpModel) -> dict:
    return {
        "sizes": model.sizes,
        "activation": model.activation,
        "output_scale": model.output_scale,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "adam_m": [m.tolist() for m in model.adam_m],
        "adam_v": [v.tolist() for v in model.adam_v],
        "step_count": model.step_count,
    }


def model_from_dict(payload: dict) -> MlpModel:
    model = MlpModel(payload["sizes"],
                     [np.array(w) for w in payload["weights"]],
                     [np.array(b) for b in payload["biases"]],
                     payload["activation"],
                     payload.get("output_scale", 1.0))
    model.adam_m = [np.array(m) for m in payload["adam_m"]]
    model.adam_v = [np.array(v) for v in payload["adam_v"]]
    model.step_count = payload["step_count"]
    return model


def save_model(model: MlpModel, path, extra: dict | None = None) -> None:
    """JSON checkpoint: layer sizes, weights, Adam state, caller metadata."""
    payload = model_to_dict(model)
    payload["extra"] = extra or {}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_model(path) -> tuple[MlpModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return model_from_dict(payload), payload.get("extra", {})
