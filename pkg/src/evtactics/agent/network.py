"""Small fully connected Q-network with hand-written backpropagation.

Hidden layers use ReLU (subgradient 0 at 0), the output layer is linear.
Parameters are kept as a flat list ``[W1, b1, W2, b2, ...]`` with ``W`` of
shape ``(fan_out, fan_in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYER_SIZES = (32, 20, 10, 5)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class QNetworkParams:
    sizes: tuple[int, ...]
    tensors: list[np.ndarray]

    @classmethod
    def initialize(cls, rng: np.random.Generator, sizes=LAYER_SIZES) -> "QNetworkParams":
        """Glorot-uniform weights, zero biases."""
        tensors = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            tensors.append(np.zeros(fan_out))
        return cls(tuple(sizes), tensors)

    @classmethod
    def zeros(cls, sizes=LAYER_SIZES) -> "QNetworkParams":
        tensors = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            tensors += [np.zeros((fan_out, fan_in)), np.zeros(fan_out)]
        return cls(tuple(sizes), tensors)

    def copy(self) -> "QNetworkParams":
        return QNetworkParams(self.sizes, [t.copy() for t in self.tensors])

    def check_finite(self) -> None:
        for i, t in enumerate(self.tensors):
            if not np.all(np.isfinite(t)):
                raise NonFiniteError(f"non-finite values in parameter tensor {i}")

    def __post_init__(self):
        expected = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            expected += [(fan_out, fan_in), (fan_out,)]
        got = [t.shape for t in self.tensors]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match layer sizes {self.sizes}")


def forward(params: QNetworkParams, obs: np.ndarray, cache: list | None = None) -> np.ndarray:
    """Q-values for one observation ``(n_in,)`` or a batch ``(B, n_in)``.

    When ``cache`` is a list, the layer inputs and pre-activations are
    appended to it for :func:`backward`.
    """
    x = np.asarray(obs, dtype=float)
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"observation width {x.shape[-1]} != input layer {params.sizes[0]}")
    t = params.tensors
    n_layers = len(t) // 2
    for k in range(n_layers):
        z = x @ t[2 * k].T + t[2 * k + 1]
        if cache is not None:
            cache.append((x, z))
        x = np.maximum(z, 0.0) if k < n_layers - 1 else z
    if not np.all(np.isfinite(x)):
        params.check_finite()
        raise NonFiniteError("non-finite Q-values")
    return x


def huber_loss(q_target, q_pred):
    """Elementwise Huber loss with unit threshold."""
    delta = np.abs(np.asarray(q_target, dtype=float) - np.asarray(q_pred, dtype=float))
    return np.where(delta < 1.0, 0.5 * delta ** 2, delta - 0.5)


def huber_grad(q_target, q_pred):
    """Derivative of the Huber loss with respect to the prediction."""
    delta = np.asarray(q_target, dtype=float) - np.asarray(q_pred, dtype=float)
    return -np.clip(delta, -1.0, 1.0)


def batch_loss(params: QNetworkParams, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
    q = forward(params, obs)
    return float(np.mean(huber_loss(targets, q[np.arange(len(actions)), actions])))


def backward(params: QNetworkParams, cache: list, q: np.ndarray, actions: np.ndarray,
             targets: np.ndarray) -> list[np.ndarray]:
    """Gradients of the mean Huber loss over the batch, same layout as ``params.tensors``."""
    batch = len(actions)
    rows = np.arange(batch)
    grad_q = np.zeros_like(q)
    grad_q[rows, actions] = huber_grad(targets, q[rows, actions]) / batch
    grads: list[np.ndarray] = [None] * len(params.tensors)  # type: ignore[list-item]
    upstream = grad_q
    n_layers = len(cache)
    for k in reversed(range(n_layers)):
        x, z = cache[k]
        if k < n_layers - 1:
            upstream = upstream * (z > 0)
        grads[2 * k] = upstream.T @ x
        grads[2 * k + 1] = upstream.sum(axis=0)
        if k:
            upstream = upstream @ params.tensors[2 * k]
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter tensor {i}")
    return grads


@dataclass
class Adam:
    """Adam with bias correction and an exponentially decaying step size."""

    learning_rate: float = 1e-3
    decay_factor: float = 0.99
    decay_period: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def rate(self, step: int | None = None) -> float:
        step = self.t if step is None else step
        return self.learning_rate * self.decay_factor ** (step / self.decay_period)

    def step(self, params: QNetworkParams, grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params.tensors]
            self.v = [np.zeros_like(p) for p in params.tensors]
        lr = self.rate()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
