"""Bias-free MLPs with hand-written backpropagation.

Layer ``j`` computes ``z_j = W_j h_{j-1}`` with ``W_j`` of shape
``(d_j, d_{j-1})``; hidden layers apply the activation, the last layer is
linear. Data are stored column-wise: inputs are ``d_0 x N``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ShapeError, StaleCacheError

ACTIVATIONS = ("relu", "leaky_relu", "identity")
LOSSES = ("mse", "cross_entropy")


@dataclass(frozen=True)
class NetworkSpec:
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    loss: str = "mse"
    seed: int = 0
    leaky_slope: float = 0.01
    sum_gradients: bool = False  # sum over the batch instead of averaging

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"need at least two positive layer sizes, got {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d = self.layer_dims
        return [(d[j + 1], d[j]) for j in range(self.n_layers)]


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[1] != self.targets.shape[1]:
            raise ShapeError("inputs and targets must have the same number of columns")

    @property
    def size(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class ForwardCache:
    weights: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]
    output_grad: np.ndarray


def init_weights(spec: NetworkSpec) -> list[np.ndarray]:
    """Gaussian weights with std ``1/sqrt(fan_in)``; layer j draws from seed ``1000 * spec.seed + j``."""
    return [
        linalg.gaussian_matrix(rows, cols, spec.seed * 1000 + j) / np.sqrt(cols)
        for j, (rows, cols) in enumerate(spec.shapes)
    ]


def _act(spec: NetworkSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, z, spec.leaky_slope * z)
    return z


def _act_grad(spec: NetworkSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (z > 0).astype(float)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, 1.0, spec.leaky_slope)
    return np.ones_like(z)


def _check_shapes(spec: NetworkSpec, weights, batch: Batch) -> None:
    if len(weights) != spec.n_layers:
        raise ShapeError(f"expected {spec.n_layers} weight matrices, got {len(weights)}")
    for j, (w, shape) in enumerate(zip(weights, spec.shapes)):
        if np.shape(w) != shape:
            raise ShapeError(f"layer {j}: weight shape {np.shape(w)} != expected {shape}")
    if batch.inputs.shape[0] != spec.layer_dims[0]:
        raise ShapeError(f"inputs have {batch.inputs.shape[0]} rows, network expects {spec.layer_dims[0]}")
    if batch.targets.shape[0] != spec.layer_dims[-1]:
        raise ShapeError(f"targets have {batch.targets.shape[0]} rows, network outputs {spec.layer_dims[-1]}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def predict(spec: NetworkSpec, weights, inputs) -> np.ndarray:
    h = np.asarray(inputs, dtype=float)
    for j, w in enumerate(weights):
        z = w @ h
        h = _act(spec, z) if j < len(weights) - 1 else z
    return h


def forward(spec: NetworkSpec, weights, batch: Batch) -> tuple[float, ForwardCache]:
    """Batch-mean loss and the activations needed by ``backward``."""
    _check_shapes(spec, weights, batch)
    n = batch.size
    h = batch.inputs
    pre, post = [], [h]
    for j, w in enumerate(weights):
        z = w @ h
        pre.append(z)
        h = _act(spec, z) if j < spec.n_layers - 1 else z
        post.append(h)

    if spec.loss == "mse":
        err = h - batch.targets
        loss = float(np.sum(err * err) / n)
        dout = 2.0 * err / n
    else:
        logp = log_softmax(h)
        loss = float(-np.sum(batch.targets * logp) / n)
        dout = (np.exp(logp) - batch.targets) / n
    if spec.sum_gradients:
        dout = dout * n
    cache = ForwardCache(tuple(np.array(w, copy=True) for w in weights), tuple(pre), tuple(post), dout)
    return loss, cache


def backward(spec: NetworkSpec, weights, cache: ForwardCache) -> list[np.ndarray]:
    """Exact gradient of the batch loss with respect to each weight matrix."""
    if len(weights) != len(cache.weights) or any(
        not np.array_equal(w, c) for w, c in zip(weights, cache.weights)
    ):
        raise StaleCacheError("weights changed since the forward pass that produced this cache")
    grads: list[np.ndarray] = [None] * spec.n_layers  # type: ignore[list-item]
    delta = cache.output_grad
    for j in range(spec.n_layers - 1, -1, -1):
        grads[j] = delta @ cache.post[j].T
        if j > 0:
            delta = (weights[j].T @ delta) * _act_grad(spec, cache.pre[j - 1])
    return grads


def loss_and_grads(spec: NetworkSpec, weights, batch: Batch) -> tuple[float, list[np.ndarray]]:
    loss, cache = forward(spec, weights, batch)
    return loss, backward(spec, weights, cache)


def accuracy(spec: NetworkSpec, weights, batch: Batch) -> float:
    logits = predict(spec, weights, batch.inputs)
    return float(np.mean(np.argmax(logits, axis=0) == np.argmax(batch.targets, axis=0)))


def make_synthetic(
    kind: str,
    dims: tuple[int, int],
    n_samples: int,
    seed: int,
    rank: int = 1,
    n_classes: int | None = None,
    noise: float = 0.0,
    separation: float = 4.0,
) -> tuple[Batch, np.ndarray | None]:
    """Seeded synthetic data.

    ``lowrank_regression``: ``X`` Gaussian (``dims[0] x N``) and
    ``Y = W* X + noise * E`` where ``W*`` (``dims[1] x dims[0]``) has rank
    ``rank`` with singular values spaced evenly from 3 down to 1. Returns
    ``W*`` as the second element.

    ``classification``: ``dims[1]`` (or ``n_classes``) Gaussian clusters in
    ``R^dims[0]`` with centres drawn at scale ``separation``; one-hot targets.
    """
    d_in, d_out = dims
    if d_in < 1 or d_out < 1 or n_samples < 1:
        raise ShapeError(f"invalid dims {dims} / sample count {n_samples}")
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    if kind == "lowrank_regression":
        if not 1 <= rank <= min(d_in, d_out):
            raise ShapeError(f"rank {rank} must lie in [1, {min(d_in, d_out)}]")
        left = linalg.qr_orthonormal(rng.standard_normal((d_out, rank)))
        right = linalg.qr_orthonormal(rng.standard_normal((d_in, rank)))
        w_star = (left * np.linspace(3.0, 1.0, rank)) @ right.T
        x = rng.standard_normal((d_in, n_samples))
        y = w_star @ x
        if noise:
            y = y + noise * rng.standard_normal(y.shape)
        return Batch(x, y), w_star
    if kind == "classification":
        c = n_classes if n_classes is not None else d_out
        if c < 2 or c != d_out:
            raise ShapeError(f"classification needs n_classes == output dim >= 2, got {c} vs {d_out}")
        centres = separation * rng.standard_normal((d_in, c))
        labels = rng.integers(0, c, n_samples)
        x = centres[:, labels] + rng.standard_normal((d_in, n_samples))
        y = np.zeros((c, n_samples))
        y[labels, np.arange(n_samples)] = 1.0
        return Batch(x, y), None
    raise ValueError(f"unknown dataset kind {kind!r}")
