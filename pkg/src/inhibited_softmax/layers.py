"""Dense layers, activations and dropout with analytic backward passes."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numeric import RngStream, as_matrix, check_finite, matmul


class ActivationKind(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    CAUCHY = "cauchy"
    GAUSSIAN = "gaussian"
    TRIANGLE = "triangle"

    @property
    def is_kernel(self) -> bool:
        return self in KERNELS


KERNELS = frozenset({ActivationKind.CAUCHY, ActivationKind.GAUSSIAN, ActivationKind.TRIANGLE})


@dataclass
class DenseLayer:
    weights: np.ndarray  # in_dim x out_dim
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        if self.bias is not None:
            self.bias = check_finite(np.asarray(self.bias, dtype=np.float64).reshape(-1), "bias")
            if self.bias.shape[0] != self.out_dim:
                raise ShapeError(f"bias length {self.bias.shape[0]} != out_dim {self.out_dim}")

    @property
    def has_bias(self) -> bool:
        return self.bias is not None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, has_bias: bool, rng: RngStream) -> "DenseLayer":
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(w, np.zeros(out_dim) if has_bias else None)


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != layer.in_dim:
        raise ShapeError(f"input width {x.shape[1]} != layer in_dim {layer.in_dim}")
    out = matmul(x, layer.weights)
    if layer.has_bias:
        out = out + layer.bias
    return out


def dense_backward(layer: DenseLayer, x, grad_out):
    """Return ``(grad_x, grad_W, grad_bias)``; ``grad_bias`` is None without bias."""
    x = as_matrix(x, "x")
    grad_out = as_matrix(grad_out, "grad_out")
    if x.shape[1] != layer.in_dim or grad_out.shape != (x.shape[0], layer.out_dim):
        raise ShapeError(
            f"backward shapes x={x.shape} grad_out={grad_out.shape} for layer "
            f"{layer.in_dim}->{layer.out_dim}"
        )
    grad_w = matmul(x.T, grad_out)
    grad_x = matmul(grad_out, layer.weights.T)
    grad_b = grad_out.sum(axis=0) if layer.has_bias else None
    return grad_x, grad_w, grad_b


def _triangle(u):
    return np.where(np.abs(u) < 1.0, np.minimum(u + 1.0, 1.0 - u), 0.0)


def activation_forward(kind: ActivationKind, u) -> np.ndarray:
    u = check_finite(np.asarray(u, dtype=np.float64), "activation input")
    kind = ActivationKind(kind)
    if kind is ActivationKind.IDENTITY:
        return u.copy()
    if kind is ActivationKind.RELU:
        return np.maximum(u, 0.0)
    if kind is ActivationKind.CAUCHY:
        return 1.0 / (1.0 + u * u)
    if kind is ActivationKind.GAUSSIAN:
        return np.exp(-0.5 * u * u)
    return _triangle(u)


def activation_derivative(kind: ActivationKind, u) -> np.ndarray:
    """f'(u); kinks (ReLU at 0, triangle at -1, 0, 1) get derivative 0."""
    u = np.asarray(u, dtype=np.float64)
    kind = ActivationKind(kind)
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(u)
    if kind is ActivationKind.RELU:
        return (u > 0).astype(np.float64)
    if kind is ActivationKind.CAUCHY:
        d = 1.0 + u * u
        return -2.0 * u / (d * d)
    if kind is ActivationKind.GAUSSIAN:
        return -u * np.exp(-0.5 * u * u)
    return np.where((u > -1.0) & (u < 0.0), 1.0, 0.0) - np.where((u > 0.0) & (u < 1.0), 1.0, 0.0)


def activation_backward(kind: ActivationKind, u, grad_out) -> np.ndarray:
    u = check_finite(np.asarray(u, dtype=np.float64), "activation input")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if u.shape != grad_out.shape:
        raise ShapeError(f"shape mismatch {u.shape} vs {grad_out.shape}")
    return grad_out * activation_derivative(kind, u)


class DropoutMode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval_deterministic"
    STOCHASTIC = "eval_stochastic"


@dataclass
class DropoutLayer:
    rate: float
    mode: DropoutMode = DropoutMode.TRAIN

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        self.mode = DropoutMode(self.mode)


def dropout_mask(layer: DropoutLayer, shape, rng: RngStream | None) -> np.ndarray | None:
    """Scaled keep-mask for inverted dropout, or None when dropout is inactive."""
    if layer.rate == 0.0 or layer.mode is DropoutMode.EVAL:
        return None
    if rng is None:
        raise ValueError("dropout in train/stochastic mode needs an RngStream")
    keep = ~rng.bernoulli(layer.rate, shape)
    return keep / (1.0 - layer.rate)


def dropout_forward(layer: DropoutLayer, x, rng: RngStream | None = None) -> np.ndarray:
    x = check_finite(np.asarray(x, dtype=np.float64), "x")
    mask = dropout_mask(layer, x.shape, rng)
    return x.copy() if mask is None else x * mask
