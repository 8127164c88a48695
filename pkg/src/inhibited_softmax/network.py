"""MLP assembly, forward/backward passes, optimizers and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset
from .errors import NonFiniteError, NumericalError, ShapeError
from .heads import (
    HeadOutput,
    InhibitedSoftmaxHead,
    LossConfig,
    SoftmaxHead,
    ce_loss_is,
    ce_loss_softmax,
)
from .layers import (
    ActivationKind,
    DenseLayer,
    DropoutLayer,
    DropoutMode,
    activation_backward,
    activation_forward,
    dense_backward,
    dense_forward,
    dropout_mask,
)
from .numeric import RngStream, as_matrix

log = logging.getLogger(__name__)


@dataclass
class NetworkSpec:
    """Declarative MLP description.

    ``layer_widths`` runs from input to output, e.g. ``[2, 100, 100, 2]``.
    The last hidden layer uses ``penultimate_activation``; earlier hidden
    layers use ``hidden_activation``.  ``final_bias=None`` means "no bias for
    the inhibited softmax head, bias for softmax".
    """

    layer_widths: list
    hidden_activation: ActivationKind = ActivationKind.RELU
    penultimate_activation: ActivationKind = ActivationKind.CAUCHY
    head: str = "is"
    a: float = 1.0
    hidden_bias: bool = True
    final_bias: bool | None = None
    dropout_rate: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        self.hidden_activation = ActivationKind(self.hidden_activation)
        self.penultimate_activation = ActivationKind(self.penultimate_activation)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ShapeError(f"invalid layer widths {self.layer_widths}")
        if self.head not in ("softmax", "is"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "is" and self.final_bias:
            raise ValueError("inhibited softmax head requires a bias-free final layer")
        if self.final_bias is None:
            self.final_bias = self.head == "softmax"
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden_kinds(self) -> list:
        n_hidden = len(self.layer_widths) - 2
        return [
            self.penultimate_activation if i == n_hidden - 1 else self.hidden_activation
            for i in range(n_hidden)
        ]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "hidden_activation": self.hidden_activation.value,
            "penultimate_activation": self.penultimate_activation.value,
            "head": self.head,
            "a": self.a,
            "hidden_bias": self.hidden_bias,
            "final_bias": self.final_bias,
            "dropout_rate": self.dropout_rate,
            "loss": {
                "evidence_lambda": self.loss.evidence_lambda,
                "weight_decay": self.loss.weight_decay,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class Network:
    spec: NetworkSpec
    dense: list

    def __post_init__(self):
        widths = self.spec.layer_widths
        if len(self.dense) != len(widths) - 1:
            raise ShapeError("layer count does not match spec")
        for i, layer in enumerate(self.dense):
            if (layer.in_dim, layer.out_dim) != (widths[i], widths[i + 1]):
                raise ShapeError(f"layer {i} is {layer.in_dim}x{layer.out_dim}, spec says "
                                 f"{widths[i]}x{widths[i + 1]}")
        if self.spec.head == "is" and self.dense[-1].has_bias:
            raise ValueError("inhibited softmax head requires a bias-free final layer")
        if self.spec.head == "is":
            self.head = InhibitedSoftmaxHead(self.spec.n_classes, self.spec.a)
        else:
            self.head = SoftmaxHead(self.spec.n_classes)

    @property
    def has_dropout(self) -> bool:
        return self.spec.dropout_rate > 0 and len(self.dense) > 1

    def parameters(self) -> list:
        """Flat list of parameter arrays: W0, [b0], W1, [b1], ..."""
        out = []
        for layer in self.dense:
            out.append(layer.weights)
            if layer.has_bias:
                out.append(layer.bias)
        return out

    def is_weight(self) -> list:
        flags = []
        for layer in self.dense:
            flags.append(True)
            if layer.has_bias:
                flags.append(False)
        return flags

    def copy(self) -> "Network":
        return Network(self.spec, [
            DenseLayer(l.weights.copy(), None if l.bias is None else l.bias.copy())
            for l in self.dense
        ])


def build(spec: NetworkSpec, rng: RngStream) -> Network:
    widths = spec.layer_widths
    layers = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        has_bias = spec.final_bias if last else spec.hidden_bias
        layers.append(DenseLayer.init(widths[i], widths[i + 1], has_bias, rng))
    return Network(spec, layers)


@dataclass
class ForwardCache:
    inputs: list  # input to each dense layer
    pre: list  # pre-activation of each hidden layer
    masks: list  # dropout mask per hidden layer (None = inactive)
    penultimate: np.ndarray
    logits: np.ndarray


def forward(net: Network, x, mode=DropoutMode.EVAL, rng: RngStream | None = None):
    """Run the network; returns ``(HeadOutput, ForwardCache)``."""
    mode = DropoutMode(mode)
    h = as_matrix(x, "x")
    if h.shape[1] != net.spec.layer_widths[0]:
        raise ShapeError(f"input width {h.shape[1]} != {net.spec.layer_widths[0]}")
    drop = DropoutLayer(net.spec.dropout_rate, mode)
    inputs, pre, masks = [], [], []
    penultimate = h
    for layer, kind in zip(net.dense[:-1], net.spec.hidden_kinds):
        inputs.append(h)
        u = dense_forward(layer, h)
        pre.append(u)
        h = activation_forward(kind, u)
        penultimate = h
        mask = dropout_mask(drop, h.shape, rng)
        masks.append(mask)
        if mask is not None:
            h = h * mask
    inputs.append(h)
    logits = dense_forward(net.dense[-1], h)
    out = net.head.forward(logits)
    return out, ForwardCache(inputs, pre, masks, penultimate, logits)


def predict(net: Network, x, mode=DropoutMode.EVAL, rng: RngStream | None = None) -> HeadOutput:
    return forward(net, x, mode, rng)[0]


def backward(net: Network, cache: ForwardCache, targets):
    """Total loss and per-parameter gradients (ordered like ``parameters()``)."""
    if net.spec.head == "is":
        loss, g, g_pen = ce_loss_is(net.head, cache.logits, targets, cache.penultimate,
                                    net.spec.loss)
    else:
        loss, g = ce_loss_softmax(cache.logits, targets)
        g_pen = None
    n_hidden = len(net.dense) - 1
    grads = [None] * len(net.dense)
    for i in range(n_hidden, -1, -1):
        layer = net.dense[i]
        if i < n_hidden:
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            if i == n_hidden - 1 and g_pen is not None:
                g = g + g_pen
            g = activation_backward(net.spec.hidden_kinds[i], cache.pre[i], g)
        g, gw, gb = dense_backward(layer, cache.inputs[i], g)
        grads[i] = (gw, gb)
    flat = []
    for layer, (gw, gb) in zip(net.dense, grads):
        flat.append(gw)
        if layer.has_bias:
            flat.append(gb)
    return loss, flat


def loss_and_gradients(net: Network, x, targets, mode=DropoutMode.EVAL, rng=None):
    _, cache = forward(net, x, mode, rng)
    return backward(net, cache, targets)


def total_loss(net: Network, x, targets) -> float:
    """Deterministic (dropout-off) training objective, for gradient checks."""
    _, cache = forward(net, x, DropoutMode.EVAL)
    return backward(net, cache, targets)[0]


@dataclass
class SGD:
    lr: float = 0.01
    momentum: float = 0.9


@dataclass
class Adadelta:
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0


class OptimizerState:
    """Optimizer settings plus per-parameter accumulators.

    Weight decay is decoupled: after the gradient step every weight matrix
    (never a bias) is shrunk by ``lr * weight_decay``.
    """

    def __init__(self, kind, weight_decay: float = 0.0):
        if not isinstance(kind, (SGD, Adadelta)):
            raise TypeError(f"unsupported optimizer {kind!r}")
        self.kind = kind
        self.weight_decay = weight_decay
        self.slots = None

    def _init_slots(self, params):
        n = 1 if isinstance(self.kind, SGD) else 2
        self.slots = [[np.zeros_like(p) for p in params] for _ in range(n)]

    def step(self, params: list, grads: list, is_weight: list) -> None:
        if self.slots is None:
            self._init_slots(params)
        if len(params) != len(self.slots[0]):
            raise ShapeError("optimizer state does not match parameter list")
        k = self.kind
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.slots[0][i].shape:
                raise ShapeError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
            if isinstance(k, SGD):
                v = self.slots[0][i]
                v *= k.momentum
                v -= k.lr * g
                delta = v
            else:
                eg2, edx2 = self.slots[0][i], self.slots[1][i]
                eg2 *= k.rho
                eg2 += (1.0 - k.rho) * g * g
                delta = -np.sqrt(edx2 + k.eps) / np.sqrt(eg2 + k.eps) * g
                edx2 *= k.rho
                edx2 += (1.0 - k.rho) * delta * delta
                delta = k.lr * delta
            p += delta
            if self.weight_decay and is_weight[i]:
                p *= 1.0 - k.lr * self.weight_decay


def make_optimizer(name: str, weight_decay: float = 0.0, **kw) -> OptimizerState:
    if name == "sgd":
        return OptimizerState(SGD(**kw), weight_decay)
    if name == "adadelta":
        return OptimizerState(Adadelta(**kw), weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")


def backward_and_step(net: Network, cache: ForwardCache, targets, opt: OptimizerState) -> float:
    """Backprop, update parameters in place, return the pre-update loss."""
    loss, grads = backward(net, cache, targets)
    opt.step(net.parameters(), grads, net.is_weight())
    return loss


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True
    optimizer: str = "adadelta"
    optimizer_args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    network: Network
    loss_history: list


def train(net: Network, data: Dataset, cfg: TrainConfig, rng: RngStream | None = None) -> TrainResult:
    """Fixed-epoch minibatch training; mutates ``net`` and returns it with the loss history.

    ``rng`` drives shuffling and dropout masks; it defaults to stream 0 of
    ``cfg.seed``.  Raises NumericalError as soon as the loss or any parameter
    becomes non-finite.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.labels.max() >= net.spec.n_classes:
        raise ValueError("labels exceed the network's class count")
    rng = rng if rng is not None else RngStream(cfg.seed, 0).child(1)
    opt = make_optimizer(cfg.optimizer, net.spec.loss.weight_decay, **cfg.optimizer_args)
    n = len(data)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                out, cache = forward(net, data.features[idx], DropoutMode.TRAIN, rng)
                if out.uncertainty_channel is not None and not np.all(np.isfinite(out.uncertainty_channel)):
                    raise NumericalError(f"non-finite uncertainty channel at epoch {epoch}")
                loss = backward_and_step(net, cache, data.labels[idx], opt)
            except NonFiniteError as exc:
                raise NumericalError(f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            for j, p in enumerate(net.parameters()):
                if not np.all(np.isfinite(p)):
                    raise NumericalError(f"parameter {j} became non-finite at epoch {epoch}")
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return TrainResult(net, history)


def fit(spec: NetworkSpec, data: Dataset, cfg: TrainConfig, stream_id: int = 0) -> TrainResult:
    """Build and train one network on stream ``(cfg.seed, stream_id)``."""
    rng = RngStream(cfg.seed, stream_id)
    net = build(spec, rng.child(0))
    return train(net, data, cfg, rng.child(1))


def train_ensemble(spec: NetworkSpec, data: Dataset, cfg: TrainConfig, members: int) -> list:
    """Independently initialised and shuffled members on streams 0..members-1."""
    if members < 1:
        raise ValueError("ensemble needs at least one member")
    return [fit(spec, data, cfg, stream_id=k) for k in range(members)]


def with_loss(spec: NetworkSpec, **kw) -> NetworkSpec:
    return replace(spec, loss=replace(spec.loss, **kw))
