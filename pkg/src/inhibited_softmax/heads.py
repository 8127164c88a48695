"""Softmax and inhibited-softmax output heads with their losses.

The inhibited softmax appends a constant logit ``a`` to the normaliser::

    IS_a(x)_i = exp(x_i) / (sum_j exp(x_j) + exp(a))

The mass left over, ``exp(a) / (sum_j exp(x_j) + exp(a))``, is an extra
"uncertainty" channel.  Everything is evaluated after subtracting
``max(x_1..x_n, a)`` so large logits never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numeric import as_matrix


@dataclass(frozen=True)
class LossConfig:
    evidence_lambda: float = 1e-6
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.evidence_lambda >= 0:
            raise ValueError(f"evidence_lambda must be >= 0, got {self.evidence_lambda}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class HeadOutput:
    class_probs: np.ndarray
    uncertainty_channel: np.ndarray | None = None


@dataclass(frozen=True)
class SoftmaxHead:
    n_classes: int

    kind = "softmax"

    def forward(self, logits) -> HeadOutput:
        return HeadOutput(softmax_forward(_check_width(logits, self.n_classes)))


@dataclass(frozen=True)
class InhibitedSoftmaxHead:
    n_classes: int
    a: float = 1.0

    kind = "is"

    def forward(self, logits) -> HeadOutput:
        return is_forward(self, logits)


def _check_width(logits, n):
    logits = as_matrix(logits, "logits")
    if logits.shape[1] != n:
        raise ShapeError(f"expected {n} logits per row, got {logits.shape[1]}")
    return logits


def _targets(targets, logits) -> np.ndarray:
    t = np.asarray(targets).reshape(-1)
    if t.shape[0] != logits.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {logits.shape[0]} rows")
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise ValueError("target class index out of range")
    return t.astype(np.intp)


def softmax_forward(logits) -> np.ndarray:
    x = as_matrix(logits, "logits")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _is_parts(logits, a):
    """Shifted exponentials, shifted exp(a) and the shared denominator."""
    x = as_matrix(logits, "logits")
    m = np.maximum(x.max(axis=1, keepdims=True), a)
    e = np.exp(x - m)
    ea = np.exp(a - m)
    s = e.sum(axis=1, keepdims=True)
    return x, m, e, ea, s, s + ea


def is_forward(head: InhibitedSoftmaxHead, logits) -> HeadOutput:
    _check_width(logits, head.n_classes)
    _, _, e, ea, _, denom = _is_parts(logits, head.a)
    return HeadOutput(e / denom, (ea / denom).reshape(-1))


def certainty_factor(head: InhibitedSoftmaxHead, logits) -> np.ndarray:
    """Mass the inhibited softmax puts on the real classes, per row."""
    _check_width(logits, head.n_classes)
    _, _, _, _, s, denom = _is_parts(logits, head.a)
    return (s / denom).reshape(-1)


def ce_loss_softmax(logits, targets):
    """Mean cross-entropy under softmax and its gradient w.r.t. the logits."""
    x = as_matrix(logits, "logits")
    t = _targets(targets, x)
    b = x.shape[0]
    m = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - m).sum(axis=1)) + m[:, 0]
    loss = float(np.mean(lse - x[np.arange(b), t]))
    grad = softmax_forward(x)
    grad[np.arange(b), t] -= 1.0
    return loss, grad / b


def is_nll(head: InhibitedSoftmaxHead, logits, targets) -> np.ndarray:
    """Per-sample ``-log IS_a(x)_t``."""
    x, m, _, _, _, denom = _is_parts(logits, head.a)
    t = _targets(targets, x)
    return np.log(denom[:, 0]) - (x[np.arange(x.shape[0]), t] - m[:, 0])


def ce_loss_is(head: InhibitedSoftmaxHead, logits, targets, penultimate, cfg: LossConfig):
    """Inhibited-softmax cross-entropy minus the evidence bonus.

    ``loss = mean(-log IS_a(x)_t) - lambda * mean(||x_p||_1)``.  Returns
    ``(loss, grad_logits, grad_penultimate)``; both gradients are already
    divided by the batch size.
    """
    x = _check_width(logits, head.n_classes)
    t = _targets(targets, x)
    xp = as_matrix(penultimate, "penultimate")
    if xp.shape[0] != x.shape[0]:
        raise ShapeError("penultimate batch size differs from logits")
    b = x.shape[0]
    lam = cfg.evidence_lambda
    loss = float(np.mean(is_nll(head, x, t)))
    if lam:
        loss -= lam * float(np.mean(np.abs(xp).sum(axis=1)))
    grad = is_forward(head, x).class_probs
    grad[np.arange(b), t] -= 1.0
    grad_pen = -lam * np.sign(xp) / b
    return loss, grad / b, grad_pen


def log_certainty_bias_gradient(logits, a: float = 1.0) -> np.ndarray:
    """d log P_c / d b_i for a bias feeding the inhibited softmax: S_i - IS_i.

    Every entry is strictly positive, so raising all output biases always
    raises the certainty factor.
    """
    x = as_matrix(logits, "logits")
    head = InhibitedSoftmaxHead(x.shape[1], a)
    return softmax_forward(x) - is_forward(head, x).class_probs


def bias_direction_invariance_check(logits, targets, delta: float = 1.0) -> float:
    """|l_S(x + delta*1, t) - l_S(x, t)|; zero up to rounding."""
    x = as_matrix(logits, "logits")
    return abs(ce_loss_softmax(x + delta, targets)[0] - ce_loss_softmax(x, targets)[0])


def is_shift_sensitivity(logits, targets, a: float = 1.0, delta: float = 1.0) -> float:
    """|l_IS(x + delta*1, t) - l_IS(x, t)| for fixed ``a``; strictly positive."""
    x = as_matrix(logits, "logits")
    head = InhibitedSoftmaxHead(x.shape[1], a)
    return abs(float(np.mean(is_nll(head, x + delta, targets))) - float(np.mean(is_nll(head, x, targets))))
