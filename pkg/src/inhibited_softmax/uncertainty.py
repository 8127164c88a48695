"""Scalar uncertainty scores from model outputs (higher = more uncertain)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .heads import HeadOutput
from .layers import DropoutMode
from .network import Network, predict
from .numeric import RngStream, as_matrix

METHODS = ("IS", "BASE", "BASEE", "MCD", "DE")


@dataclass(frozen=True)
class UncertaintyMethod:
    """One of IS, BASE (1 - max p), BASEE (entropy), MCD, DE."""

    name: str
    passes: int = 50
    members: int = 5

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown uncertainty method {self.name!r}; expected one of {METHODS}")
        if self.name == "MCD" and self.passes < 2:
            raise ValueError("MC dropout needs at least 2 passes")
        if self.name == "DE" and self.members < 2:
            raise ValueError("deep ensemble needs at least 2 members")


@dataclass
class ScoredBatch:
    scores: np.ndarray
    probs: np.ndarray


def _check_rows(probs, tol=1e-9):
    p = as_matrix(probs, "probs")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise ValueError("probability rows must be non-negative and sum to 1")
    return p


def score_is(out: HeadOutput) -> ScoredBatch:
    """Score = the inhibited softmax's extra channel; probs renormalised to sum 1."""
    if out.uncertainty_channel is None:
        raise ValueError("head output has no uncertainty channel (not an inhibited softmax)")
    p = out.class_probs
    return ScoredBatch(np.asarray(out.uncertainty_channel, dtype=np.float64).copy(),
                       p / p.sum(axis=1, keepdims=True))


def score_maxprob(probs) -> ScoredBatch:
    p = _check_rows(probs)
    return ScoredBatch(1.0 - p.max(axis=1), p)


def entropy(p: np.ndarray) -> np.ndarray:
    """Row entropies in nats, with 0 log 0 = 0."""
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1)


def score_entropy(probs) -> ScoredBatch:
    p = _check_rows(probs)
    return ScoredBatch(entropy(p), p)


def score_predictive_entropy(prob_stack) -> ScoredBatch:
    """Entropy of the mean prediction over stochastic passes or ensemble members."""
    stack = [as_matrix(p, "probs") for p in prob_stack]
    if len(stack) < 2:
        raise ValueError("predictive entropy needs at least 2 members")
    if any(p.shape != stack[0].shape for p in stack):
        raise ShapeError("all probability matrices must share one shape")
    mean = np.mean(np.stack(stack), axis=0)
    return ScoredBatch(entropy(mean), mean)


def classification_probs(out: HeadOutput) -> np.ndarray:
    if out.uncertainty_channel is None:
        return out.class_probs
    return score_is(out).probs


def mc_dropout_predict(net: Network, x, passes: int, rng: RngStream) -> list:
    """Class probabilities from ``passes`` forward passes with fresh dropout masks."""
    if not net.has_dropout:
        raise ValueError("MC dropout requires a network with dropout layers")
    if passes < 2:
        raise ValueError("MC dropout needs at least 2 passes")
    return [classification_probs(predict(net, x, DropoutMode.STOCHASTIC, rng)) for _ in range(passes)]


def score_method(method: UncertaintyMethod, nets, x, rng: RngStream | None = None) -> ScoredBatch:
    """Dispatch: ``nets`` is one network, or a list of members for DE."""
    name = method.name
    if name == "DE":
        members = list(nets)
        return score_predictive_entropy([classification_probs(predict(n, x)) for n in members])
    net = nets[0] if isinstance(nets, (list, tuple)) else nets
    if name == "MCD":
        return score_predictive_entropy(mc_dropout_predict(net, x, method.passes, rng))
    out = predict(net, x)
    if name == "IS":
        return score_is(out)
    if name == "BASE":
        return score_maxprob(out.class_probs)
    return score_entropy(out.class_probs)
