"""Ranking and classification metrics.

Conventions: ROC AUC credits ties with 0.5; average precision ranks by
descending score with ties kept in input order; argmax ties go to the lowest
class index; NLL floors probabilities at 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError
from .numeric import as_matrix, check_finite

NLL_FLOOR = 1e-12


@dataclass
class BinaryScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = check_finite(np.asarray(self.scores, dtype=np.float64).reshape(-1), "scores")
        self.labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ShapeError("scores and labels differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")


@dataclass
class EvalReport:
    roc_auc: float
    average_precision: float
    accuracy: float
    nll: float


def _as_set(s, labels=None) -> BinaryScoredSet:
    return s if labels is None else BinaryScoredSet(s, labels)


def roc_auc(s, labels=None) -> float:
    """Mann-Whitney U / (n_pos * n_neg), via average ranks (O(n log n))."""
    s = _as_set(s, labels)
    pos = s.labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both positive and negative samples")
    ranks = rankdata(s.scores)  # 1-based, ties averaged
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_precision(s, labels=None) -> float:
    """Mean over positives of precision at that positive's rank."""
    s = _as_set(s, labels)
    n_pos = int(s.labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-s.scores, kind="stable")
    hit = s.labels[order]
    hits = np.cumsum(hit)
    ranks = np.arange(1, hit.size + 1)
    return math.fsum((hits[hit == 1] / ranks[hit == 1]).tolist()) / n_pos


def accuracy(probs, labels) -> float:
    p = as_matrix(probs, "probs")
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != p.shape[0]:
        raise ShapeError("labels and probability rows differ in count")
    return float(np.mean(p.argmax(axis=1) == y))


def nll(probs, labels) -> float:
    p = as_matrix(probs, "probs")
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if y.shape[0] != p.shape[0]:
        raise ShapeError("labels and probability rows differ in count")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ValueError("label out of range")
    picked = np.maximum(p[np.arange(y.size), y], NLL_FLOOR)
    return float(np.mean(-np.log(picked)))


def rank_bin_normalise(values, bins: int = 400) -> np.ndarray:
    """Map values to equal-population rank bins scaled into [0, 1].

    The 0-based rank ``r`` (tied values share their mean rank) goes to bin
    ``floor(r * bins / n)``, reported as ``bin / (bins - 1)``.
    """
    v = check_finite(np.asarray(values, dtype=np.float64).reshape(-1), "values")
    if v.size == 0:
        raise ValueError("rank_bin_normalise needs at least one value")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    ranks = rankdata(v) - 1.0
    b = np.minimum(np.floor(ranks * bins / v.size), bins - 1)
    return b / (bins - 1) if bins > 1 else np.zeros_like(b)


def evaluate(scores, is_positive, probs, labels) -> EvalReport:
    bs = BinaryScoredSet(scores, is_positive)
    return EvalReport(roc_auc(bs), average_precision(bs), accuracy(probs, labels), nll(probs, labels))
