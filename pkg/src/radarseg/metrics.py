"""Point-wise segmentation metrics: confusion matrix, P/R/F1/IoU, PR curves.

Zero denominators resolve to 1.0: a class that is never predicted has
perfect precision, an absent class has perfect recall, and an empty union
has IoU 1.  This keeps every metric and every curve sample total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    iou: float
    support: int


@dataclass(frozen=True)
class PrCurve:
    class_code: int
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))


def _ratio(num, den):
    return 1.0 if den == 0 else num / den


def f1_score(precision, recall):
    """Harmonic mean ``2 / (1/p + 1/r)``; 0 when either term is 0."""
    if precision == 0 or recall == 0:
        return 0.0
    return 2.0 / (1.0 / precision + 1.0 / recall)


def iou_from_f1(f1):
    """Jaccard index implied by an F1 (Dice) score."""
    return f1 / (2.0 - f1)


def confusion_matrix(pred, truth, K):
    """``cm[t, p]`` = number of points with true class t predicted as p."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("pred and truth must be 1-D and of equal length")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise ValueError(f"{name} contains a class code outside [0, {K})")
    return np.bincount(truth * K + pred, minlength=K * K).reshape(K, K)


def class_metrics(cm):
    cm = np.asarray(cm)
    out = []
    for c in range(cm.shape[0]):
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        out.append(ClassMetrics(
            precision, recall, f1_score(precision, recall),
            _ratio(tp, tp + fp + fn), tp + fn,
        ))
    return out


def accuracy(cm):
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def default_thresholds(step=0.01):
    n = int(round(1.0 / step))
    if n < 1 or not np.isclose(n * step, 1.0):
        raise ValueError(f"threshold step must divide 1 evenly, got {step!r}")
    return np.arange(n + 1) / n


def pr_curve(posteriors, truth, k, thresholds=None):
    """One-vs-rest precision/recall of class ``k`` as its posterior threshold sweeps.

    A point counts as positive at threshold ``t`` when ``posteriors[:, k] >= t``.
    """
    post = np.asarray(posteriors, dtype=float)
    truth = np.asarray(truth, dtype=np.int64)
    if post.ndim != 2 or post.shape[0] == 0:
        raise ValueError("posteriors must be a non-empty (N, K) array")
    if truth.shape != (post.shape[0],):
        raise ValueError("truth length must match the number of posterior rows")
    if not 0 <= k < post.shape[1]:
        raise ValueError(f"class {k} out of range for K={post.shape[1]}")
    if np.abs(post.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("posterior rows must sum to 1")
    thr = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    if thr.ndim != 1 or thr.size == 0 or (np.diff(thr) <= 0).any():
        raise ValueError("thresholds must be strictly increasing")
    if thr[0] < 0 or thr[-1] > 1:
        raise ValueError("thresholds must lie in [0, 1]")

    score = post[:, k]
    actual = truth == k
    # sort descending once; positives at t are a prefix of the sorted order
    order = np.argsort(-score, kind="stable")
    sorted_score = score[order]
    cum_tp = np.concatenate([[0], np.cumsum(actual[order])])
    n_pos = np.searchsorted(-sorted_score, -thr, side="right")
    tp = cum_tp[n_pos]
    fp = n_pos - tp
    fn = int(actual.sum()) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp == 0, 1.0, tp / np.maximum(tp + fp, 1))
        recall = np.where(tp + fn == 0, 1.0, tp / np.maximum(tp + fn, 1))
    return PrCurve(int(k), thr, precision.astype(float), recall.astype(float))
