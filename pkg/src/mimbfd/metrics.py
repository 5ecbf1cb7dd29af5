"""Ranking and classification metrics for the fraud (positive) class."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError


def auc(scores, labels) -> float:
    """P(random fraud node outranks random benign node), ties counting one half.

    Uses the rank-sum form; the numerator is a multiple of 1/2 so the result
    equals explicit pair counting exactly.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC undefined: {n_pos} positive and {n_neg} negative samples")
    ranks = rankdata(s)  # average ranks, so ties contribute 1/2 per pair
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(pred, labels) -> dict[str, int]:
    p = np.asarray(pred).ravel()
    y = np.asarray(labels).ravel()
    return {
        "tp": int(np.sum((p == 1) & (y == 1))),
        "fp": int(np.sum((p == 1) & (y == 0))),
        "tn": int(np.sum((p == 0) & (y == 0))),
        "fn": int(np.sum((p == 0) & (y == 1))),
    }


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def recall(pred, labels, positive: int = 1) -> float:
    c = confusion(pred, labels)
    if positive == 1:
        return _ratio(c["tp"], c["tp"] + c["fn"])
    return _ratio(c["tn"], c["tn"] + c["fp"])


def f1(pred, labels, positive: int = 1) -> float:
    c = confusion(pred, labels)
    if positive == 1:
        tp, fp, fn = c["tp"], c["fp"], c["fn"]
    else:
        tp, fp, fn = c["tn"], c["fn"], c["fp"]
    return _ratio(2 * tp, 2 * tp + fp + fn)


def macro_f1(pred, labels) -> float:
    return 0.5 * (f1(pred, labels, 1) + f1(pred, labels, 0))


def macro_recall(pred, labels) -> float:
    return 0.5 * (recall(pred, labels, 1) + recall(pred, labels, 0))
