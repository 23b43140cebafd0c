"""Classification and routing metrics for mixed test sets."""
from __future__ import annotations

import numpy as np


def macro_f1(predictions, labels, classes=None) -> float:
    """Unweighted mean of per-class F1; a class that is never predicted scores 0."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if classes is None:
        classes = np.union1d(np.unique(p), np.unique(y))
    if len(classes) == 0:
        return 0.0
    scores = []
    for k in classes:
        tp = np.sum((p == k) & (y == k))
        fp = np.sum((p == k) & (y != k))
        fn = np.sum((p != k) & (y == k))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def routing_confusion(branches, origins) -> list:
    """2x2 counts: rows are the true origin (source, target), columns the chosen branch."""
    b = np.asarray(branches, dtype=np.int64)
    o = np.asarray(origins, dtype=np.int64)
    return [[int(np.sum((o == i) & (b == j))) for j in (0, 1)] for i in (0, 1)]


def compute_metrics(predictions, labels, branches, origins, memberships=None, classes=None) -> dict:
    """Accuracy, macro-F1, routing accuracy and routing confusion.

    ``branches`` and ``origins`` use 0 for source and 1 for target.
    """
    p = np.asarray(predictions)
    y = np.asarray(labels)
    b = np.asarray(branches)
    o = np.asarray(origins)
    if not (len(p) == len(y) == len(b) == len(o)):
        raise ValueError(
            f"length mismatch: predictions {len(p)}, labels {len(y)}, branches {len(b)}, origins {len(o)}"
        )
    n = len(y)
    out = {
        "accuracy": float(np.mean(p == y)) if n else 0.0,
        "macro_f1": macro_f1(p, y, classes) if n else 0.0,
        "routing_accuracy": float(np.mean(b == o)) if n else 0.0,
        "confusion": routing_confusion(b, o),
    }
    if memberships is not None:
        out["membership"] = dict(memberships)
    return out
