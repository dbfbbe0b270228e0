"""Clustering agreement metrics: accuracy by optimal matching, and NMI.

Accuracy counts samples explained by the best one-to-one map between
predicted and true cluster ids (maximum-weight assignment on the confusion
matrix), so any relabeling of either side scores identically.  NMI uses
natural logs; the normalization defaults to the geometric mean of the
entropies, with the arithmetic/max variants selectable.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError


def _as_labels(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValidationError("labels must be a non-empty 1-D integer sequence")
    if arr.min() < 0:
        raise ValidationError("labels must be non-negative")
    return arr


def confusion_matrix(pred, truth) -> np.ndarray:
    """Counts[p, t] over predicted label p and true label t."""
    pred, truth = _as_labels(pred), _as_labels(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"label lengths differ: {pred.shape[0]} vs {truth.shape[0]}")
    kp, kt = int(pred.max()) + 1, int(truth.max()) + 1
    counts = np.zeros((kp, kt), dtype=np.int64)
    np.add.at(counts, (pred, truth), 1)
    return counts


def hungarian(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost assignment on a p x q matrix.

    Rectangular inputs behave as if padded square with zero-cost dummies:
    min(p, q) real pairs are returned.  Backed by scipy's solver; the tests
    pin it against exhaustive permutation search.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValidationError(f"cost must be a non-empty 2-D matrix, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValidationError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return pairs, float(cost[rows, cols].sum())


def clustering_accuracy(pred, truth) -> float:
    """Fraction of samples explained by the best cluster-id matching."""
    counts = confusion_matrix(pred, truth)
    pairs, _ = hungarian(counts.max() - counts)
    matched = sum(int(counts[i, j]) for i, j in pairs)
    return matched / counts.sum()


def _entropy(freq: np.ndarray, n: int) -> float:
    p = freq[freq > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth, variant: str = "sqrt") -> float:
    """Normalized mutual information between two labelings.

    ``variant`` picks the normalizer: "sqrt" (geometric mean of entropies),
    "arithmetic", or "max".  When both partitions are a single cluster the
    value is defined as 1; if only one side is degenerate it is 0.
    """
    counts = confusion_matrix(pred, truth).astype(np.float64)
    n = counts.sum()
    hp = _entropy(counts.sum(axis=1), n)
    ht = _entropy(counts.sum(axis=0), n)
    if hp == 0.0 and ht == 0.0:
        return 1.0
    if hp == 0.0 or ht == 0.0:
        return 0.0
    pj = counts.sum(axis=1, keepdims=True) / n
    pt = counts.sum(axis=0, keepdims=True) / n
    nz = counts > 0
    pij = counts[nz] / n
    info = float((pij * np.log(pij / (pj @ pt)[nz])).sum())
    if variant == "sqrt":
        denom = math.sqrt(hp * ht)
    elif variant == "arithmetic":
        denom = (hp + ht) / 2.0
    elif variant == "max":
        denom = max(hp, ht)
    else:
        raise ValidationError(f"unknown NMI variant {variant!r}")
    return info / denom


def evaluation_report(pred, truth, variant: str = "sqrt") -> dict:
    pred, truth = _as_labels(pred), _as_labels(truth)
    return {
        "acc": clustering_accuracy(pred, truth),
        "nmi": nmi(pred, truth, variant),
        "k_pred": int(len(np.unique(pred))),
        "k_true": int(len(np.unique(truth))),
    }
