"""Hard clusterings from a doubly stochastic membership, plus plain k-means.

``spectral_cluster`` follows the normalized-Laplacian recipe: embed with the
eigenvectors of the k smallest eigenvalues of I - D^{-1/2} Pi D^{-1/2},
row-normalize the embedding, then k-means with k-means++ seeding.  Membership
matrices reaching this module should be (near) doubly stochastic, which makes
D close to the identity; degrees are still computed from the data rather than
assumed.

k-means is also exposed directly as the raw-feature baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ValidationError
from .rng import Xoshiro256StarStar, derive_key
from .sinkhorn import project_converged

EVAL_SINKHORN_TOL = 1e-6


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    source: str  # "spectral_on_pi" | "kmeans_on_features"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.labels.size < 1 or self.labels.min() < 0 or self.labels.max() >= self.k:
            raise ValidationError("labels must be integers in [0, k) with at least one sample")

    def to_json(self, indices=None) -> dict:
        payload = {"k": int(self.k), "labels": [int(l) for l in self.labels], "source": self.source}
        if indices is not None:
            payload["indices"] = [int(i) for i in indices]
        return payload

    def save(self, path: str | Path, indices=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(indices), fh)

    @classmethod
    def load(cls, path: str | Path) -> "ClusterAssignment":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(labels=np.array(raw["labels"]), k=raw["k"], source=raw.get("source", ""))


def build_affinity(C: np.ndarray, gamma: float, cap: int = 15000) -> np.ndarray:
    """Converged entropic projection of C^T C, symmetrized.

    ``C`` holds unit-norm latent codes as columns.  The n x n membership and
    its eigendecomposition are the scaling bottleneck, so more than ``cap``
    samples are refused; reduce with ``store.subsample_eval`` first.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.shape[1] > cap:
        raise ValidationError(
            f"{C.shape[1]} samples exceed the evaluation cap {cap}; "
            "subsample with store.subsample_eval first"
        )
    norms = np.linalg.norm(C, axis=0)
    if not np.allclose(norms, 1.0, atol=1e-6):
        C = C / np.clip(norms, 1e-12, None)[None, :]
    Pi = project_converged(C.T @ C, gamma, tol=EVAL_SINKHORN_TOL)
    return (Pi + Pi.T) / 2.0


def _laplacian_embedding(Pi: np.ndarray, m: int) -> np.ndarray:
    """Eigenvectors of the m smallest eigenvalues of the normalized Laplacian."""
    Pi = np.asarray(Pi, dtype=np.float64)
    n = Pi.shape[0]
    if Pi.ndim != 2 or Pi.shape[1] != n:
        raise ValidationError(f"membership must be square, got {Pi.shape}")
    if m > n:
        raise ValidationError(f"cannot take {m} eigenvectors of a {n}x{n} Laplacian")
    deg = Pi.sum(axis=1)
    if (deg <= 0).any():
        raise ValidationError("membership has a zero-degree row")
    inv_root = 1.0 / np.sqrt(deg)
    L = -(Pi * inv_root[:, None] * inv_root[None, :])
    L[np.diag_indices(n)] += 1.0
    L = (L + L.T) / 2.0
    try:
        _, vecs = scipy.linalg.eigh(L, subset_by_index=[0, m - 1])
    except scipy.linalg.LinAlgError as exc:
        diag = np.abs(np.diag(L))
        raise ValidationError(
            f"eigendecomposition failed (n={n}, diag range [{diag.min():.3e}, {diag.max():.3e}])"
        ) from exc
    return vecs


def _row_normalize(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    return V / np.clip(norms, 1e-12, None)


def spectral_cluster(Pi: np.ndarray, k: int, seed: int) -> ClusterAssignment:
    """k clusters from a membership matrix via the normalized Laplacian."""
    n = np.asarray(Pi).shape[0]
    if not (1 <= k <= n):
        raise ValidationError(f"need 1 <= k <= {n}, got k={k}")
    embedding = _row_normalize(_laplacian_embedding(Pi, k))
    result = kmeans(embedding, k, seed)
    return ClusterAssignment(labels=result.labels, k=k, source="spectral_on_pi")


def _kmeans_pp_init(points: np.ndarray, k: int, stream: Xoshiro256StarStar) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = stream.randbelow(n)
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at existing centers; spread over unchosen points
            candidates = np.flatnonzero(d2 == d2.max())
            choice = candidates[stream.randbelow(len(candidates))]
        else:
            r = stream.uniform() * total
            choice = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            choice = min(choice, n - 1)
        centers[i] = points[choice]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _dist2(points: np.ndarray, centers: np.ndarray, sq: np.ndarray) -> np.ndarray:
    d2 = sq[:, None] - 2.0 * points @ centers.T + (centers**2).sum(axis=1)[None, :]
    return np.clip(d2, 0.0, None)


def _lloyd(
    points: np.ndarray, centers: np.ndarray, max_iter: int
) -> tuple[np.ndarray, float, list[float]]:
    """Lloyd iterations; returns labels, final WCSS, and the per-assignment
    WCSS history (non-increasing).  Emptied centroids re-seed at the point
    farthest from its assigned center."""
    n, k = points.shape[0], centers.shape[0]
    sq = (points**2).sum(axis=1)
    labels_prev = None
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _dist2(points, centers, sq)
        labels = d2.argmin(axis=1)
        for j in range(k):
            if not (labels == j).any():
                assigned = np.take_along_axis(d2, labels[:, None], axis=1).ravel()
                far = int(assigned.argmax())
                centers[j] = points[far]
                labels[far] = j
                d2[:, j] = _dist2(points, centers[j : j + 1], sq).ravel()
        wcss = float(np.take_along_axis(d2, labels[:, None], axis=1).sum())
        history.append(wcss)
        if labels_prev is not None and np.array_equal(labels, labels_prev):
            break
        labels_prev = labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    return labels, history[-1], history


def kmeans(
    points: np.ndarray, k: int, seed: int, restarts: int = 10, max_iter: int = 300
) -> ClusterAssignment:
    """Best-of-restarts Lloyd with k-means++ seeding, deterministic in seed."""
    labels, _ = kmeans_with_wcss(points, k, seed, restarts, max_iter)
    return ClusterAssignment(labels=labels, k=k, source="kmeans_on_features")


def kmeans_with_wcss(
    points: np.ndarray, k: int, seed: int, restarts: int = 10, max_iter: int = 300
) -> tuple[np.ndarray, float]:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValidationError(f"points must be n x m, got {points.shape}")
    n = points.shape[0]
    if not (1 <= k <= n):
        raise ValidationError(f"need 1 <= k <= {n}, got k={k}")
    best = None
    for r in range(restarts):
        stream = Xoshiro256StarStar(derive_key(seed, k, r))
        centers = _kmeans_pp_init(points, k, stream)
        labels, wcss, _ = _lloyd(points, centers, max_iter)
        if best is None or wcss < best[0]:
            best = (wcss, labels)
    return best[1], best[0]
