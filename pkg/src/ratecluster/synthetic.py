"""Synthetic fixtures: union-of-orthogonal-subspace data and random doubly
stochastic matrices.

These are the desk-scale substrate for verifying the pipeline end to end:
points sampled in mutually orthogonal low-dimensional subspaces are the
geometry the training objective is meant to recover, so generator labels act
as ground truth.

Draw order is part of the contract (see :mod:`ratecluster.rng`): one
xoshiro256** stream keyed by ``derive_key(seed)`` supplies, in order, the
ambient x (k*dims) basis normals (row-major), then per point its ``dims``
direction normals, one radius uniform, and ``ambient`` noise normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import Xoshiro256StarStar, derive_key
from .sinkhorn import project_converged
from .store import EmbeddingMatrix


@dataclass(frozen=True)
class SubspaceSpec:
    k: int
    dims: int
    ambient: int
    points_per_cluster: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.k, self.dims, self.ambient, self.points_per_cluster) < 1:
            raise ValidationError("all subspace-spec counts must be >= 1")
        if self.k * self.dims > self.ambient:
            raise ValidationError(
                f"{self.k} subspaces of dim {self.dims} cannot be orthogonal in R^{self.ambient}"
            )
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")


def _orthonormal_columns(raw: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt; chosen over LAPACK QR so the basis is the same
    arithmetic on every platform."""
    Q = raw.copy()
    for j in range(Q.shape[1]):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        norm = np.linalg.norm(Q[:, j])
        if norm < 1e-12:
            raise ValidationError("degenerate random basis draw")
        Q[:, j] /= norm
    return Q


def gen_subspaces(spec: SubspaceSpec) -> tuple[EmbeddingMatrix, np.ndarray]:
    """Sample unit-norm points from k mutually orthogonal subspaces.

    Returns row-vector embeddings and the generator labels.  Each point is
    uniform in its subspace's unit ball (radius u^(1/dims)), plus isotropic
    Gaussian ambient noise, then L2-normalized.
    """
    stream = Xoshiro256StarStar(derive_key(spec.seed))
    total_basis = spec.k * spec.dims
    raw = np.array(stream.normals(spec.ambient * total_basis)).reshape(
        spec.ambient, total_basis
    )
    basis = _orthonormal_columns(raw)
    n = spec.k * spec.points_per_cluster
    X = np.empty((n, spec.ambient))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for cluster in range(spec.k):
        B = basis[:, cluster * spec.dims : (cluster + 1) * spec.dims]
        for _ in range(spec.points_per_cluster):
            direction = np.array(stream.normals(spec.dims))
            dn = np.linalg.norm(direction)
            if dn < 1e-12:
                direction[0] = 1.0
                dn = 1.0
            radius = stream.uniform() ** (1.0 / spec.dims)
            point = B @ (direction * (radius / dn))
            if spec.noise_sigma > 0:
                point = point + spec.noise_sigma * np.array(stream.normals(spec.ambient))
            else:
                stream.normals(spec.ambient)  # keep the stream position fixed
            norm = np.linalg.norm(point)
            X[row] = point / (norm if norm > 1e-12 else 1.0)
            labels[row] = cluster
            row += 1
    return EmbeddingMatrix(data=X), labels


def gen_doubly_stochastic(n: int, seed: int) -> np.ndarray:
    """Random member of the doubly stochastic polytope (sums within 1e-8)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n == 1:
        return np.array([[1.0]])
    stream = Xoshiro256StarStar(derive_key(seed, n))
    A = np.array([stream.uniform() for _ in range(n * n)]).reshape(n, n)
    return project_converged(A, gamma=1.0, tol=1e-9, max_sweeps=10000)
