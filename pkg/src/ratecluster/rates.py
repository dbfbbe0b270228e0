"""Coding-rate objectives and their closed-form gradients.

Features are column matrices ``Z`` of shape (d, n).  The expansion rate of a
set of features at squared distortion ``eps_sq`` is

    rate(Z) = logdet(I_d + d/(n*eps_sq) * Z Z^T),

the membership-weighted compression rate against a doubly stochastic ``Pi``
(columns ``Pi_j`` sum to one) is

    rate_compressed(Z, Pi) = (1/n) * sum_j logdet(I_d + d/eps_sq * Z diag(Pi_j) Z^T),

and their difference is the training objective.  Coding length is
``(n + d) * rate(Z)``.

Log-determinants go through Cholesky on the smaller Gram side
(``det(I + c A A^T) = det(I + c A^T A)``), falling back to a symmetric
eigendecomposition with eigenvalues clamped at zero when rounding makes a
nearly rank-deficient Gram matrix numerically indefinite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ValidationError

# float64 elements held per intermediate block (Gram stacks, outer-product
# slabs); bounds peak memory at a few hundred MB
_BLOCK_ELEMS = 50_000_000

PI_SUM_TOL = 1e-5


@dataclass(frozen=True)
class RateConfig:
    """Distortion and dimension context for all rate computations."""

    eps_sq: float = 0.1
    feature_dim: int | None = None

    def __post_init__(self):
        if not (self.eps_sq > 0):
            raise ValidationError(f"eps_sq must be positive, got {self.eps_sq}")


def _check_features(Z: np.ndarray, cfg: RateConfig) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValidationError(f"features must be d x n, got shape {Z.shape}")
    if not np.isfinite(Z).all():
        raise ValidationError("features contain non-finite entries")
    if cfg.feature_dim is not None and Z.shape[0] != cfg.feature_dim:
        raise ValidationError(
            f"feature dim {Z.shape[0]} does not match configured {cfg.feature_dim}"
        )
    return Z


def _check_membership(Pi: np.ndarray, n: int, sum_tol: float) -> np.ndarray:
    Pi = np.asarray(Pi, dtype=np.float64)
    if Pi.shape != (n, n):
        raise ValidationError(f"membership must be {n}x{n}, got {Pi.shape}")
    if Pi.min() < -1e-12:
        raise ValidationError("membership has negative entries")
    rows = np.abs(Pi.sum(axis=1) - 1.0).max()
    cols = np.abs(Pi.sum(axis=0) - 1.0).max()
    if rows > sum_tol or cols > sum_tol:
        raise ValidationError(
            f"membership is not doubly stochastic (row err {rows:.2e}, col err {cols:.2e})"
        )
    return Pi


def _logdet_i_plus(G: np.ndarray, c: float) -> float:
    """logdet(I + c*G) for symmetric PSD G, Cholesky first, eigh fallback."""
    M = c * G
    M[np.diag_indices_from(M)] += 1.0
    try:
        L = np.linalg.cholesky(M)
        return float(2.0 * np.log(np.diagonal(L)).sum())
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh((G + G.T) / 2.0)
        return float(np.log1p(c * np.clip(lam, 0.0, None)).sum())


def _logdet_i_plus_batch(G: np.ndarray, c: float) -> np.ndarray:
    """Batched logdet(I + c*G_t) over a stack of symmetric PSD matrices."""
    M = c * G
    d = M.shape[-1]
    M[:, np.arange(d), np.arange(d)] += 1.0
    try:
        L = np.linalg.cholesky(M)
        return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh((G + np.swapaxes(G, -1, -2)) / 2.0)
        return np.log1p(c * np.clip(lam, 0.0, None)).sum(axis=-1)


def _gram_small_side(Z: np.ndarray) -> np.ndarray:
    """Z Z^T if d <= n else Z^T Z; both give the same logdet(I + c*.)."""
    d, n = Z.shape
    return Z @ Z.T if d <= n else Z.T @ Z


def rate(Z: np.ndarray, cfg: RateConfig) -> float:
    """Expansion rate logdet(I + d/(n*eps_sq) Z Z^T); zero iff Z is zero."""
    Z = _check_features(Z, cfg)
    d, n = Z.shape
    c = d / (n * cfg.eps_sq)
    return _logdet_i_plus(_gram_small_side(Z), c)


def coding_length(Z: np.ndarray, cfg: RateConfig) -> float:
    """(n + d) * rate(Z): total cost of coding the columns of Z."""
    d, n = np.asarray(Z).shape
    return (n + d) * rate(Z, cfg)


def _pi_chunks(n: int, d: int) -> int:
    return max(1, min(n, _BLOCK_ELEMS // max(1, d * d)))


def _outer_slab(Z: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Flattened outer products z_i z_i^T for columns lo..hi, shape (d^2, hi-lo)."""
    d = Z.shape[0]
    return (Z[:, None, lo:hi] * Z[None, :, lo:hi]).reshape(d * d, hi - lo)


def _weighted_grams(Z: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Stack of G_t = Z diag(Pi_t) Z^T for the membership columns in ``cols``.

    G_t[a, b] = sum_i Z[a,i] Z[b,i] cols[i,t], i.e. one GEMM of the
    outer-product slab against the membership columns; the slab streams in
    blocks so memory stays bounded.
    """
    d, n = Z.shape
    m = cols.shape[1]
    flat = np.zeros((d * d, m))
    step = max(1, _BLOCK_ELEMS // (d * d))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        flat += _outer_slab(Z, lo, hi) @ cols[lo:hi]
    return np.ascontiguousarray(flat.T).reshape(m, d, d)


def rate_compressed(
    Z: np.ndarray, Pi: np.ndarray, cfg: RateConfig, sum_tol: float = PI_SUM_TOL
) -> float:
    """Average per-column compression rate under membership ``Pi``.

    ``sum_tol`` bounds how far row/column sums may sit from one; training
    loosens it because a fixed-sweep-count projection is deliberately
    truncated (converged projections satisfy the default).
    """
    Z = _check_features(Z, cfg)
    d, n = Z.shape
    Pi = _check_membership(Pi, n, sum_tol)
    c = d / cfg.eps_sq
    total = 0.0
    step = _pi_chunks(n, d)
    for lo in range(0, n, step):
        cols = Pi[:, lo : lo + step]  # (n, m)
        if d <= n:
            G = _weighted_grams(Z, cols)
        else:
            root = np.sqrt(np.clip(cols.T, 0.0, None))  # (m, n)
            G = root[:, :, None] * (Z.T @ Z)[None, :, :] * root[:, None, :]
        total += float(_logdet_i_plus_batch(G, c).sum())
    return total / n


def rate_reduction(
    Z: np.ndarray, Pi: np.ndarray, cfg: RateConfig, sum_tol: float = PI_SUM_TOL
) -> float:
    """rate(Z) - rate_compressed(Z, Pi); nonnegative for doubly stochastic Pi."""
    return rate(Z, cfg) - rate_compressed(Z, Pi, cfg, sum_tol)


def rate_grad(Z: np.ndarray, cfg: RateConfig) -> np.ndarray:
    """Gradient of ``rate`` w.r.t. Z: 2c (I + c Z Z^T)^{-1} Z with c = d/(n*eps_sq)."""
    Z = _check_features(Z, cfg)
    d, n = Z.shape
    c = d / (n * cfg.eps_sq)
    if d <= n:
        M = c * (Z @ Z.T)
        M[np.diag_indices_from(M)] += 1.0
        try:
            return 2.0 * c * cho_solve(cho_factor(M, lower=True), Z)
        except np.linalg.LinAlgError:
            lam, U = np.linalg.eigh((M + M.T) / 2.0)
            return 2.0 * c * (U @ ((U.T @ Z) / np.clip(lam, 1.0, None)[:, None]))
    M = c * (Z.T @ Z)
    M[np.diag_indices_from(M)] += 1.0
    return 2.0 * c * cho_solve(cho_factor(M, lower=True), Z.T).T


def compressed_grads(
    Z: np.ndarray, Pi: np.ndarray, cfg: RateConfig, sum_tol: float = PI_SUM_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``rate_compressed`` w.r.t. Z and Pi.

    With M_t = I + c Z diag(Pi_t) Z^T and c = d/eps_sq:

        dZ  = (2c/n) * sum_t M_t^{-1} Z diag(Pi_t)
        dPi[i, t] = (c/n) * z_i^T M_t^{-1} z_i

    Both reduce to large GEMMs against the stack of inverses:
    dPi is (M^{-1} flattened) x (z_i outer products flattened), and dZ is
    S_i z_i with S_i = sum_t Pi_it M_t^{-1}.  M_t has eigenvalues >= 1, so
    the batched inverse is well conditioned.
    """
    Z = _check_features(Z, cfg)
    d, n = Z.shape
    Pi = _check_membership(Pi, n, sum_tol)
    c = d / cfg.eps_sq
    gPi = np.empty_like(Pi)
    S = np.zeros((n, d * d))  # S_i = sum_t Pi_it M_t^{-1}, flattened
    step = _pi_chunks(n, d)
    slab_step = max(1, _BLOCK_ELEMS // (d * d))
    for lo in range(0, n, step):
        cols = Pi[:, lo : lo + step]  # (n, m)
        m = cols.shape[1]
        M = c * _weighted_grams(Z, cols)
        M[:, np.arange(d), np.arange(d)] += 1.0
        W = np.linalg.inv(M).reshape(m, d * d)
        for slo in range(0, n, slab_step):
            shi = min(n, slo + slab_step)
            gPi[slo:shi, lo : lo + step] = (W @ _outer_slab(Z, slo, shi)).T
        S += cols @ W
    gZ = np.matmul(S.reshape(n, d, d), Z.T[:, :, None])[:, :, 0].T
    gZ = np.ascontiguousarray(gZ) * (2.0 * c / n)
    gPi *= c / n
    return gZ, gPi


def compressed_value_and_grads(
    Z: np.ndarray, Pi: np.ndarray, cfg: RateConfig, sum_tol: float = PI_SUM_TOL
) -> tuple[float, np.ndarray, np.ndarray]:
    """``rate_compressed`` and both its gradients from one Gram-stack pass.

    The training loop needs all three per batch; sharing the weighted Grams,
    Cholesky factors, and inverses roughly halves the step cost relative to
    separate calls.
    """
    Z = _check_features(Z, cfg)
    d, n = Z.shape
    Pi = _check_membership(Pi, n, sum_tol)
    c = d / cfg.eps_sq
    total = 0.0
    gPi = np.empty_like(Pi)
    S = np.zeros((n, d * d))
    step = _pi_chunks(n, d)
    slab_step = max(1, _BLOCK_ELEMS // (d * d))
    for lo in range(0, n, step):
        cols = Pi[:, lo : lo + step]
        m = cols.shape[1]
        M = c * _weighted_grams(Z, cols)
        M[:, np.arange(d), np.arange(d)] += 1.0
        try:
            L = np.linalg.cholesky(M)
            total += float(2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum())
        except np.linalg.LinAlgError:
            lam = np.linalg.eigvalsh((M + np.swapaxes(M, -1, -2)) / 2.0)
            total += float(np.log(np.clip(lam, 1.0, None)).sum())
        W = np.linalg.inv(M).reshape(m, d * d)
        for slo in range(0, n, slab_step):
            shi = min(n, slo + slab_step)
            gPi[slo:shi, lo : lo + step] = (W @ _outer_slab(Z, slo, shi)).T
        S += cols @ W
    gZ = np.matmul(S.reshape(n, d, d), Z.T[:, :, None])[:, :, 0].T
    gZ = np.ascontiguousarray(gZ) * (2.0 * c / n)
    gPi *= c / n
    return total / n, gZ, gPi
