"""Choosing the number of clusters by total coding length, no retraining.

For each candidate k the membership is spectrally partitioned into k groups
and the cost of describing the data with that partition is

    L_k = sum_i (|Z_i| + d) * rate(Z_i)  +  |Z_i| * (-ln(|Z_i| / n)),

feature cost plus label cost (n times the entropy of the cluster-size
distribution).  The reported cluster count is argmin_k L_k, ties to the
smaller k.  The Laplacian eigendecomposition is shared across k: eigenvectors
are computed once up to K and each k uses its leading slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .rates import RateConfig, rate
from .spectral import ClusterAssignment, _laplacian_embedding, _row_normalize, kmeans_with_wcss


@dataclass
class CodingLengthCurve:
    values: list[float]  # L_1 .. L_K
    argmin_k: int

    def __post_init__(self):
        if not self.values:
            raise ValidationError("curve needs at least one value")
        expected = 1 + min(range(len(self.values)), key=lambda i: (self.values[i], i))
        if self.argmin_k != expected:
            raise ValidationError(
                f"argmin_k {self.argmin_k} does not attain the minimum (expected {expected})"
            )

    @property
    def K(self) -> int:
        return len(self.values)


def partition_cost(Z: np.ndarray, labels: np.ndarray, k: int, cfg: RateConfig) -> float:
    """L_k of an explicit partition; empty clusters contribute nothing."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    n = Z.shape[1]
    if labels.shape[0] != n:
        raise ValidationError(f"{labels.shape[0]} labels for {n} feature columns")
    total = 0.0
    for i in range(k):
        cols = labels == i
        size = int(cols.sum())
        if size == 0:
            continue
        Zi = Z[:, cols]
        total += (size + Z.shape[0]) * rate(Zi, cfg)
        total += size * (-math.log(size / n))
    return total


def select_k(
    Z: np.ndarray,
    Pi: np.ndarray,
    K: int,
    cfg: RateConfig,
    seed: int = 0,
) -> tuple[CodingLengthCurve, list[ClusterAssignment]]:
    """Coding-length curve over k = 1..K for learned features and membership."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1]
    if not (1 <= K <= n):
        raise ValidationError(f"need 1 <= K <= {n}, got K={K}")
    all_vecs = _laplacian_embedding(Pi, K)
    values = []
    assignments = []
    for k in range(1, K + 1):
        embedding = _row_normalize(all_vecs[:, :k])
        labels, _ = kmeans_with_wcss(embedding, k, seed)
        assignments.append(ClusterAssignment(labels=labels, k=k, source="spectral_on_pi"))
        values.append(partition_cost(Z, labels, k, cfg))
    argmin_k = 1 + min(range(K), key=lambda i: (values[i], i))
    return CodingLengthCurve(values=values, argmin_k=argmin_k), assignments


def export_curve(curve: CodingLengthCurve, path: str | Path, svg_path: str | Path | None = None):
    """Write the curve as CSV (17 significant digits) and optionally as SVG."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("k,coding_length\n")
        for i, v in enumerate(curve.values, start=1):
            fh.write(f"{i},{v:.17g}\n")
    tmp.replace(path)
    if svg_path is not None:
        _write_svg(curve, Path(svg_path))


def read_curve(path: str | Path) -> CodingLengthCurve:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "k,coding_length":
            raise ValidationError(f"{path}: unexpected curve header {header!r}")
        for line in fh:
            if line.strip():
                _, v = line.split(",")
                values.append(float(v))
    argmin_k = 1 + min(range(len(values)), key=lambda i: (values[i], i))
    return CodingLengthCurve(values=values, argmin_k=argmin_k)


def _write_svg(curve: CodingLengthCurve, path: Path) -> None:
    # hand-rolled plot: polyline over k with the argmin marked
    W, H, PAD = 640, 400, 50
    K = curve.K
    lo, hi = min(curve.values), max(curve.values)
    span = (hi - lo) or 1.0

    def xy(i, v):
        x = PAD + (W - 2 * PAD) * (i / max(K - 1, 1))
        y = H - PAD - (H - 2 * PAD) * ((v - lo) / span)
        return x, y

    pts = " ".join("%.2f,%.2f" % xy(i, v) for i, v in enumerate(curve.values))
    mx, my = xy(curve.argmin_k - 1, curve.values[curve.argmin_k - 1])
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>',
        f'<circle cx="{mx:.2f}" cy="{my:.2f}" r="5" fill="crimson"/>',
        f'<text x="{mx + 8:.2f}" y="{my - 8:.2f}" font-size="14">argmin k = {curve.argmin_k}</text>',
        f'<text x="{PAD}" y="{H - 12}" font-size="12">k = 1 .. {K}</text>',
        "</svg>",
    ]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines), encoding="utf-8")
    tmp.replace(path)
