"""Cluster captions by text voting, image search, and feature diagnostics.

Captioning works in the original encoder's joint image/text space: every
image in a cluster scores all text candidates by cosine similarity, its five
best scores are added into a running vote vector, and the candidate with the
most vote mass names the cluster.  Ties resolve to the lowest candidate
index.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


def _unit_rows(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise ValidationError("cannot normalize a zero embedding row")
    return M / norms


def accumulate_votes(similarities: np.ndarray, top_m: int = 5) -> np.ndarray:
    """Sum each row's ``top_m`` largest similarity values into a vote vector.

    Ties at the selection boundary keep the lower candidate index.  Each
    candidate's total uses exact summation, so the result is independent of
    row order, not just close to it.
    """
    sims = np.asarray(similarities, dtype=np.float64)
    if sims.ndim != 2:
        raise ValidationError(f"similarities must be N x M, got {sims.shape}")
    n, m = sims.shape
    if m < top_m:
        raise ValidationError(f"need at least top_m={top_m} candidates, got {m}")
    buckets: list[list[float]] = [[] for _ in range(m)]
    idx = np.arange(m)
    for i in range(n):
        order = np.lexsort((idx, -sims[i]))[:top_m]
        for j in order:
            buckets[j].append(sims[i, j])
    votes = np.zeros(m)
    for j, vals in enumerate(buckets):
        if vals:
            votes[j] = math.fsum(vals)
    return votes


def vote_caption(
    cluster_img: np.ndarray,
    text_emb: np.ndarray,
    candidates: list[str],
    top_m: int = 5,
) -> tuple[str, np.ndarray]:
    """Caption one cluster of image embeddings by top-``top_m`` text voting.

    Rows are embeddings in the shared image/text space; they are re-normalized
    here so the scores are true cosines.
    """
    img = np.atleast_2d(np.asarray(cluster_img, dtype=np.float64))
    txt = np.atleast_2d(np.asarray(text_emb, dtype=np.float64))
    if img.shape[0] < 1:
        raise ValidationError("cluster has no images")
    if len(candidates) != txt.shape[0]:
        raise ValidationError(f"{len(candidates)} candidate strings for {txt.shape[0]} embeddings")
    if img.shape[1] != txt.shape[1]:
        raise ValidationError(
            f"image dim {img.shape[1]} does not match text dim {txt.shape[1]}"
        )
    sims = _unit_rows(img) @ _unit_rows(txt).T
    votes = accumulate_votes(sims, top_m=top_m)
    winner = int(votes.argmax())  # argmax takes the lowest index on ties
    return candidates[winner], votes


def caption_report(
    labels: np.ndarray,
    img_emb: np.ndarray,
    text_emb: np.ndarray,
    candidates: list[str],
    top_m: int = 5,
) -> list[dict]:
    """Per-cluster caption records: winner, five most-voted candidates, votes."""
    labels = np.asarray(labels)
    report = []
    for cluster in sorted(set(int(l) for l in labels)):
        rows = img_emb[labels == cluster]
        caption, votes = vote_caption(rows, text_emb, candidates, top_m=top_m)
        order = np.argsort(-votes, kind="stable")[:5]
        report.append(
            {
                "cluster": cluster,
                "caption": caption,
                "top5_candidates": [candidates[i] for i in order],
                "votes": [float(votes[i]) for i in order],
            }
        )
    return report


def image_search(
    query: np.ndarray,
    repo: np.ndarray,
    top: int = 64,
    metric: str = "euclidean",
) -> list[tuple[int, float]]:
    """Exact top-k rows of ``repo`` nearest to ``query``; ties break by index."""
    repo = np.asarray(repo, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64).ravel()
    if repo.ndim != 2 or repo.shape[0] < 1:
        raise ValidationError("repository must be a non-empty n x d matrix")
    if query.shape[0] != repo.shape[1]:
        raise ValidationError(f"query dim {query.shape[0]} vs repository dim {repo.shape[1]}")
    n = repo.shape[0]
    if top > n:
        import warnings

        warnings.warn(f"top={top} exceeds repository size {n}; clamping", stacklevel=2)
        top = n
    if metric == "euclidean":
        dist = np.sqrt(np.clip(((repo - query[None, :]) ** 2).sum(axis=1), 0.0, None))
    elif metric == "cosine":
        qn = np.linalg.norm(query)
        rn = np.linalg.norm(repo, axis=1)
        if qn < 1e-12 or (rn < 1e-12).any():
            raise ValidationError("cosine distance undefined for zero vectors")
        dist = 1.0 - (repo @ query) / (rn * qn)
    else:
        raise ValidationError(f"unknown metric {metric!r}")
    order = np.lexsort((np.arange(n), dist))[:top]
    return [(int(i), float(dist[i])) for i in order]


def spectrum_by_cluster(Z: np.ndarray, labels) -> dict[int, np.ndarray]:
    """Per-cluster singular values of the feature block, scaled to max 1."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != Z.shape[1]:
        raise ValidationError(f"{labels.shape[0]} labels for {Z.shape[1]} feature columns")
    spectra = {}
    for cluster in sorted(set(int(l) for l in labels)):
        block = Z[:, labels == cluster]
        s = np.linalg.svd(block, compute_uv=False)
        top = s[0] if s[0] > 0 else 1.0
        spectra[cluster] = s / top
    return spectra


def similarity_heatmap(Z: np.ndarray, labels, cap: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """|Z^T Z| with rows/columns grouped by cluster label.

    Returns the float matrix and its 8-bit rendering (round(255 * |cos|)).
    Inputs above ``cap`` columns are rejected; subsample first.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    n = Z.shape[1]
    if labels.shape[0] != n:
        raise ValidationError(f"{labels.shape[0]} labels for {n} feature columns")
    if n > cap:
        raise ValidationError(f"{n} samples exceed the heatmap cap {cap}; subsample first")
    order = np.argsort(labels, kind="stable")
    Zo = Z[:, order]
    norms = np.linalg.norm(Zo, axis=0)
    Zo = Zo / np.clip(norms, 1e-12, None)[None, :]
    M = np.abs(Zo.T @ Zo)
    return M, np.round(255.0 * np.clip(M, 0.0, 1.0)).astype(np.uint8)


def write_pgm(gray: np.ndarray, path) -> None:
    """8-bit binary PGM ("P5") image."""
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
