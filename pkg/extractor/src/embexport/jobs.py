"""Extraction jobs: run an encoder over images or texts, write EMB1 + manifest.

Images come from a directory (sorted by filename for a stable order) or a
named torchvision dataset; rows are L2-normalized so consumers can assume
unit-norm inputs.  Undecodable images are skipped, not fatal: the manifest
records their ids under "skipped".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emb1 import write_emb1
from .encoders import Encoder, EncoderError, load_encoder, model_width

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")
DATASETS = ("cifar10", "cifar100")


class JobError(Exception):
    pass


@dataclass
class ExtractJob:
    model: str
    source: str  # image directory, dataset name, or candidates JSON file
    out_path: str
    split: str = "train"
    batch_size: int = 64
    device: str = "cpu"
    data_root: str = "datasets"
    _width: int = field(init=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise JobError("batch size must be >= 1")
        self._width = model_width(self.model)


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise JobError("encoder produced a zero embedding")
    return rows / norms


def _check_width(job: ExtractJob, rows: np.ndarray) -> None:
    if rows.shape[1] != job._width:
        raise JobError(
            f"encoder returned width {rows.shape[1]}, expected {job._width} for {job.model}"
        )


def _iter_directory(job: ExtractJob):
    from PIL import Image, UnidentifiedImageError

    root = Path(job.source)
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise JobError(f"no images under {root}")
    for path in files:
        rel = str(path.relative_to(root))
        try:
            with Image.open(path) as im:
                yield rel, None, im.convert("RGB").copy()
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping %s: %s", rel, exc)
            yield rel, None, None


def _iter_dataset(job: ExtractJob):
    import torchvision

    cls = {"cifar10": torchvision.datasets.CIFAR10, "cifar100": torchvision.datasets.CIFAR100}
    ds = cls[job.source](root=job.data_root, train=job.split == "train", download=True)
    for i in range(len(ds)):
        image, label = ds[i]
        yield f"{job.source}/{job.split}/{i}", int(label), image


def extract_images(job: ExtractJob) -> dict:
    """Encode every image from the job source into one EMB1 file.

    Returns the manifest written alongside the embeddings (ids, labels when
    the dataset has them, skipped ids).
    """
    encoder = load_encoder(job.model, job.device)
    source = _iter_dataset(job) if job.source in DATASETS else _iter_directory(job)

    chunks, ids, labels, skipped = [], [], [], []
    batch_imgs, batch_meta = [], []

    def flush():
        if not batch_imgs:
            return
        rows = np.asarray(encoder.encode_images(batch_imgs), dtype=np.float64)
        _check_width(job, rows)
        chunks.append(_normalize_rows(rows))
        for rid, label in batch_meta:
            ids.append(rid)
            if label is not None:
                labels.append(label)
        batch_imgs.clear()
        batch_meta.clear()

    for rid, label, image in source:
        if image is None:
            skipped.append(rid)
            continue
        batch_imgs.append(image)
        batch_meta.append((rid, label))
        if len(batch_imgs) >= job.batch_size:
            flush()
    flush()
    if not chunks:
        raise JobError("no decodable images found")

    data = np.vstack(chunks)
    manifest = {"embedding_path": str(job.out_path), "ids": ids}
    if labels and len(labels) == len(ids):
        manifest["labels"] = labels
    if skipped:
        manifest["skipped"] = skipped
    write_emb1(data, job.out_path, sidecar=manifest)
    log.info("wrote %d x %d embeddings to %s (%d skipped)",
             data.shape[0], data.shape[1], job.out_path, len(skipped))
    return manifest


def extract_texts(job: ExtractJob) -> dict:
    """Encode a JSON list of candidate strings, aligned by index."""
    import json

    with open(job.source, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    candidates = raw["text_candidates"] if isinstance(raw, dict) else list(raw)
    if not candidates:
        raise JobError("candidate list is empty")
    if not all(isinstance(c, str) for c in candidates):
        raise JobError("candidates must all be strings")
    encoder = load_encoder(job.model, job.device)
    if encoder.encode_texts is None:
        raise EncoderError(f"{job.model} has no text tower")
    chunks = []
    for lo in range(0, len(candidates), job.batch_size):
        rows = np.asarray(encoder.encode_texts(candidates[lo : lo + job.batch_size]))
        _check_width(job, rows)
        chunks.append(_normalize_rows(rows.astype(np.float64)))
    data = np.vstack(chunks)
    manifest = {"embedding_path": str(job.out_path), "text_candidates": candidates}
    write_emb1(data, job.out_path, sidecar=manifest)
    return manifest
