"""Embedding tensor storage, manifests, and batch/eval sampling.

On-disk layout (``EMB1``)::

    bytes 0-3   magic "EMB1"
    byte  4     format version, 0x01
    byte  5     dtype code, 0x01 = float32
    bytes 6-13  n (uint64, little-endian)
    bytes 14-21 d (uint64, little-endian)
    then        n * d float32 values, little-endian, row-major

Metadata never lives in the binary: an optional sidecar JSON at
``<path>.json`` may carry ``ids`` (written next to the tensor) and, for
dataset manifests, ``labels`` and ``text_candidates``.

Rows are samples.  In memory everything is float64 (log-determinants of
near-singular Grams need the headroom); the disk payload is float32, the
precision encoders export at.  Writing quantizes; a written file parses to
the identical bytes and values everywhere.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, TruncationError, ValidationError
from .rng import Xoshiro256StarStar, derive_key

MAGIC = b"EMB1"
VERSION = 0x01
DTYPE_FLOAT32 = 0x01
_HEADER = struct.Struct("<4sBBQQ")


@dataclass
class EmbeddingMatrix:
    """n x d matrix of row-vector embeddings with optional string ids."""

    data: np.ndarray
    ids: list[str] | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        n, d = self.data.shape
        if n < 1 or d < 1:
            raise ValidationError(f"embedding matrix needs n >= 1 and d >= 1, got {n}x{d}")
        if not np.isfinite(self.data).all():
            bad = int(np.flatnonzero(~np.isfinite(self.data))[0])
            raise ValidationError(f"embedding matrix has a non-finite entry at flat index {bad}")
        if self.ids is not None:
            if len(self.ids) != n:
                raise ValidationError(f"got {len(self.ids)} ids for {n} rows")
            if len(set(self.ids)) != n:
                raise ValidationError("ids must be unique")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        """The float64 data; treat as read-only (shared across threads)."""
        return self.data


@dataclass
class DatasetManifest:
    """Pointers and ground truth surrounding one embedding file.

    ``labels`` exist for evaluation only; training never reads them.
    """

    embedding_path: str
    labels: list[int] | None = None
    text_candidates: list[str] | None = None

    def validate(self, n: int | None = None, text_rows: int | None = None) -> None:
        if self.labels is not None:
            if n is not None and len(self.labels) != n:
                raise ValidationError(f"manifest has {len(self.labels)} labels for {n} samples")
            if any(l < 0 for l in self.labels):
                raise ValidationError("labels must be non-negative class indices")
        if self.text_candidates is not None and text_rows is not None:
            if len(self.text_candidates) != text_rows:
                raise ValidationError(
                    f"{len(self.text_candidates)} text candidates for {text_rows} text embeddings"
                )

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            embedding_path=raw.get("embedding_path", ""),
            labels=raw.get("labels"),
            text_candidates=raw.get("text_candidates"),
        )

    def save(self, path: str | Path) -> None:
        payload = {"embedding_path": self.embedding_path}
        if self.labels is not None:
            payload["labels"] = [int(l) for l in self.labels]
        if self.text_candidates is not None:
            payload["text_candidates"] = list(self.text_candidates)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)


def write_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    """Write ``m`` in the EMB1 layout, quantizing the payload to float32.

    Ids go to a ``<path>.json`` sidecar.  Values beyond float32 range would
    silently become infinite, so that is rejected.
    """
    path = Path(path)
    payload = np.ascontiguousarray(m.data, dtype="<f4")
    if not np.isfinite(payload).all():
        raise ValidationError("refusing to write non-finite embeddings (float32 overflow?)")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, m.n, m.d)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())
    tmp.replace(path)
    if m.ids is not None:
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump({"ids": m.ids}, fh)


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Parse an EMB1 file, validating the header before touching the payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncationError(f"{path}: file shorter than the {_HEADER.size}-byte header")
        magic, version, dtype, n, d = _HEADER.unpack(head)
        if magic != MAGIC:
            bad = next(i for i in range(4) if head[i : i + 1] != MAGIC[i : i + 1])
            raise FormatError(f"{path}: bad magic {magic!r}", offset=bad)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}", offset=4)
        if dtype != DTYPE_FLOAT32:
            raise FormatError(f"{path}: unsupported dtype code {dtype}", offset=5)
        if n < 1 or d < 1:
            raise FormatError(f"{path}: header claims empty matrix {n}x{d}", offset=6)
        expected = n * d * 4
        raw = fh.read(expected)
        if len(raw) < expected:
            raise TruncationError(
                f"{path}: payload has {len(raw)} bytes, header promises {expected}"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload", offset=_HEADER.size + expected)
    data = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    if not np.isfinite(data).all():
        raise ValidationError(f"{path}: payload contains non-finite values")
    ids = None
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as fh:
            ids = json.load(fh).get("ids")
    return EmbeddingMatrix(data=data.copy(), ids=ids)


@dataclass
class BatchSampler:
    """Deterministic epoch-permutation batching.

    The epoch permutation depends only on ``(seed, epoch)``, so any step of
    any epoch can be regenerated in isolation (checkpoint resume relies on
    this).
    """

    batch_size: int
    seed: int
    drop_last: bool = False
    _perm_cache: tuple[int, list[int]] | None = field(default=None, repr=False, compare=False)

    def _permutation(self, epoch: int, n: int) -> list[int]:
        if self._perm_cache is not None and self._perm_cache[0] == (epoch, n):
            return self._perm_cache[1]
        stream = Xoshiro256StarStar(derive_key(self.seed, epoch))
        perm = stream.permutation(n)
        self._perm_cache = ((epoch, n), perm)
        return perm

    def num_batches(self, n: int) -> int:
        if self.batch_size > n:
            raise ConfigError(f"batch size {self.batch_size} exceeds sample count {n}")
        full, rem = divmod(n, self.batch_size)
        return full if (self.drop_last or rem == 0) else full + 1


def sample_batch(sampler: BatchSampler, epoch: int, step: int, n: int) -> list[int]:
    """Indices of batch ``step`` within the epoch permutation."""
    if sampler.batch_size > n:
        raise ConfigError(f"batch size {sampler.batch_size} exceeds sample count {n}")
    if step < 0 or step >= sampler.num_batches(n):
        raise ConfigError(f"step {step} out of range for n={n}")
    perm = sampler._permutation(epoch, n)
    lo = step * sampler.batch_size
    return perm[lo : lo + sampler.batch_size]


def subsample_eval(m: EmbeddingMatrix, cap: int, seed: int) -> tuple[EmbeddingMatrix, list[int]]:
    """Cap an evaluation set at ``cap`` rows, uniformly without replacement.

    Returns the (possibly reduced) matrix and the source-row index map, in
    ascending source order so sidecar labels stay aligned by simple gather.
    """
    if cap < 1:
        raise ConfigError("evaluation cap must be >= 1")
    if m.n <= cap:
        return m, list(range(m.n))
    stream = Xoshiro256StarStar(derive_key(seed, m.n, cap))
    chosen = sorted(stream.sample_indices(m.n, cap))
    ids = [m.ids[i] for i in chosen] if m.ids is not None else None
    return EmbeddingMatrix(data=m.data[chosen], ids=ids), chosen
