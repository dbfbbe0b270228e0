"""Writer/reader for the EMB1 embedding file format.

This mirrors the consumer's on-disk contract exactly (magic "EMB1", version
0x01, float32 dtype 0x01, uint64 LE dims, row-major little-endian float32
payload, optional JSON sidecar at ``<path>.json``), so exported files are
readable by the clustering toolkit without a code dependency.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sBBQQ")


class Emb1Error(Exception):
    pass


def write_emb1(data: np.ndarray, path: str | Path, sidecar: dict | None = None) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or min(data.shape) < 1:
        raise Emb1Error(f"need a non-empty 2-D matrix, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise Emb1Error("refusing to write non-finite embeddings")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 0x01, 0x01, data.shape[0], data.shape[1]))
        fh.write(data.tobytes())
    tmp.replace(path)
    if sidecar:
        side_tmp = Path(str(path) + ".json.tmp")
        with open(side_tmp, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=1)
        side_tmp.replace(Path(str(path) + ".json"))


def read_emb1(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise Emb1Error(f"{path}: truncated header")
        magic, version, dtype, n, d = _HEADER.unpack(head)
        if magic != MAGIC or version != 0x01 or dtype != 0x01:
            raise Emb1Error(f"{path}: not an EMB1 v1 float32 file")
        raw = fh.read(n * d * 4)
        if len(raw) < n * d * 4:
            raise Emb1Error(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float64)
