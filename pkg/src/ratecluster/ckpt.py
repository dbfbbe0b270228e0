"""Versioned tensor-container files for training state.

Layout mirrors the embedding format's spirit::

    bytes 0-3   magic "CKP1"
    byte  4     version 0x01
    bytes 5-12  header length (uint64 LE)
    then        header JSON (UTF-8)
    then        payload: concatenated float64 tensors, little-endian

The header carries {"meta": ..., "tensors": {name: {"offset", "shape"}},
"crc32": ...}; offsets index into the payload in bytes.  The CRC covers the
payload so corruption is detected before any tensor is trusted.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, TruncationError

MAGIC = b"CKP1"
VERSION = 0x01
_PREFIX = struct.Struct("<4sBQ")


def write_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    index = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {"meta": meta, "tensors": index, "crc32": zlib.crc32(payload)},
        sort_keys=True,
    ).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
    tmp.replace(path)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise TruncationError(f"{path}: shorter than the fixed prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            bad = next(i for i in range(4) if prefix[i : i + 1] != MAGIC[i : i + 1])
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}", offset=bad)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
        header_raw = fh.read(header_len)
        if len(header_raw) < header_len:
            raise TruncationError(f"{path}: header truncated")
        try:
            header = json.loads(header_raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
        payload = fh.read()
    if zlib.crc32(payload) != header.get("crc32"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    tensors = {}
    for name, entry in header["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        hi = lo + count * 8
        if hi > len(payload):
            raise TruncationError(f"{path}: tensor {name} extends past payload")
        tensors[name] = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]
