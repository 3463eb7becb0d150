"""Binary parameter checkpoints.

Layout (little-endian): ``b"MPNN"``, u32 version, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 rank, u32 dims, float32 values (row-major).
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MPNN"
VERSION = 1


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        key = name.encode("utf-8")
        a = np.asarray(arr)
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> dict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise ValueError("not an MPNN checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", raw, pos)
        name = raw[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", raw, pos)
        dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
        pos += 4 + 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    return out


def save(path: str | Path, tensors: dict[str, np.ndarray]) -> str:
    raw = dumps(tensors)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def digest(tensors: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(tensors)).hexdigest()
