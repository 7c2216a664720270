"""Versioned binary checkpoints with a byte-stable round trip.

Layout: magic ``UCAL1``, then for each entry (sorted by name): name length
(uint32 LE), name bytes (ascii), rank (uint32 LE), dims (uint32 LE each),
raw little-endian float32 data. Sorting plus raw float storage makes
save -> load -> save byte-identical.

Integers that must survive exactly (steps, seeds) are stored as two
float32 values holding their low/high 16-bit halves, since float32 is
only exact below 2**24.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"UCAL1"
_U32 = struct.Struct("<I")


def pack_u32(value: int) -> np.ndarray:
    """Lossless uint32 -> two exact float32 halves."""
    if not 0 <= value < 2**32:
        raise ValueError(f"value {value} not a uint32")
    return np.array([value & 0xFFFF, (value >> 16) & 0xFFFF], dtype=np.float32)


def unpack_u32(arr: np.ndarray) -> int:
    lo, hi = (int(v) for v in np.asarray(arr).ravel())
    return lo | (hi << 16)


def write_entries(path: str, entries: Mapping[str, np.ndarray]) -> None:
    """Write entries sorted by name; atomic via temp file + rename."""
    chunks = [MAGIC]
    for name in sorted(entries):
        # asarray, not ascontiguousarray: the latter promotes rank 0 to
        # rank 1, and tobytes() already emits C order for any layout
        arr = np.asarray(entries[name], dtype="<f4")
        raw = name.encode("ascii")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(arr.ndim))
        for d in arr.shape:
            chunks.append(_U32.pack(d))
        chunks.append(arr.tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def read_entries(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = blob[pos : pos + n]
        pos += n
        return out

    entries: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = _U32.unpack(take(4, "name length"))
        name = take(name_len, "name").decode("ascii")
        (rank,) = _U32.unpack(take(4, f"rank of {name}"))
        dims = tuple(_U32.unpack(take(4, f"dims of {name}"))[0] for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = take(4 * count, f"data of {name}")
        entries[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    return entries
