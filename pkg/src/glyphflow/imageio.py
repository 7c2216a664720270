"""Grayscale image conventions and bit-exact raster file I/O.

In memory an image is a 2-D float32 array with values in [-1, 1]
(foreground ink is +1 under the canonical light-on-dark polarity).
On disk it is a binary 8-bit single-channel raster with a three-token
text header -- magic ``P5``, ``<width> <height>``, ``255`` -- followed
by row-major payload bytes. The storage mapping is the affine map
``p / 127.5 - 1`` and its rounding inverse, so u8 -> float -> u8 is the
identity and files round-trip byte-exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import GlyphflowError

MAGIC = b"P5"
MAXVAL = 255


def blank(h: int, w: int, value: float = -1.0) -> np.ndarray:
    """All-background image of the given size."""
    return np.full((h, w), value, dtype=np.float32)


def validate_image(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.ndim != 2:
        raise ValueError(f"image must be a 2-D array, got {getattr(img, 'shape', None)}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")


def to_u8(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to storage bytes (round-half-even, clipped)."""
    validate_image(img)
    return np.clip(np.rint((img.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_u8(raw: np.ndarray) -> np.ndarray:
    """Map storage bytes back to [-1, 1] float32."""
    return (raw.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def write_raster(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an image to disk; deterministic bytes for identical pixels."""
    data = to_u8(img)
    h, w = data.shape
    header = b"%s\n%d %d\n%d\n" % (MAGIC, w, h, MAXVAL)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(data.tobytes(order="C"))
    os.replace(tmp, path)


def read_raster(path: str | os.PathLike) -> np.ndarray:
    """Read a raster file written by :func:`write_raster`."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        # header tokens are whitespace-separated; payload starts after the
        # single whitespace byte that terminates the maxval token
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if len(tokens) < 4 or tokens[0] != MAGIC:
        raise GlyphflowError(f"{path}: not a {MAGIC.decode()} raster file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise GlyphflowError(f"{path}: malformed raster header") from e
    if maxval != MAXVAL:
        raise GlyphflowError(f"{path}: unsupported maxval {maxval}")
    payload = blob[pos + 1 :]
    if len(payload) != w * h:
        raise GlyphflowError(f"{path}: truncated payload ({len(payload)} of {w * h} bytes)")
    return from_u8(np.frombuffer(payload, dtype=np.uint8).reshape(h, w))


def resize_nearest(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize (deterministic, used by page ingestion)."""
    validate_image(img)
    sh, sw = img.shape
    rows = np.minimum((np.arange(h) + 0.5) * sh / h, sh - 1).astype(np.int64)
    cols = np.minimum((np.arange(w) + 0.5) * sw / w, sw - 1).astype(np.int64)
    return img[np.ix_(rows, cols)].astype(np.float32)
