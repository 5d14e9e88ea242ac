"""FRD raster files and SHA-256 digests.

Layout: ``b"FRD1"``, then four little-endian u32 (width, height, channels,
dtype tag; only tag 0 = float32 exists), then the row-major, channel-interleaved
float32 little-endian payload.
"""
from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

MAGIC = b"FRD1"
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sIIII")


class FrdFormatError(ValueError):
    """A file that is not a well-formed FRD raster."""


def encode(data: np.ndarray) -> bytes:
    """(H, W) or (H, W, C) array to FRD bytes."""
    a = np.asarray(data)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise ValueError(f"FRD rasters are (H, W[, C]) with positive sizes, got {a.shape}")
    h, w, c = a.shape
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, w, h, c, DTYPE_FLOAT32) + payload


def decode(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    """FRD bytes to a float32 array of shape (H, W, C)."""
    if len(buf) < _HEADER.size:
        raise FrdFormatError(f"{name}: truncated header ({len(buf)} bytes)")
    magic, w, h, c, tag = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FrdFormatError(f"{name}: bad magic {magic!r}")
    if tag != DTYPE_FLOAT32:
        raise FrdFormatError(f"{name}: unsupported dtype tag {tag}")
    expect = w * h * c * 4
    got = len(buf) - _HEADER.size
    if got != expect:
        raise FrdFormatError(f"{name}: payload is {got} bytes, header implies {expect}")
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(h, w, c).astype(np.float32)


def write(path, data: np.ndarray) -> str:
    """Write a raster; returns the SHA-256 of the written bytes."""
    buf = encode(data)
    with open(path, "wb") as fh:
        fh.write(buf)
    return hashlib.sha256(buf).hexdigest()


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), os.fspath(path))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
