"""VTEN video tensor files.

Layout: magic ``b"VTEN"``, version (u32), then T, H, W (u32), then
``T * H * W`` little-endian float32 values, row-major within each frame and
frames in sequence.  All integers are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import InvalidInputError

MAGIC = b"VTEN"
VERSION = 1
_HEADER = struct.Struct("<4s4I")


def as_video(array) -> np.ndarray:
    """Validate a (T, H, W) array of finite values and return it as float32."""
    v = np.asarray(array, dtype=np.float32)
    if v.ndim == 2:
        v = v[None]
    if v.ndim != 3 or min(v.shape) < 1:
        raise InvalidInputError(f"video must have shape (T, H, W) with positive dims, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("video contains non-finite values")
    return v


def write_vten(path, video) -> None:
    v = as_video(video)
    t, h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, t, h, w))
        fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_vten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise InvalidInputError(f"{path}: truncated VTEN header")
        magic, version, t, h, w = _HEADER.unpack(head)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise InvalidInputError(f"{path}: unsupported VTEN version {version}")
        count = t * h * w
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count:
        raise InvalidInputError(f"{path}: expected {count} values, found {data.size}")
    return as_video(data.reshape(t, h, w).astype(np.float32))
