"""Flat little-endian tensor files for test fixtures.

Layout: magic ``TTX1`` (4 bytes), dtype tag (u8: 0 = float32, 1 = float64),
ndim (u8), then ndim little-endian u32 dims, then the raw element data in
C order, little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TTX1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype not in _TAGS:
        raise ValueError(f"unsupported dtype {array.dtype}")
    tag = _TAGS[array.dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", tag, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype(_DTYPES[tag]).tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a tensor file (bad magic)")
        tag, ndim = struct.unpack("<BB", fh.read(2))
        if tag not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype tag {tag}")
        dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=_DTYPES[tag])
    expected = int(np.prod(dims)) if dims else 1
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} elements, header says {expected}")
    return data.reshape(dims).copy()
