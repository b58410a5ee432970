"""Versioned binary array files and a small keyed cache.

File layout (all integers little-endian):

    8 bytes   magic  b"VOLTARR\\0"
    uint32    format version (currently 1)
    uint32    ndim
    uint64    shape[0] ... shape[ndim-1]
    float64   data, row-major, little-endian
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "VERSION", "write_array", "read_array", "cache_key", "ArrayCache"]

MAGIC = b"VOLTARR\0"
VERSION = 1


def write_array(path, array) -> None:
    arr = np.asarray(array, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a volterra array file")
        version, ndim = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    n = int(np.prod(shape)) if ndim else 1
    if data.size != n:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(shape).astype(float)


def cache_key(kind: str, rho: float, lambdas, T: float, M: int, *extra) -> str:
    """Hex key for (kind, rho, hash of the lambda list, T, M, extra...)."""
    lam = np.ascontiguousarray(np.atleast_1d(lambdas), dtype="<f8").tobytes()
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(struct.pack("<dd", float(rho), float(T)))
    h.update(struct.pack("<Q", int(M)))
    h.update(hashlib.sha256(lam).digest())
    for e in extra:
        h.update(repr(e).encode())
    return h.hexdigest()[:32]


class ArrayCache:
    """Directory of named binary arrays; ``None`` directory disables it."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str, name: str) -> Path:
        return self.directory / f"{key}.{name}.bin"

    def get(self, key: str, name: str):
        if self.directory is None:
            return None
        p = self._path(key, name)
        if not p.exists():
            return None
        return read_array(p)

    def put(self, key: str, name: str, array) -> None:
        if self.directory is not None:
            write_array(self._path(key, name), array)
