"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"EMSNET01"
    repeated until EOF:
        uint32 name length, name bytes (UTF-8)
        uint32 rank, rank x uint64 extents
        prod(extents) x float64 values, row-major
"""

from __future__ import annotations

import os
import struct
from collections.abc import Mapping

import numpy as np

from .errors import IntegrityError, ParseError

MAGIC = b"EMSNET01"


def _as_array(value) -> np.ndarray:
    data = getattr(value, "data", value)
    return np.asarray(data, dtype=np.float64)


def dumps_checkpoint(params: Mapping) -> bytes:
    chunks = [MAGIC]
    for name, value in params.items():
        arr = _as_array(value)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def loads_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:len(MAGIC)] != MAGIC:
        raise ParseError("not an EMSNET01 checkpoint (bad magic)")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise IntegrityError("checkpoint truncated")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    while pos < len(blob):
        (name_len,) = read("<I")
        if pos + name_len > len(blob):
            raise IntegrityError("checkpoint truncated in parameter name")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = read("<I")
        shape = read(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        nbytes = 8 * count
        if pos + nbytes > len(blob):
            raise IntegrityError(f"checkpoint truncated in values of {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    return out


def save_checkpoint(path: str | os.PathLike, params: Mapping) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(params))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
