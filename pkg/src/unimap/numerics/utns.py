"""UTNS binary tensor files.

Layout: the 4 magic bytes ``UTNS``, a little-endian uint32 rank, ``rank``
uint32 extents, then the row-major float32 payload (little-endian).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"UTNS"


def encode(x: np.ndarray) -> bytes:
    x = np.asarray(x, dtype="<f4")
    header = MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("not a UTNS tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    offset = 8 + 4 * rank
    if len(buf) < offset:
        raise FormatError("truncated UTNS header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != offset + 4 * count:
        raise FormatError(f"UTNS payload has {len(buf) - offset} bytes, expected {4 * count}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return data.reshape(shape).astype(np.float32)


def save(path, x: np.ndarray) -> None:
    Path(path).write_bytes(encode(x))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
