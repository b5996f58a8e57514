"""Binary array files with a small self-describing header.

Layout: magic ``HMA1``, dtype tag (u16 length + ascii), ndim (u16),
shape (u64 each), then the raw C-order little-endian payload.  Kept
deliberately dumb so configs stay diffable and runs reproducible.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HMA1"


def write_array(path, arr) -> None:
    arr = np.asarray(arr, order="C")   # keeps 0-d arrays 0-d
    dt = arr.dtype.newbyteorder("<")
    tag = dt.str.encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", len(tag)))
        f.write(tag)
        f.write(struct.pack("<H", arr.ndim))
        for s in arr.shape:
            f.write(struct.pack("<Q", s))
        f.write(arr.astype(dt, copy=False).tobytes(order="C"))


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an array file (bad magic)")
    off = 4
    (tlen,) = struct.unpack_from("<H", raw, off)
    off += 2
    tag = raw[off:off + tlen].decode("ascii")
    off += tlen
    (ndim,) = struct.unpack_from("<H", raw, off)
    off += 2
    shape = []
    for _ in range(ndim):
        (s,) = struct.unpack_from("<Q", raw, off)
        off += 8
        shape.append(s)
    dt = np.dtype(tag)
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=off)
    return arr.reshape(tuple(shape)).copy()
