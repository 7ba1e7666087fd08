"""Binary checkpoint container for named float arrays.

Layout, all little-endian:

* magic bytes ``FGCNCKPT``
* u32 format version (currently 1)
* u32 record count
* per record: u32 name length, UTF-8 name, u32 rank, one u64 per dimension,
  then the array data as float64 in C order.

Insertion order of the mapping is preserved, so a round trip through
``save`` and ``load`` is bit-exact and reproduces the file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"FGCNCKPT"
VERSION = 1


def save(path, arrays):
    """Write an ordered mapping of name -> numpy array to ``path``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load(path):
    """Read a checkpoint file back into an ordered dict of float64 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(MAGIC)

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    version, count = take("<II")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    arrays = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        size = n * 8
        if offset + size > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += size
        if name in arrays:
            raise DataError(f"{path}: duplicate record {name!r}")
        arrays[name] = arr.copy()
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after last record")
    return arrays
