"""Versioned binary checkpoints: named float64 arrays behind a magic header.

Layout: magic ``TRFP``, format version (u32 LE), then one entry per array:
name length (u32), UTF-8 name, rank (u32), dims (u64 each), row-major
little-endian float64 payload. Entries are written in sorted name order so
identical states serialize to identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TRFP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted, or version-incompatible checkpoint."""


def save_arrays(path, arrays: dict):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_arrays(path) -> dict:
    arrays = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"not a TRFP checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format version {version}, "
                f"this build reads version {FORMAT_VERSION}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint file")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank))
            count = 1
            for dim in dims:
                count *= dim
            payload = _read_exact(fh, count * 8)
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return arrays
