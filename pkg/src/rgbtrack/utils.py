"""Small shared helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def params_checksum(named_arrays) -> str:
    """SHA-256 over (name, shape, bytes) of every array, order-independent
    in effect because names are sorted first. Bit-identical parameters give
    identical digests."""
    items = sorted((name, arr) for name, arr in named_arrays)
    h = hashlib.sha256()
    for name, arr in items:
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def write_csv(path, header, rows) -> None:
    """Plain CSV with LF line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
