"""Multiplicative-XOR hashing of token n-grams onto memory-table rows.

Each token id is offset by one (so id 0 still contributes), multiplied by a
fixed odd 64-bit constant, and the per-token products are XOR-combined before
reduction modulo the table size. All arithmetic wraps at 64 bits, so indices
are identical across platforms and need no seed.
"""

from __future__ import annotations

import numpy as np

C1 = np.uint64(0x9E3779B97F4A7C15)
C2 = np.uint64(0xC2B2AE3D27D4EB4F)
C3 = np.uint64(0x165667B19E3779F9)

_ONE = np.uint64(1)


def hash_bigram(a, b, table_size: int):
    """Row index in [0, table_size) for the ordered pair (a, b).

    Accepts scalars or equally-shaped integer arrays; returns the same shape.
    """
    if table_size < 1:
        raise ValueError(f"table_size must be >= 1, got {table_size}")
    a64 = np.asarray(a, dtype=np.uint64)
    b64 = np.asarray(b, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = ((a64 + _ONE) * C1) ^ ((b64 + _ONE) * C2)
    idx = h % np.uint64(table_size)
    if idx.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)


def hash_trigram(a, b, c, table_size: int):
    """Row index in [0, table_size) for the ordered triple (a, b, c)."""
    if table_size < 1:
        raise ValueError(f"table_size must be >= 1, got {table_size}")
    a64 = np.asarray(a, dtype=np.uint64)
    b64 = np.asarray(b, dtype=np.uint64)
    c64 = np.asarray(c, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = ((a64 + _ONE) * C1) ^ ((b64 + _ONE) * C2) ^ ((c64 + _ONE) * C3)
    idx = h % np.uint64(table_size)
    if idx.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)
