"""Named, reproducible random streams.

A master seed plus a tuple of names always maps to the same generator, so
independent parts of a computation never share or consume each other's draws.
"""
from __future__ import annotations

import zlib

import numpy as np


def _name_key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for ``seed`` refined by ``names`` (strings or ints)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_name_key(n) for n in names))
    return np.random.default_rng(ss)


def child_seed(seed: int, *names) -> int:
    """A 63-bit integer seed derived the same way as :func:`stream`."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_name_key(n) for n in names))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64)) >> 1
