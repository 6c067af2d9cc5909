"""Counter-based random streams keyed off one 64-bit seed.

A stream is identified by the seed plus a tuple of keys (ints or strings),
so the draws a job sees do not depend on scheduling or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode()) | (1 << 32)


def make_rng(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
