"""Seeded random streams.

All randomness in the package flows through counter-based Philox generators
so results depend only on the integer seed and the stream key.
"""
import zlib

import numpy as np


def make_rng(seed, stream=None):
    """Return an independent generator for ``(seed, stream)``.

    ``stream`` may be a string label; distinct labels give statistically
    independent sequences for the same seed.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    key = [seed]
    if stream is not None:
        key.append(zlib.crc32(str(stream).encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
