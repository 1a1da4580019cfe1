"""Named random sub-streams derived from a single integer seed."""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the sub-stream `name` ("init", "batch", ...).

    Any Python int is accepted; negative seeds wrap modulo 2**64.
    """
    return np.random.default_rng([int(seed) & _MASK64, zlib.crc32(name.encode())])


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(None if rng is None else int(rng) & _MASK64)
