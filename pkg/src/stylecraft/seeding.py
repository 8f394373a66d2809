"""Deterministic RNG streams derived from a run seed plus string keys."""

import zlib

import numpy as np


def rng_for(seed, *keys):
    """Independent Generator for (seed, keys); stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            entropy.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
