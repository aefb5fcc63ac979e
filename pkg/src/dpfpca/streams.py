"""Deterministic RNG stream derivation.

Every independent unit of work (a chain, a replicate, a grid cell) gets its
own ``numpy.random.Generator`` built from the master seed plus integer keys,
so results never depend on execution order or worker count.
"""
import numpy as np


def stream(seed, *keys):
    """Return a Generator keyed by ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(rng):
    """Accept a seed, ``None`` or an existing Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
