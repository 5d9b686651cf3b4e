"""Seeded random streams.

All randomness in the package comes from numpy's PCG64 bit generator
(a 64-bit permuted congruential generator) keyed by a ``SeedSequence`` built
from the user seed plus fixed stream identifiers, so every stream is
reproducible and independent of call order elsewhere.
"""
from __future__ import annotations

import numpy as np


def make_generator(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional stream key."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))
