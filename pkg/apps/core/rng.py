# apps/core/rng.py
"""
Seeded randomness for every midt component.

All generators are numpy ``Generator`` objects over the PCG64 bit generator.
PCG64 produces the same 64-bit stream on every platform, and child streams
are derived with ``SeedSequence.spawn`` so that independent consumers (data
generation, batch sampling, noise draws, parameter init) never share state.
"""

import numpy as np


def make_rng(seed, *path):
    """
    Return a Generator for ``seed`` and an optional derivation path.

    The path is a tuple of non-negative integers that names a child stream,
    e.g. ``make_rng(seed, 3)`` is the stream for repetition 3.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed, *path):
    """Derive a fresh 63-bit integer seed from a parent seed and a path"""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
