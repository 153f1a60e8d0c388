"""Deterministic seed derivation.

Every stochastic routine in the package takes an integer seed and derives
independent child streams through ``numpy.random.SeedSequence`` spawn keys.
Two runs with the same seed produce identical results regardless of
chunking or evaluation order; distinct spawn paths give statistically
independent streams.
"""

from __future__ import annotations

import numpy as np


def child_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    """Return the SeedSequence for a child stream at ``path`` under ``seed``."""
    return np.random.SeedSequence(seed, spawn_key=tuple(path))


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator seeded from the child stream at ``path``."""
    return np.random.default_rng(child_sequence(seed, *path))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse a child stream to a single integer seed.

    Useful when a sub-component wants a plain ``seed`` argument of its own
    rather than a Generator.
    """
    return int(child_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0])
