"""Seed-addressable random number generation.

Every stochastic operation in the package draws from a counter-based Philox
stream keyed by an explicit integer seed (optionally combined with integer
tags, e.g. a step index or tile origin). Streams for distinct keys are
independent, and a given key always reproduces the same draws, so any part
of a pipeline can be recomputed in isolation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["generator", "derive_seed", "derive_seeds"]


def generator(seed: int, *tags: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``seed`` and optional integer tags."""
    ss = np.random.SeedSequence(entropy=(int(seed),) + tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *tags: int) -> int:
    """Derive a single uint64 sub-seed from ``seed`` and tags."""
    ss = np.random.SeedSequence(entropy=(int(seed),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent uint64 sub-seeds from ``seed``."""
    state = np.random.SeedSequence(entropy=int(seed)).generate_state(n, np.uint64)
    return [int(s) for s in state]
