"""Deterministic RNG fan-out: every stream is derived from (seed, *labels)."""
from __future__ import annotations

import numpy as np

# stable numeric labels for derived streams, so reordering code cannot
# silently reassign entropy
STREAMS = {
    "env_reset": 1,
    "dataset": 2,
    "policy_init": 3,
    "wm_init": 4,
    "train": 5,
    "eval": 6,
    "head_reinit": 7,
    "analysis": 8,
}


def rng_from(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def stream(seed: int, name: str, *key: int) -> np.random.Generator:
    return rng_from(seed, STREAMS[name], *key)
