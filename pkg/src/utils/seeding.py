"""
Counter-based seed expansion

A master seed and a key path (replicate index, step number, cluster count...)
map to one 32-bit seed through numpy's SeedSequence, so any component can be
re-run in isolation.
"""

from typing import Optional

import numpy as np


def derive_seed(master: Optional[int], *keys: int) -> int:
    """Deterministic child seed for the key path under ``master``"""
    master = 0 if master is None else int(master)
    sequence = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(master: Optional[int], *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
