"""Per-trajectory seed derivation.

    seed(master, i) = splitmix64((master + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64)

The affine map is injective in i for i < 2**64 (the multiplier is odd) and the
splitmix64 finalizer is a bijection of 64-bit words, so distinct indices never
collide for a fixed master seed. The derived seed initializes numpy's PCG64.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_derivation(master_seed: int, trajectory_index: int) -> int:
    if trajectory_index < 0:
        raise ValueError(f"trajectory index must be non-negative, got {trajectory_index}")
    return splitmix64((master_seed + (trajectory_index + 1) * GOLDEN_GAMMA) & MASK64)


def trajectory_rng(master_seed: int, trajectory_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_derivation(master_seed, trajectory_index)))
