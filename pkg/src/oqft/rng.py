"""Counter-based random streams keyed by (seed, trajectory index).

Trajectories are grouped in fixed blocks of ``BLOCK`` consecutive indices.
Block ``b`` draws from a Philox generator whose counter starts at
``(0, 0, b, 0)``, so blocks never share counter values and trajectory ``i``
sees the same numbers whatever chunking or thread schedule produced it.
"""

from __future__ import annotations

import numpy as np

BLOCK = 1024
SEED_MASK = (1 << 64) - 1


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & SEED_MASK, counter=[0, 0, int(block), 0]))


def trajectory_normals(seed: int, start: int, stop: int, per_traj: int) -> np.ndarray:
    """Standard normals of shape (stop - start, per_traj) for trajectories [start, stop)."""
    if stop <= start:
        return np.empty((0, per_traj))
    out = np.empty((stop - start, per_traj))
    first, last = start // BLOCK, (stop - 1) // BLOCK
    for b in range(first, last + 1):
        draws = block_generator(seed, b).standard_normal((BLOCK, per_traj))
        lo = max(start, b * BLOCK)
        hi = min(stop, (b + 1) * BLOCK)
        out[lo - start:hi - start] = draws[lo - b * BLOCK:hi - b * BLOCK]
    return out
