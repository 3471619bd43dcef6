"""Seed expansion.

Every random draw in the package comes from ``stream(seed, *keys)``: the
integer keys are appended to the seed's spawn key, so each named consumer gets
an independent generator that depends only on (seed, keys), never on the
order in which other streams were used.
"""

from __future__ import annotations

import numpy as np

# stream keys, kept in one place so they never collide
TARGETS = 1
TRAJECTORIES = 2
RENDER = 3
INIT = 4
COND_INIT = 5
SHUFFLE = 6
JITTER = 7
SPLIT = 8


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
