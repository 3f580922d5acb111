"""Named deterministic RNG streams.

Every random draw in the package flows from one user-facing seed through
spawn(seed, *path): the path names the consumer (a class index, a grid cell,
a trial number) so results never depend on scheduling or call order.
"""

from __future__ import annotations

import numpy as np

_MASK = 2 ** 64 - 1

# stream tags, kept distinct so unrelated consumers never share a stream
STREAM_CLASS = 1      # per-class concept generation
STREAM_COMPOSE = 2    # per-class composition draws
STREAM_SYNTH = 3      # synthetic dataset construction
STREAM_TRIAL = 4      # simulation trials


def spawn(seed: int, *path: int) -> np.random.Generator:
    """Generator for one named stream; identical (seed, path) means identical draws."""
    return np.random.default_rng([int(seed) & _MASK, *[int(p) & _MASK for p in path]])
