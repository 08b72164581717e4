"""Counter-based random streams.

Every stochastic quantity is drawn from a generator keyed by
``(seed, *counters)`` so that the result of shot ``i`` never depends on
how many other shots ran before it or on which worker ran it.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *counters: int) -> np.random.Generator:
    """Independent generator for the given seed and counter path."""
    if seed is None:
        seed = 0
    key = [int(seed)] + [int(c) for c in counters]
    if any(k < 0 for k in key):
        raise ValueError("seeds and counters must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(key))
