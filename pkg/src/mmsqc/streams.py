"""Named, counter-based RNG substreams.

All randomness in a run flows from one user seed. Each consumer derives an
independent stream from (seed, purpose, index), so ensemble results do not
depend on worker count or on the order in which stages execute.
"""

import numpy as np

# Fixed purpose codes; changing them changes every derived stream.
_PURPOSES = {
    "sampling": 0,  # initial-condition draws, one stream per trajectory
    "split": 1,     # per-trajectory train/validation assignment
    "init": 2,      # network parameter initialization
    "batch": 3,     # mini-batch order, one stream per epoch
    "shuffle": 4,   # global dataset shuffles
}


def substream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the generator for (seed, purpose, index)."""
    try:
        code = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    return np.random.default_rng(np.random.SeedSequence((seed, code, index)))
