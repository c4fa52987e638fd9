"""Named random substreams derived from a single run seed.

Every stochastic component draws from its own substream so that, for a fixed
seed, changing one component (say the number of CV folds) never perturbs the
draws consumed by another (say knockoff sampling).
"""

from __future__ import annotations

import numpy as np

# Fixed substream indices. Appending new names is fine; reordering is not,
# it would silently change all seeded results.
_SUBSTREAMS = {
    "data": 0,
    "knockoff": 1,
    "cv": 2,
    "split": 3,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the named substream of ``seed``."""
    try:
        key = _SUBSTREAMS[name]
    except KeyError:
        raise ValueError(f"unknown substream {name!r}; known: {sorted(_SUBSTREAMS)}")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
