"""Deterministic random-stream derivation.

Every stochastic component draws from its own generator derived from a
master seed plus an integer key path, so results never depend on the
order in which patients or episodes are processed.
"""

import numpy as np

# namespace keys for stream derivation
NS_PATIENT = 0
NS_EPISODE = 1
NS_TRAIN_COHORT = 2
NS_EXPLORE = 3
NS_SGD = 4
NS_INIT = 5


def substream(entropy: int, *key: int) -> np.random.Generator:
    """Generator derived from (entropy, key...); stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(key)))


def draw_seed(rng: np.random.Generator) -> int:
    """One 63-bit seed from an existing stream."""
    return int(rng.integers(0, 2**63 - 1))
