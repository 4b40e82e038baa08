"""Derivation of per-component generators from one root seed."""

import numpy as np

# component tags; stable integers so derived streams never depend on hash()
SPLIT = 1
INIT = 2
SAMPLER = 3
SYNTHETIC = 4
GRADCHECK = 5


def rng_for(seed, component, *keys):
    """Generator for ``component`` (and e.g. an epoch number) under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), component, *map(int, keys)]))
