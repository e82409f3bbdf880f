"""Deterministic random-stream derivation.

Every stochastic stage draws from its own substream keyed by (seed, stage
tag, indices), so results do not depend on evaluation order across base
stations, scans, or targets.
"""

import numpy as np

# Stage tags. Keep values stable: they are part of the reproducibility contract.
STREAM_RCS = 1
STREAM_NOISE = 2
STREAM_TX = 3
STREAM_TRAIN = 4
STREAM_FAST_NOISE = 5


def substream(seed, *key):
    """Independent generator for (seed, *key); all parts must be ints >= 0."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in key]]))
