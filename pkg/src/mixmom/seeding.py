"""Deterministic RNG streams.

Each pipeline stage draws from its own stream derived from (seed, stream id),
so e.g. the perturbation noise of an instance does not change when the sample
count changes.
"""

import numpy as np

PERTURB_STREAM = 1
SAMPLE_STREAM = 2
POWER_STREAM = 3
INSTANCE_STREAM = 4


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence((int(seed), int(stream)) + tuple(int(e) for e in extra))
    return np.random.Generator(np.random.PCG64(ss))
