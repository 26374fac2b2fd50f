"""
Per-purpose seed derivation.

Every random choice made during a run is keyed by the run seed, a stream
tag and the (client, round) it belongs to, so outcomes do not depend on
worker scheduling.
"""

import numpy as np

ANCHOR_STREAM = 0xA1
CORRECTION_STREAM = 0xC0
GRADIENT_STREAM = 0x96
WEIGHTS_STREAM = 0x3E
AGE_STREAM = 0xA6


def derive_seed(*keys) -> int:
    """Non-negative 32-bit codec seed from a tuple of non-negative keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def stream_rng(*keys) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in keys])
