"""Deterministic, counter-derived random streams.

Every stochastic component draws from its own Philox generator keyed by
``(master seed, purpose tag, *indices)``. Streams with distinct keys are
statistically independent and never share state, so adding or removing
draws in one component cannot shift the values any other component sees.

This is what makes steering corrections pay-as-you-go in randomness:
trajectory initialisation and per-step transition noise live in the
INIT_NOISE / STEP_NOISE families, lookahead draws live in LOOKAHEAD, and
therefore a corrected run with gamma = 0 replays the vanilla run
byte-for-byte under the same master seed.
"""

from __future__ import annotations

import numpy as np

INIT_NOISE = 1  # trajectory initialisation at time T
STEP_NOISE = 2  # transition noise for backward step l
LOOKAHEAD = 3  # lookahead and rollout draws inside the h estimator
BEST_OF_K = 4  # child-seed derivation for best-of-K draws
REJECTION = 5  # rejection-sampler proposals and acceptance uniforms
SWEEP_CELL = 6  # per-cell seed derivation in parameter sweeps
TARGET = 7  # direct draws from closed-form target laws


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the stream identified by ``(seed, *key)``."""
    entropy = (int(seed),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *key: int) -> int:
    """Return a u64 child seed for components that take a seed of their own.

    Child seeds for distinct keys are independent, and re-deriving with the
    same key always returns the same value.
    """
    entropy = (int(seed),) + tuple(int(k) for k in key)
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
