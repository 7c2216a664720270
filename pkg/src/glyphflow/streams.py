"""Deterministic RNG stream derivation.

Every random draw in the package comes from a generator derived from
``(root seed, ...context keys, purpose tag)``. Streams are therefore pure
functions of their keys: workers, resumed runs, and re-runs all see the
same numbers regardless of execution order.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Tag(IntEnum):
    """Purpose tags separating the per-step RNG streams."""

    INIT = 1       # model parameter initialisation
    DATA = 2       # per-step batch draws (pool/synth mixing)
    MODE = 3       # per-step generation/recognition choice
    TIMESTEP = 4   # per-sample timestep + dropout draws
    NOISE = 5      # per-sample noise latents
    SYNTH = 6      # corpus synthesis
    SAMPLE = 7     # inference-time noise (generate/recognize)
    EVAL = 8       # evaluation harness draws


def derive_rng(*keys: int) -> np.random.Generator:
    """Return a fresh Generator keyed by the given integer tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))
