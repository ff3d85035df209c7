"""Deterministic random-stream bookkeeping.

A single root seed is expanded into independent generator streams, one per
source of randomness, so that toggling one feature (e.g. shuffling) never
perturbs the random numbers consumed by another (e.g. the per-step masks).

Stream layout: ``SeedSequence(root_seed, spawn_key=(stream_id, *context))``
where ``stream_id`` is one of the ``STREAM_*`` constants below and
``context`` identifies the consumer (run phase, sweep-cell coordinates, ...).
Run phases use ``PHASE_WARMUP_LOW = 0``, ``PHASE_WARMUP_HIGH = 1`` and
``PHASE_FINAL = 2``.
"""

import numpy as np

STREAM_NOISE = 0
STREAM_INIT = 1
STREAM_TRAIN_MASKS = 2
STREAM_SIGMA_MASKS = 3
STREAM_SHUFFLE = 4
STREAM_ENSEMBLE = 5

PHASE_WARMUP_LOW = 0
PHASE_WARMUP_HIGH = 1
PHASE_FINAL = 2


def stream_rng(root_seed: int, stream_id: int, *context: int) -> np.random.Generator:
    """Return the generator for one (seed, stream, context) triple."""
    key = (int(stream_id),) + tuple(int(c) for c in context)
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=key))
