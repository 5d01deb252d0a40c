"""Deterministic random-stream derivation.

One integer seed governs a whole run.  Every consumer (layer init, dropout,
drop-word, reparameterization noise, Gumbel noise, shuffling) derives its own
generator from the seed plus a tuple of integer keys, so adding or reordering
consumers never perturbs the draws of the others and runs are bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

# stream tags used by the training loop; keys are (seed, tag, epoch, batch)
SHUFFLE, EPS, DROP_WORD, DROPOUT, GUMBEL = 0, 1, 2, 3, 4


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for stream (seed, *keys); same arguments, same bits."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def name_key(name: str) -> int:
    """Stable integer key for a named stream (used for per-parameter init)."""
    return zlib.crc32(name.encode("utf-8"))
