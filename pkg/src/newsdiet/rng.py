"""Seed derivation.

Every random stream is keyed by ``(master_seed, *keys)``: the keys are
hashed with BLAKE2b to 64-bit words and fed, together with the master seed,
to ``numpy.random.SeedSequence``. Streams are therefore independent of the
order in which they are requested, which keeps per-month and per-replicate
work reproducible under any scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _word(key) -> int:
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [_word(k) for k in keys])


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))
