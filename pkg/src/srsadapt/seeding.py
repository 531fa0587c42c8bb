"""Deterministic derivation of named random substreams from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def seed_key(*parts) -> tuple[int, ...]:
    """Map a mixed (int, str) key to a SeedSequence entropy tuple."""
    out = []
    for part in parts:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        else:
            out.append(int(part) & 0xFFFFFFFF)
    return tuple(out)


def derive_rng(*parts) -> np.random.Generator:
    """A generator seeded by the (order-sensitive) key parts."""
    return np.random.default_rng(np.random.SeedSequence(seed_key(*parts)))


def derive_seed(*parts) -> int:
    """A 31-bit integer seed derived from the key parts."""
    return int(np.random.SeedSequence(seed_key(*parts)).generate_state(1)[0] & 0x7FFFFFFF)
