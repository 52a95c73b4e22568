"""Deterministic RNG derivation shared by retrieval, scheduling and the harness.

Python's builtin ``hash`` is salted per process, so every derived seed goes
through blake2, keeping runs reproducible across interpreter restarts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(value: object) -> int:
    """64-bit stable hash of ints/strings (and tuples thereof)."""
    if isinstance(value, int):
        return value & 0xFFFFFFFFFFFFFFFF
    if isinstance(value, tuple):
        h = hashlib.blake2b(digest_size=8)
        for part in value:
            h.update(repr(stable_hash(part)).encode())
        return int.from_bytes(h.digest(), "big")
    digest = hashlib.blake2b(str(value).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(*parts: object) -> np.random.Generator:
    """Generator seeded from an arbitrary mix of ints and strings."""
    return np.random.default_rng(np.random.SeedSequence([stable_hash(p) for p in parts]))
