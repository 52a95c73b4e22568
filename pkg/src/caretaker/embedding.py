"""Sentence embedding backends for graph retrieval.

The default backend hashes token character trigrams into a fixed-size vector.
It downloads nothing, is deterministic across processes, and is good enough to
rank short fact renderings against short directive texts.  Real sentence
encoders can be plugged in through the same interface.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words and timestep digits carry no retrieval signal; with short
# texts they otherwise dominate the cosine and drown out entity tokens.
_SKIP_TOKENS = frozenset(
    """a an the at is are am be been was were you your yours it its if of to
    and or not no one someone anyone somewhere anywhere else stays see have
    this that with for""".split()
)


class EmbeddingBackend(Protocol):
    """Maps text to a fixed-length vector; must be deterministic."""

    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedTrigramEmbedder:
    """Bag of hashed token trigrams, L2-normalised.

    Tokens are lowercased alphanumeric runs.  Each token contributes itself
    and its padded character trigrams, hashed into ``dimension`` buckets.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._cache: dict[str, np.ndarray] = {}

    def _features(self, text: str) -> list[str]:
        feats: list[str] = []
        for token in _TOKEN_RE.findall(text.lower()):
            if token in _SKIP_TOKENS or token.isdigit():
                continue
            feats.append(token)
            padded = f"^{token}$"
            feats.extend(padded[i : i + 3] for i in range(len(padded) - 2))
        return feats

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vec = np.zeros(self.dimension, dtype=np.float64)
        for feat in self._features(text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest, "big")
            vec[bucket % self.dimension] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
