"""
Named random streams.

A stream is fully determined by (seed, label): the pair is hashed into the key
of a counter-based Philox generator, so streams for different images or
stages never share state and can be created in any order or process.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

SEED_MASK = (1 << 64) - 1


class RngStream:
    def __init__(self, seed: int, label: str = ""):
        self.seed = int(seed) & SEED_MASK
        self.label = label
        digest = hashlib.sha256(f"{self.seed}:{label}".encode("utf-8")).digest()
        self.generator = np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    def child(self, label) -> RngStream:
        return RngStream(self.seed, f"{self.label}/{label}" if self.label else str(label))

    def random(self) -> float:
        return float(self.generator.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self.generator.uniform(low, high))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the inclusive range [low, high]."""
        return int(self.generator.integers(low, high, endpoint=True))

    def choice(self, seq: Sequence):
        return seq[int(self.generator.integers(0, len(seq)))]

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """k distinct indices out of range(n)."""
        return self.generator.choice(n, size=k, replace=False)
