"""Reproducible per-worker random streams.

Streams are Philox counter-based generators whose 128-bit key packs the
64-bit master seed in the low word and the worker index in the high word,
so distinct ``(seed, index)`` pairs always give distinct keys.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def stream_key(master_seed: int, index: int) -> int:
    if not 0 <= index <= MASK64:
        raise ValueError(f"worker index {index} outside [0, 2^64)")
    return (int(master_seed) & MASK64) | (int(index) << 64)


def split_stream(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, index)))


class StreamFactory:
    """Hands out consecutive, never-reused stream indices for one run."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & MASK64
        self._next = 0
        self.issued: list[int] = []

    def __call__(self) -> np.random.Generator:
        idx = self._next
        self._next += 1
        self.issued.append(idx)
        return split_stream(self.master_seed, idx)
