"""Named, independent random streams derived from one seed.

Each stream is keyed by the CRC32 of its name through ``SeedSequence``'s
spawn key and drives a counter-based Philox generator, so adding a new stream
never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "Streams", "STREAM_NAMES"]

STREAM_NAMES = ("env", "policy", "ard", "clustering")


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Lazily created generators, one per name."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name)
        return self._cache[name]

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        return self[name]
