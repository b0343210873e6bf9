"""Labeled random streams derived from one master seed.

Every consumer of randomness (environment, exploration, replay sampling,
member initialization, selection events, ...) gets its own stream, named by a
string label. Streams with distinct labels are statistically independent, and
a stream replayed from the same (seed, label) reproduces the same sequence.
This is what makes single- and multi-threaded runs byte-identical: threads
never share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEED_MASK = (1 << 64) - 1


def _label_key(label: str) -> tuple[int, ...]:
    # Stable across processes and platforms, unlike hash().
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4))


class RngStream:
    """One named PCG64 substream of a 64-bit master seed."""

    def __init__(self, seed: int, label: str):
        self.seed = int(seed) & _SEED_MASK
        self.label = str(label)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_label_key(self.label))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    # -- draws ------------------------------------------------------------

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n, size=None, replace=True, p=None):
        return self._gen.choice(n, size=size, replace=replace, p=p)

    # -- checkpoint support ------------------------------------------------

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
