"""Seeded, splittable random streams.

Every run owns one root stream and spawns independent children for each
consumer (env resets, agent noise, model bootstraps, ...) so that adding a
consumer never perturbs the draws seen by another.
"""

from __future__ import annotations

import numpy as np


class SeededRng:
    """A numpy Generator plus the SeedSequence it came from.

    Two instances built from the same seed produce identical streams; children
    produced by split() are independent of the parent and of each other.
    """

    def __init__(self, seed_seq: np.random.SeedSequence):
        self.seed_seq = seed_seq
        self.gen = np.random.Generator(np.random.PCG64(seed_seq))

    @classmethod
    def from_seed(cls, seed: int) -> "SeededRng":
        return cls(np.random.SeedSequence(int(seed)))

    def split(self, n: int = 1) -> list["SeededRng"]:
        return [SeededRng(child) for child in self.seed_seq.spawn(n)]

    # Thin delegation for the most common draws; everything else goes
    # through .gen directly.
    def normal(self, *args, **kwargs):
        return self.gen.normal(*args, **kwargs)

    def uniform(self, *args, **kwargs):
        return self.gen.uniform(*args, **kwargs)

    def integers(self, *args, **kwargs):
        return self.gen.integers(*args, **kwargs)
