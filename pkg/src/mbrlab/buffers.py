"""Ring buffers of transitions with uniform with-replacement sampling.

Storage is columnar (one array per field) so minibatch sampling is a gather;
oldest entries are evicted first once capacity is reached.
"""

from __future__ import annotations

import numpy as np

from .envs import Transition
from .rng import SeededRng


class TransitionBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, source: str):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.source = source
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        # behavior-policy density of a given s at collection time (real data
        # only; used by the policy-change feature)
        self.behavior_density = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition, behavior_density: float = 0.0) -> None:
        if tr.source != self.source:
            raise ValueError(f"buffer holds {self.source} transitions, got {tr.source}")
        i = self.cursor
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s2[i] = tr.s2
        self.done[i] = tr.done
        self.behavior_density[i] = behavior_density
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_batch(self, s, a, r, s2, done) -> int:
        n = len(r)
        for i in range(n):
            self.push(Transition(s[i], a[i], float(r[i]), s2[i], bool(done[i]),
                                 self.source))
        return n

    def sample_indices(self, n: int, rng: SeededRng) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx: np.ndarray) -> dict:
        return {
            "s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
            "s2": self.s2[idx], "done": self.done[idx],
        }

    def recent(self, n: int) -> dict:
        """The last min(n, size) entries in insertion order."""
        n = min(n, self.size)
        if self.size < self.capacity:
            idx = np.arange(self.size - n, self.size)
        else:
            idx = (np.arange(self.cursor - n, self.cursor)) % self.capacity
        out = self.gather(idx)
        out["behavior_density"] = self.behavior_density[idx]
        return out

    def clear(self) -> None:
        self.cursor = 0
        self.size = 0
