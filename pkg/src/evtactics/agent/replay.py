from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    o_t: np.ndarray
    a_t: int
    r_t: float
    o_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int = 2000, obs_size: int = 32):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def store(self, t: Transition) -> None:
        i = self.cursor
        self.obs[i] = t.o_t
        self.next_obs[i] = t.o_next
        self.actions[i] = t.a_t
        self.rewards[i] = t.r_t
        self.terminal[i] = t.terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.obs[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                          self.next_obs[i].copy(), bool(self.terminal[i]))

    def sample_batch(self, rng: np.random.Generator, batch_size: int = 32):
        """Uniform sample with replacement, or ``None`` while fewer than ``batch_size`` are stored."""
        if self.size < batch_size:
            return None
        idx = rng.integers(0, self.size, size=batch_size)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx]
