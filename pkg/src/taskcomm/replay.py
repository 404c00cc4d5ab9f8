"""Fixed-capacity ring replay with uniform sampling.

The buffer is a dict of preallocated arrays, one per named field, so pushes
are cheap copies and batch extraction is a single fancy-index per field.
Oldest entries are overwritten first once the ring is full.
"""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(self, capacity: int, fields: dict):
        """fields maps name -> (shape, dtype) for one sample (no batch axis)."""
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data = {
            name: np.zeros((capacity,) + tuple(shape), dtype=dtype)
            for name, (shape, dtype) in fields.items()
        }
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    def push(self, sample: dict):
        for name, value in sample.items():
            self._data[name][self._next] = value
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> dict:
        """Uniform without replacement within the batch."""
        if batch_size > self._size:
            raise ValueError(f"requested {batch_size} samples but buffer holds {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return {name: arr[idx] for name, arr in self._data.items()}

    def column(self, name: str) -> np.ndarray:
        """Stored samples for one field (ring order, valid region only)."""
        return self._data[name][: self._size]
