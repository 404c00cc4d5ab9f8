"""Age-of-information accounting per (receiver, sender) flow.

Age counts environment steps since the most recently delivered message from
a sender was generated. The table advances by one each step, a broadcast
delivery resets a sender's column to (now - gen_step), and an agent's view
of itself is always fresh (zero diagonal). Out-of-order deliveries are
ignored. Ages are kept in steps, not seconds: decisions happen at step
granularity, and sub-step transmission time is charged through the reward
instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEVER = -1


class AoiTable:
    """Square age table over n agents, owned by one episode loop."""

    def __init__(self, n_agents: int):
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        self.n = n_agents
        self.age = np.zeros((n_agents, n_agents), dtype=np.int64)
        self.last_gen_step = np.full((n_agents, n_agents), NEVER, dtype=np.int64)

    def advance(self):
        """One step passes: every off-diagonal age grows by exactly 1."""
        self.age += 1
        np.fill_diagonal(self.age, 0)

    def record_delivery(self, sender: int, gen_step: int, now: int) -> bool:
        """Broadcast delivery of sender's message generated at gen_step.

        Returns False (table untouched) for a stale, out-of-order packet.
        """
        if gen_step > now:
            raise ValueError("gen_step must be <= now")
        if not 0 <= sender < self.n:
            raise IndexError(f"sender {sender} out of range")
        if gen_step < int(self.last_gen_step[:, sender].max()):
            return False
        self.age[:, sender] = now - gen_step
        self.last_gen_step[:, sender] = gen_step
        np.fill_diagonal(self.age, 0)
        return True

    def ages_for(self, receiver: int) -> np.ndarray:
        return self.age[receiver].copy()

    def snapshot(self) -> np.ndarray:
        return self.age.copy()


@dataclass
class AoiSummary:
    mean_per_link: np.ndarray
    peak_per_link: np.ndarray
    mean: float
    peak: int


def summarize(history) -> AoiSummary:
    """Mean and peak age over a history of per-step snapshots.

    System-wide numbers aggregate off-diagonal links only; the zero diagonal
    would otherwise deflate the mean.
    """
    history = list(history)
    if not history:
        raise ValueError("empty AoI history")
    stack = np.stack(history)
    mean_per_link = stack.mean(axis=0)
    peak_per_link = stack.max(axis=0)
    off_diag = ~np.eye(stack.shape[1], dtype=bool)
    if stack.shape[1] == 1:
        mean = 0.0
        peak = 0
    else:
        mean = float(stack[:, off_diag].mean())
        peak = int(stack[:, off_diag].max())
    return AoiSummary(mean_per_link, peak_per_link, mean, peak)
