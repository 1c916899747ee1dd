"""
Replay memory for Q-learning.
"""
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from volume_inference.recovery.qnetwork import ACTIONS


@dataclass(frozen=True)
class Transition:
    """One simulator step: state, action, next state, reward."""
    state: np.ndarray
    action: int
    next_state: np.ndarray
    reward: float
    terminal: bool = False

    def __post_init__(self):
        if not 0 <= self.action < len(ACTIONS):
            raise ValueError(f"Action index {self.action} is outside 0..{len(ACTIONS) - 1}")
        if not math.isfinite(self.reward):
            raise ValueError(f"Reward {self.reward} is not finite")


class ReplayMemory:
    """Fixed-capacity buffer; the oldest transition is evicted first."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError(f"capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def can_sample(self, batch: int) -> bool:
        return len(self._items) >= batch

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        """A uniform mini-batch without replacement."""
        if not self.can_sample(batch):
            raise ValueError(f"Cannot sample {batch} transitions from a memory of {len(self._items)}")
        picks = rng.choice(len(self._items), size=batch, replace=False)
        return [self._items[int(i)] for i in picks]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)
