import logging
from typing import Optional

import numpy as np

from .models import (
    MAX_TRADE,
    InvalidParameterError,
    Transition,
)


logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 100_000
DEFAULT_MIN_FILL = 1_000


def _check_priority(priority: float) -> None:
    if not np.isfinite(priority) or priority < 0.0:
        raise InvalidParameterError(f"priority must be finite and non-negative, got {priority}")


def _check_transition(transition: Transition) -> None:
    if abs(transition.action) > MAX_TRADE:
        raise InvalidParameterError(f"action {transition.action} outside [-{MAX_TRADE}, {MAX_TRADE}]")
    if not np.isfinite(transition.reward):
        raise InvalidParameterError(f"reward must be finite, got {transition.reward}")


class SumTree:
    """Complete binary tree over a power-of-two number of leaves.

    Node i has children 2i+1 and 2i+2; leaf j sits at node leaves-1+j. Every internal
    node holds the sum of its children, so the root is the total priority mass.
    `touches` counts node reads and writes.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidParameterError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.leaves = 1 << (capacity - 1).bit_length()
        self.nodes = np.zeros(2 * self.leaves - 1)
        self.touches = 0

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaf(self, index: int) -> float:
        return float(self.nodes[self.leaves - 1 + index])

    def leaf_values(self) -> np.ndarray:
        return self.nodes[self.leaves - 1:].copy()

    def update(self, index: int, priority: float) -> None:
        if not 0 <= index < self.capacity:
            raise InvalidParameterError(f"leaf index {index} out of range [0, {self.capacity})")
        _check_priority(priority)
        node = self.leaves - 1 + index
        self.nodes[node] = priority
        self.touches += 1
        while node > 0:
            node = (node - 1) // 2
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]
            self.touches += 1

    def find(self, u: float) -> int:
        """Leaf whose prefix-sum interval contains u."""
        node = 0
        self.touches += 1
        while node < self.leaves - 1:
            left = 2 * node + 1
            left_sum = self.nodes[left]
            self.touches += 1
            if u < left_sum or self.nodes[left + 1] <= 0.0:
                node = left
            else:
                u -= left_sum
                node = left + 1
        return node - (self.leaves - 1)

    def rebuild(self) -> np.ndarray:
        """Recompute every internal node from the leaves; returns the rebuilt array."""
        nodes = self.nodes.copy()
        for node in range(self.leaves - 2, -1, -1):
            nodes[node] = nodes[2 * node + 1] + nodes[2 * node + 2]
        return nodes


class UniformReplay:
    """Ring buffer with uniform sampling with replacement."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise InvalidParameterError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.storage: list[Optional[Transition]] = [None] * capacity
        self.cursor = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def _store(self, transition: Transition) -> int:
        _check_transition(transition)
        index = self.cursor
        self.storage[index] = transition
        self.cursor = (self.cursor + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return index

    def push(self, transition: Transition, priority: Optional[float] = None) -> None:
        if priority is not None:
            _check_priority(priority)
        self._store(transition)

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if self.count == 0:
            raise InvalidParameterError("cannot sample from an empty buffer")
        if batch_size > self.count:
            raise InvalidParameterError(f"batch_size {batch_size} exceeds stored count {self.count}")
        indices = rng.integers(0, self.count, size=batch_size)
        return [self.storage[i] for i in indices]


class PrioritizedReplay(UniformReplay):
    """Proportional prioritized replay over a sum tree.

    New transitions enter with the current maximum leaf priority (1 when empty).
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        super().__init__(capacity)
        self.tree = SumTree(capacity)
        self.max_priority = 1.0

    def push(self, transition: Transition, priority: Optional[float] = None) -> None:
        if priority is None:
            priority = self.max_priority
        _check_priority(priority)
        index = self._store(transition)
        self.tree.update(index, priority)
        self.max_priority = max(self.max_priority, priority)

    def sample_prioritized(self, batch_size: int, rng: np.random.Generator) -> list[tuple[int, Transition]]:
        if self.count == 0:
            raise InvalidParameterError("cannot sample from an empty buffer")
        if batch_size > self.count:
            raise InvalidParameterError(f"batch_size {batch_size} exceeds stored count {self.count}")
        total = self.tree.total
        if total <= 0.0:
            raise InvalidParameterError("all stored priorities are zero")
        draws = rng.uniform(0.0, total, size=batch_size)
        picked = []
        for u in draws:
            index = self.tree.find(float(u))
            picked.append((index, self.storage[index]))
        return picked

    def update_priorities(self, indices, new_priorities) -> None:
        for index, priority in zip(indices, new_priorities):
            if not 0 <= index < self.count:
                raise InvalidParameterError(f"index {index} out of range [0, {self.count})")
            self.tree.update(int(index), float(priority))
            self.max_priority = max(self.max_priority, float(priority))

    def importance_weights(self, indices, beta: float) -> np.ndarray:
        """(N·P(i))^−β normalized by the largest weight; beta = 0 gives all ones."""
        if beta == 0.0:
            return np.ones(len(indices))
        probs = np.array([self.tree.leaf(i) for i in indices]) / self.tree.total
        weights = (self.count * probs) ** (-beta)
        return weights / weights.max()
