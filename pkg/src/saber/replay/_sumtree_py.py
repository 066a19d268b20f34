"""Pure-Python sum-tree; the reference implementation and import fallback."""

from __future__ import annotations

import numpy as np


def _leaf_count(capacity: int) -> int:
    n = 1
    while n < capacity:
        n <<= 1
    return n


class SumTree:
    """Binary tree of partial sums over ``capacity`` non-negative leaves.

    Storage is 1-indexed: node 1 is the root, leaves occupy
    ``[leaves, 2 * leaves)`` where ``leaves`` is ``capacity`` rounded up to a
    power of two. Parents are recomputed as ``left + right`` rather than
    patched by deltas, so sums never drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.leaves = _leaf_count(self.capacity)
        self.tree = np.zeros(2 * self.leaves, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def get(self, index: int) -> float:
        return float(self.tree[self.leaves + index])

    def leaf_values(self) -> np.ndarray:
        return self.tree[self.leaves: self.leaves + self.capacity].copy()

    def set(self, index: int, value: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(index)
        if not value >= 0.0:
            raise ValueError(f"sum-tree leaves must be non-negative, got {value}")
        tree = self.tree
        node = self.leaves + index
        tree[node] = value
        node >>= 1
        while node:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node >>= 1

    def set_many(self, indices, values) -> None:
        for i, v in zip(np.asarray(indices).tolist(), np.asarray(values, dtype=np.float64).tolist()):
            self.set(i, v)

    def find(self, u: float) -> int:
        """Leaf whose cumulative interval ``[prefix, prefix + value)`` contains ``u``.

        ``u`` is clamped into ``[0, total)``; zero-valued leaves are never
        returned while any leaf is positive.
        """
        tree = self.tree
        node = 1
        leaves = self.leaves
        if u < 0.0:
            u = 0.0
        while node < leaves:
            left = 2 * node
            lv = tree[left]
            if u < lv or tree[left + 1] <= 0.0:
                node = left
            else:
                u -= lv
                node = left + 1
        return node - leaves

    def find_many(self, us) -> np.ndarray:
        return np.fromiter((self.find(u) for u in np.asarray(us, dtype=np.float64).tolist()),
                           dtype=np.int64, count=len(us))
