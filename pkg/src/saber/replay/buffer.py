"""Prioritized ring buffer with priorities supplied by the producer."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .store import ObservationStore
from .sumtree import SumTree


class ReplayError(Exception):
    pass


@dataclass(frozen=True)
class Transition:
    obs_key: Hashable
    action: int
    n_step_return: float
    discount_pow_n: float
    next_obs_key: Hashable
    priority: float

    def __post_init__(self):
        if not math.isfinite(self.priority):
            raise ReplayError(f"priority must be finite, got {self.priority}")
        if self.priority < 0:
            raise ReplayError(f"priority must be non-negative, got {self.priority}")
        if not (self.discount_pow_n == 0.0 or 0.0 < self.discount_pow_n <= 1.0):
            raise ReplayError(f"discount_pow_n must be 0 or in (0, 1], got {self.discount_pow_n}")


@dataclass
class ReplayConfig:
    capacity: int = 1_000_000
    omega: float = 0.2
    beta_start: float = 0.4
    beta_end: float = 1.0
    beta_horizon: int = 50_000_000
    n_step: int = 3
    gamma: float = 0.99

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        for name in ("beta_start", "beta_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.beta_horizon < 1:
            raise ValueError("beta_horizon must be >= 1")

    def beta_at(self, step: int) -> float:
        """Linear IS-exponent schedule, clamped at ``beta_end``."""
        frac = min(max(step, 0) / self.beta_horizon, 1.0)
        return self.beta_start + frac * (self.beta_end - self.beta_start)


@dataclass
class SampleBatch:
    transitions: list[Transition]
    slots: np.ndarray
    is_weights: np.ndarray
    probabilities: np.ndarray
    generations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class ReplayStats:
    size: int
    capacity: int
    insertions: int
    overwrites: int
    stale_updates: int
    priority_updates: int
    samples: int
    blobs: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class PrioritizedReplay:
    """Ring of transitions indexed by a sum-tree over ``priority ** omega``.

    Every public method takes the same lock, so a push, a sample or an update
    is atomic with respect to the others. Each slot carries a generation
    counter; an update naming an older generation is stale and skipped.
    """

    def __init__(self, config: ReplayConfig | None = None, store: ObservationStore | None = None,
                 tree_cls=None):
        self.config = config or ReplayConfig()
        self.store = store
        cap = self.config.capacity
        self.tree = (tree_cls or SumTree)(cap)
        self._data: list[Transition | None] = [None] * cap
        self._generation = np.zeros(cap, dtype=np.int64)
        self._cursor = 0
        self._size = 0
        self._lock = threading.Lock()
        self.insertions = 0
        self.overwrites = 0
        self.stale_updates = 0
        self.priority_updates = 0
        self.samples = 0

    def __len__(self) -> int:
        return self._size

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def _leaf(self, priority: float) -> float:
        return float(priority) ** self.config.omega

    def push_with_priority(self, t: Transition) -> int:
        with self._lock:
            return self._push(t)

    def push_many(self, transitions: Sequence[Transition]) -> list[int]:
        with self._lock:
            return [self._push(t) for t in transitions]

    def _push(self, t: Transition) -> int:
        if not math.isfinite(t.priority) or t.priority < 0:
            raise ReplayError(f"invalid priority {t.priority}")
        if self.store is not None:
            self.store.incref(t.obs_key)
            self.store.incref(t.next_obs_key)
        slot = self._cursor
        old = self._data[slot]
        if old is not None:
            self.overwrites += 1
            if self.store is not None:
                self.store.decref(old.obs_key)
                self.store.decref(old.next_obs_key)
        else:
            self._size += 1
        self._data[slot] = t
        self._generation[slot] += 1
        self.tree.set(slot, self._leaf(t.priority))
        self._cursor = (slot + 1) % self.capacity
        self.insertions += 1
        return slot

    def sample(self, batch: int, beta: float = 1.0, rng: np.random.Generator | None = None) -> SampleBatch:
        if batch < 1:
            raise ReplayError("batch must be >= 1")
        if not 0.0 <= beta <= 1.0:
            raise ReplayError(f"beta must lie in [0, 1], got {beta}")
        rng = rng if rng is not None else np.random.default_rng()
        with self._lock:
            if self._size == 0:
                raise ReplayError("cannot sample from an empty replay")
            total = self.tree.total
            if not total > 0.0:
                raise ReplayError("all stored priorities are zero")
            seg = total / batch
            us = (np.arange(batch) + rng.random(batch)) * seg
            slots = self.tree.find_many(us)
            leaves = self.tree.tree[self.tree.leaves + slots]
            probs = leaves / total
            weights = (self._size * probs) ** (-beta)
            weights = weights / weights.max()
            self.samples += batch
            return SampleBatch(
                [self._data[s] for s in slots.tolist()],
                slots,
                weights,
                probs,
                self._generation[slots].copy(),
            )

    def update_priorities(self, slots, priorities, generations=None) -> int:
        """Write new priorities; returns the number of slots actually updated."""
        slots = np.asarray(slots, dtype=np.int64)
        pr = np.asarray(priorities, dtype=np.float64)
        if slots.shape != pr.shape:
            raise ReplayError("slots and priorities differ in shape")
        if np.any(np.isnan(pr)) or np.any(pr < 0) or np.any(np.isinf(pr)):
            raise ReplayError("priorities must be finite and non-negative")
        if np.any(slots < 0) or np.any(slots >= self.capacity):
            raise ReplayError("slot index out of range")
        with self._lock:
            if generations is None:
                live = np.array([self._data[s] is not None for s in slots.tolist()], dtype=bool)
            else:
                live = self._generation[slots] == np.asarray(generations, dtype=np.int64)
            self.stale_updates += int((~live).sum())
            keep = slots[live]
            if keep.size:
                self.tree.set_many(keep, pr[live] ** self.config.omega)
            self.priority_updates += int(keep.size)
            return int(keep.size)

    def priorities(self) -> np.ndarray:
        """Raw priorities of occupied slots, in slot order."""
        with self._lock:
            return np.array([t.priority for t in self._data[: self._size]])

    def transition(self, slot: int) -> Transition | None:
        return self._data[slot]

    def stats(self) -> ReplayStats:
        with self._lock:
            return ReplayStats(
                size=self._size,
                capacity=self.capacity,
                insertions=self.insertions,
                overwrites=self.overwrites,
                stale_updates=self.stale_updates,
                priority_updates=self.priority_updates,
                samples=self.samples,
                blobs=len(self.store) if self.store is not None else 0,
            )
