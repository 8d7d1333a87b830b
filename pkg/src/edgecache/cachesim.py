"""Cache-node environment: state, lookup, actions, rewards, and rule-based policies.

A node holds a fixed number of content slots.  Each request is first looked up
locally, then in neighbor caches; only a full miss triggers a replacement
decision.  Actions are 1-based slot indices, with C+1 meaning "do not cache".
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

EMPTY = -1

LRU = "lru"
LFU = "lfu"
RANDOM = "random"


@dataclass
class CacheState:
    """Fixed-capacity slot array; EMPTY marks an unoccupied slot."""

    slots: np.ndarray

    @classmethod
    def empty(cls, capacity: int) -> "CacheState":
        if capacity < 1:
            raise ValueError("capacity must be positive")
        return cls(slots=np.full(capacity, EMPTY, dtype=np.int64))

    @property
    def capacity(self) -> int:
        return len(self.slots)

    def contains(self, content_id: int) -> bool:
        return bool(np.any(self.slots == content_id))

    def copy(self) -> "CacheState":
        return CacheState(slots=self.slots.copy())


@dataclass(frozen=True)
class HitRecord:
    f_local: int
    f_neighbor: int
    requested: int
    node_id: int

    @property
    def is_hit(self) -> bool:
        return bool(self.f_local or self.f_neighbor)


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 5.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.alpha >= self.beta >= 0:
            raise ValueError("require alpha >= beta >= 0")


class ContentStats:
    """Per-content last-access tick and sliding-window request count for one node.

    The window is a fixed span of ticks; counts expire lazily as newer ticks
    are recorded.
    """

    def __init__(self, catalog_size: int, window: int):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self.last_access = np.full(catalog_size, -1, dtype=np.int64)
        self.counts = np.zeros(catalog_size, dtype=np.int64)
        self._events: deque = deque()

    def record(self, content_id: int, tick: int) -> None:
        self.last_access[content_id] = tick
        self.counts[content_id] += 1
        self._events.append((tick, content_id))
        cutoff = tick - self.window
        while self._events and self._events[0][0] <= cutoff:
            _, old = self._events.popleft()
            self.counts[old] -= 1

    def count(self, content_id: int) -> int:
        return int(self.counts[content_id])

    def seen(self, content_id: int) -> bool:
        return self.last_access[content_id] >= 0


def lookup(local: CacheState, neighbors, requested: int) -> HitRecord:
    """Local cache takes precedence; neighbor hit only when missing locally."""
    if local.contains(requested):
        return HitRecord(1, 0, requested, -1)
    for nb in neighbors:
        if nb.contains(requested):
            return HitRecord(0, 1, requested, -1)
    return HitRecord(0, 0, requested, -1)


def apply_action(state: CacheState, action: int, requested: int) -> CacheState:
    """Pure action application: slot i gets the request, C+1 is the identity."""
    C = state.capacity
    if not 1 <= action <= C + 1:
        raise ValueError(f"action {action} out of range [1, {C + 1}]")
    out = state.copy()
    if action <= C:
        out.slots[action - 1] = requested
    return out


def reward(rec: HitRecord, w: RewardWeights) -> float:
    return w.alpha * rec.f_local + w.beta * rec.f_neighbor


def hit_rate(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("hit_rate of an empty record sequence")
    hits = sum(1 for r in records if r.f_local or r.f_neighbor)
    return hits / len(records)


class RolloutStats:
    """Array-backed stats for short policy rollouts.

    Same fields as :class:`ContentStats` but without lazy expiry; rollouts span
    at most one window of ticks, so expiry would be a no-op most of the time.
    Seeded in bulk from a history slice at reset.
    """

    def __init__(self, catalog_size: int, window: int):
        self.window = window
        self.last_access = np.full(catalog_size, -1, dtype=np.int64)
        self.counts = np.zeros(catalog_size, dtype=np.int64)

    def seed(self, contents: np.ndarray, ticks: np.ndarray) -> None:
        np.maximum.at(self.last_access, contents, ticks)
        self.counts += np.bincount(contents, minlength=len(self.counts))

    def record(self, content_id: int, tick: int) -> None:
        self.last_access[content_id] = tick
        self.counts[content_id] += 1


class EmptyTaskError(ValueError):
    """Raised when a task has no events to roll a trajectory from."""


class TaskEnv:
    """Replay environment over one task's event stream.

    Each reset picks a random start offset, warms the cache with the most
    recently requested distinct contents, and seeds request stats from the
    preceding window of events.  Neighbor caches, when provided, are static
    content-id snapshots (read-only during a rollout).
    """

    def __init__(self, contents, timestamps, capacity, catalog_size,
                 weights: RewardWeights, window: int, neighbors=()):
        self.contents = np.asarray(contents, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.capacity = capacity
        self.catalog_size = catalog_size
        self.weights = weights
        self.window = window
        self.neighbors = [frozenset(int(c) for c in nb) for nb in neighbors]

    def __len__(self) -> int:
        return len(self.contents)

    def reset(self, rng, horizon: int):
        """Return (slots, member set, stats, start position) for a fresh rollout."""
        T = len(self.contents)
        if T == 0:
            raise EmptyTaskError("task has no events")
        start = int(rng.integers(0, max(1, T - horizon + 1)))
        lo = int(np.searchsorted(self.timestamps, self.timestamps[start] - self.window))
        hist_c = self.contents[lo:start]
        hist_t = self.timestamps[lo:start]

        stats = RolloutStats(self.catalog_size, self.window)
        stats.seed(hist_c, hist_t)

        slots = np.full(self.capacity, EMPTY, dtype=np.int64)
        if len(hist_c):
            # most recent distinct contents fill the cache, newest first
            rev = hist_c[::-1]
            _, first_idx = np.unique(rev, return_index=True)
            recent = rev[np.sort(first_idx)][: self.capacity]
            slots[: len(recent)] = recent
        member = set(int(c) for c in slots[slots >= 0])
        return slots, member, stats, start


def baseline_step(policy: str, state: CacheState, stats: ContentStats, requested: int, rng=None) -> int:
    """Eviction slot chosen by a rule-based policy (1-based, never the no-op).

    Empty slots are filled first for every policy; ties break to the lowest
    slot index so replays are deterministic.
    """
    slots = state.slots
    empty = np.flatnonzero(slots == EMPTY)
    if len(empty):
        return int(empty[0]) + 1
    if policy == LRU:
        return int(np.argmin(stats.last_access[slots])) + 1
    if policy == LFU:
        return int(np.argmin(stats.counts[slots])) + 1
    if policy == RANDOM:
        if rng is None:
            raise ValueError("random policy needs an rng")
        return int(rng.integers(0, len(slots))) + 1
    raise ValueError(f"unknown policy {policy!r}")
