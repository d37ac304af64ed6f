"""
Storage allocation from anticipated cache-path flows.

The policies round the relaxed flows x_i into a feasible set of stored files:
Top-X keeps the largest x values, Least-X swaps the smallest-x files for
recently missed ones, Least-X_th does the same between two thresholds and
Least-X_f decides per root download. Packing is greedy by x with
skip-and-continue; ties are broken by file id.
"""
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np

try:
    from .errors import ConfigError
except ImportError:
    from errors import ConfigError


logger = logging.getLogger(__name__)


class CacheState:
    """Files stored at one cache and the volume they occupy."""

    def __init__(self, capacity: float, sizes: np.ndarray, stored: Iterable[int] = ()):
        if not capacity > 0:
            raise ConfigError(f"cache storage must be positive, got {capacity}")
        self.capacity = float(capacity)
        self.sizes = sizes
        self.stored: Set[int] = set()
        self.used = 0.0
        for f in stored:
            self.add(f)

    @property
    def free(self) -> float:
        return self.capacity - self.used

    def __contains__(self, file_id: int) -> bool:
        return file_id in self.stored

    def __len__(self) -> int:
        return len(self.stored)

    def fits(self, file_id: int) -> bool:
        return self.sizes[file_id] <= self.free

    def add(self, file_id: int):
        """Store a file; it must fit."""
        if file_id in self.stored:
            return
        size = float(self.sizes[file_id])
        if size > self.free:
            raise ConfigError(f"file {file_id} of size {size:g} does not fit in {self.free:g} free volume")
        self.stored.add(file_id)
        self.used += size

    def remove(self, file_id: int):
        if file_id in self.stored:
            self.stored.remove(file_id)
            self.used -= float(self.sizes[file_id])
            if not self.stored:
                self.used = 0.0

    def replace(self, stored: Iterable[int]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        """Switch to a new stored set; returns (admitted, evicted), both sorted."""
        stored = set(stored)
        admitted = tuple(sorted(stored - self.stored))
        evicted = tuple(sorted(self.stored - stored))
        self.stored = stored
        self.used = float(sum(self.sizes[f] for f in stored))
        if self.used > self.capacity:
            raise ConfigError(f"placement of volume {self.used:g} exceeds cache storage {self.capacity:g}")
        return admitted, evicted

    def snapshot(self) -> FrozenSet[int]:
        return frozenset(self.stored)

    def copy(self) -> 'CacheState':
        return CacheState(self.capacity, self.sizes, self.stored)


@dataclass
class MissEntry:
    """Last slot a missed file was requested in and how often it missed."""
    last_slot: int
    count: int = 1


class MissLog:
    """Time-stamped list of files requested but absent, oldest dropped first."""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ConfigError(f"miss log capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._entries: "OrderedDict[int, MissEntry]" = OrderedDict()

    def record(self, file_id: int, slot: int):
        """Log a miss; the file moves to the newest end."""
        entry = self._entries.pop(file_id, None)
        if entry is None:
            entry = MissEntry(slot, 0)
        entry.last_slot = slot
        entry.count += 1
        self._entries[file_id] = entry
        if self.capacity is not None:
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def discard(self, file_id: int):
        self._entries.pop(file_id, None)

    def discard_all(self, files: Iterable[int]):
        for f in files:
            self._entries.pop(f, None)

    def clear(self):
        self._entries.clear()

    def files(self) -> List[int]:
        """Logged files, oldest first."""
        return list(self._entries)

    def entry(self, file_id: int) -> MissEntry:
        return self._entries[file_id]

    def items(self):
        return self._entries.items()

    def __contains__(self, file_id: int) -> bool:
        return file_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def default_miss_log_capacity(storage: float, sizes: np.ndarray) -> int:
    """Ten times the number of average-size files that fit in the cache."""
    return max(1, int(10 * storage / float(np.mean(sizes))))


def _descending(files: Iterable[int], x_row: np.ndarray) -> List[int]:
    return sorted(files, key=lambda f: (-x_row[f], f))


def _ascending(files: Iterable[int], x_row: np.ndarray) -> List[int]:
    return sorted(files, key=lambda f: (x_row[f], f))


def top_x(x_row: np.ndarray, sizes: np.ndarray, capacity: float) -> FrozenSet[int]:
    """Greedy scan by descending x, admitting every file that still fits."""
    x_row = np.asarray(x_row, dtype=float)
    ids = np.arange(x_row.size)
    order = np.lexsort((ids, -x_row))
    smallest = float(np.min(sizes))
    stored = []
    free = float(capacity)
    for f in order.tolist():
        size = sizes[f]
        if size <= free:
            stored.append(f)
            free -= size
            if free < smallest:
                break
    return frozenset(stored)


def least_x(state: CacheState, x_row: np.ndarray, miss_log: MissLog, sizes: np.ndarray) -> FrozenSet[int]:
    """Replace the smallest-x stored files with recently missed ones.

    Missed files are admitted by descending x; incumbents are evicted by
    ascending x to make room. Files admitted in this call are never evicted
    by it, and a missed file that cannot fit even after evicting every
    incumbent is skipped.
    """
    stored = set(state.stored)
    free = state.capacity - state.used
    incumbents = deque(_ascending(stored, x_row))
    evictable = float(sum(sizes[f] for f in incumbents))
    for h in _descending((f for f in miss_log.files() if f not in stored), x_row):
        size = sizes[h]
        if size > free + evictable:
            continue
        while size > free:
            victim = incumbents.popleft()
            stored.remove(victim)
            free += sizes[victim]
            evictable -= sizes[victim]
        stored.add(h)
        free -= size
    return frozenset(stored)


def least_x_th(state: CacheState, x_row: np.ndarray, miss_log: MissLog, sizes: np.ndarray) -> FrozenSet[int]:
    """Threshold variant of Least-X.

    th1 is the smallest stored x and th2 the largest missed x. Stored files
    below th2 are evicted; missed files at or above th1 are admitted by
    descending x while they fit. With nothing missed the cache is unchanged;
    with an empty cache every missed file is eligible.
    """
    missed = [f for f in miss_log.files() if f not in state.stored]
    if not missed:
        return state.snapshot()
    th2 = max(x_row[f] for f in missed)
    th1 = min(x_row[f] for f in state.stored) if state.stored else -np.inf
    stored = {f for f in state.stored if x_row[f] >= th2}
    free = state.capacity - float(sum(sizes[f] for f in stored))
    for h in _descending((f for f in missed if x_row[f] >= th1), x_row):
        if sizes[h] <= free:
            stored.add(h)
            free -= sizes[h]
    return frozenset(stored)


def least_x_f(state: CacheState, x_row: np.ndarray, incoming: int,
              sizes: np.ndarray) -> Tuple[bool, FrozenSet[int]]:
    """Decide whether a file just downloaded from the root is retained.

    The file is rejected when its x is below the smallest stored x.
    Otherwise stored files are evicted by ascending x, each with x no larger
    than the incoming file's, until it fits; if it still does not fit
    nothing is evicted.
    """
    if incoming in state.stored:
        return False, frozenset()
    size = sizes[incoming]
    if size > state.capacity:
        return False, frozenset()
    x_in = x_row[incoming]
    if state.stored and x_in < min(x_row[f] for f in state.stored):
        return False, frozenset()
    free = state.free
    victims = []
    for f in _ascending(state.stored, x_row):
        if size <= free or x_row[f] > x_in:
            break
        victims.append(f)
        free += sizes[f]
    if size <= free:
        return True, frozenset(victims)
    return False, frozenset()


def random_fill(capacity: float, sizes: np.ndarray, rng: np.random.Generator) -> FrozenSet[int]:
    """Random files packed greedily, used as the worst-case starting cache."""
    stored = []
    free = float(capacity)
    smallest = float(np.min(sizes))
    for f in rng.permutation(sizes.size).tolist():
        if sizes[f] <= free:
            stored.append(f)
            free -= sizes[f]
            if free < smallest:
                break
    return frozenset(stored)
