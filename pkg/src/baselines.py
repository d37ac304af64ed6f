"""
Reference eviction policies: LRU, LFU, RR, PRR and 2LRU.

Each cache serves requests one at a time (topology two, admission on every
miss) or is refreshed from the miss log at cache-update events (topology
one). Request metadata is kept per policy; victims are chosen among stored
files not admitted in the current round.
"""
import logging
from collections import OrderedDict
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Set, Tuple

import numpy as np
from scipy.stats import rankdata

try:
    from .errors import ConfigError
    from .models import PolicyName
    from .placement import CacheState, MissLog
except ImportError:
    from errors import ConfigError
    from models import PolicyName
    from placement import CacheState, MissLog


logger = logging.getLogger(__name__)


class CacheChange(NamedTuple):
    """Files admitted to and evicted from one cache by one decision."""
    admitted: Tuple[int, ...] = ()
    evicted: Tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.admitted and not self.evicted


class RequestOutcome(NamedTuple):
    hit: bool
    change: CacheChange = CacheChange()


class EvictionCache:
    """Stored set plus the request metadata one eviction policy needs."""

    policy: PolicyName = None

    def __init__(self, capacity: float, sizes: np.ndarray, rng: Optional[np.random.Generator] = None):
        self.state = CacheState(capacity, sizes)
        self.sizes = sizes
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._oversized: Set[int] = set()

    @property
    def capacity(self) -> float:
        return self.state.capacity

    @property
    def stored(self) -> FrozenSet[int]:
        return self.state.snapshot()

    def __contains__(self, file_id: int) -> bool:
        return file_id in self.state

    def preload(self, files: Iterable[int], slot: int = 0):
        """Place initial contents without running the policy."""
        for f in sorted(files):
            self.state.add(f)
            self._inserted(f, slot)

    def record_access(self, file_id: int, slot: int):
        """Update the policy metadata for one request, hit or miss."""

    def request(self, file_id: int, slot: int) -> RequestOutcome:
        """Serve one request; a miss is admitted per policy."""
        hit = file_id in self.state
        self.record_access(file_id, slot)
        if hit or not self._admits(file_id):
            return RequestOutcome(hit)
        evicted = self.admit(file_id, slot)
        if evicted is None:
            return RequestOutcome(False)
        return RequestOutcome(False, CacheChange((file_id,), evicted))

    def on_request(self, file_id: int, slot: int) -> bool:
        """True on a hit."""
        return self.request(file_id, slot).hit

    def admit(self, file_id: int, slot: int, protected: FrozenSet[int] = frozenset()) -> Optional[Tuple[int, ...]]:
        """Evict until the file fits, then store it.

        Returns the evicted files, or None when the file cannot fit even
        after evicting every unprotected file; nothing is evicted then.
        """
        size = self.sizes[file_id]
        if size > self.capacity:
            if file_id not in self._oversized:
                self._oversized.add(file_id)
                logger.warning("file %d of size %g exceeds cache storage %g; served without caching",
                               file_id, size, self.capacity)
            return None
        evictable = sum(self.sizes[f] for f in self.state.stored if f not in protected)
        if size > self.state.free + evictable:
            return None
        evicted = []
        while size > self.state.free:
            victim = self._victim(protected)
            self.state.remove(victim)
            self._removed(victim)
            evicted.append(victim)
        self.state.add(file_id)
        self._inserted(file_id, slot)
        return tuple(evicted)

    def periodic_update(self, miss_log: MissLog, slot: int) -> CacheChange:
        """Admit logged misses in policy order, each evicting per policy."""
        protected: Set[int] = set()
        admitted, evicted = [], []
        for f in self._periodic_order(miss_log):
            if f in self.state or not self._admits(f):
                continue
            out = self.admit(f, slot, frozenset(protected))
            if out is None:
                continue
            protected.add(f)
            admitted.append(f)
            evicted.extend(out)
        return CacheChange(tuple(admitted), tuple(sorted(evicted)))

    def _admits(self, file_id: int) -> bool:
        return True

    def _periodic_order(self, miss_log: MissLog) -> List[int]:
        # Newest miss first.
        return list(reversed(miss_log.files()))

    def _victim(self, protected: FrozenSet[int]) -> int:
        raise NotImplementedError

    def _inserted(self, file_id: int, slot: int):
        pass

    def _removed(self, file_id: int):
        pass


class LRUCache(EvictionCache):
    """Evicts the least recently requested stored file."""

    policy = PolicyName.LRU

    def __init__(self, capacity: float, sizes: np.ndarray, rng: Optional[np.random.Generator] = None):
        super().__init__(capacity, sizes, rng)
        self._recency: "OrderedDict[int, int]" = OrderedDict()

    def record_access(self, file_id: int, slot: int):
        if file_id in self._recency:
            self._recency[file_id] = slot
            self._recency.move_to_end(file_id)

    def _victim(self, protected: FrozenSet[int]) -> int:
        for f in self._recency:
            if f not in protected:
                return f
        raise ConfigError("no evictable file left")

    def _inserted(self, file_id: int, slot: int):
        self._recency[file_id] = slot
        self._recency.move_to_end(file_id)

    def _removed(self, file_id: int):
        self._recency.pop(file_id, None)


class LFUCache(EvictionCache):
    """Evicts the stored file with the fewest requests.

    Counters cover every requested file and survive eviction. Ties go to the
    least recently requested file, then the lowest id.
    """

    policy = PolicyName.LFU

    def __init__(self, capacity: float, sizes: np.ndarray, rng: Optional[np.random.Generator] = None):
        super().__init__(capacity, sizes, rng)
        self.counts: Dict[int, int] = {}
        self._last_seen: Dict[int, int] = {}
        self._tick = 0

    def record_access(self, file_id: int, slot: int):
        self._tick += 1
        self.counts[file_id] = self.counts.get(file_id, 0) + 1
        self._last_seen[file_id] = self._tick

    def _key(self, file_id: int):
        return self.counts.get(file_id, 0), self._last_seen.get(file_id, 0), file_id

    def _victim(self, protected: FrozenSet[int]) -> int:
        return min((f for f in self.state.stored if f not in protected), key=self._key)

    def _periodic_order(self, miss_log: MissLog) -> List[int]:
        return sorted(miss_log.files(), key=lambda f: (-self.counts.get(f, 0), -self._last_seen.get(f, 0), f))


class RandomCache(EvictionCache):
    """Evicts a uniformly random stored file."""

    policy = PolicyName.RR

    def _victim(self, protected: FrozenSet[int]) -> int:
        candidates = sorted(f for f in self.state.stored if f not in protected)
        return candidates[int(self.rng.integers(len(candidates)))]

    def _periodic_order(self, miss_log: MissLog) -> List[int]:
        files = sorted(miss_log.files())
        return [files[i] for i in self.rng.permutation(len(files))]


class PRRCache(EvictionCache):
    """Random eviction weighted by staleness.

    The perceived popularity of a file is the slot of its last request; the
    eviction probability of a stored file is proportional to its staleness
    rank (oldest highest, ties share the average rank), so equal timestamps
    give plain random replacement.
    """

    policy = PolicyName.PRR

    def __init__(self, capacity: float, sizes: np.ndarray, rng: Optional[np.random.Generator] = None):
        super().__init__(capacity, sizes, rng)
        self.last_request: Dict[int, int] = {}

    def record_access(self, file_id: int, slot: int):
        self.last_request[file_id] = slot

    def eviction_probabilities(self, candidates: List[int]) -> np.ndarray:
        stamps = np.array([self.last_request.get(f, -1) for f in candidates], dtype=float)
        ranks = rankdata(-stamps, method='average')
        return ranks / ranks.sum()

    def _victim(self, protected: FrozenSet[int]) -> int:
        candidates = sorted(f for f in self.state.stored if f not in protected)
        p = self.eviction_probabilities(candidates)
        return candidates[int(self.rng.choice(len(candidates), p=p))]

    def _inserted(self, file_id: int, slot: int):
        self.last_request.setdefault(file_id, slot)


class TwoLRUCache(LRUCache):
    """LRU admitting a file only once its id is already in a virtual LRU of ids."""

    policy = PolicyName.TWO_LRU

    def __init__(self, capacity: float, sizes: np.ndarray, rng: Optional[np.random.Generator] = None,
                 virtual_capacity: Optional[int] = None):
        super().__init__(capacity, sizes, rng)
        if virtual_capacity is None:
            virtual_capacity = max(1, int(capacity / float(np.mean(sizes))))
        if virtual_capacity < 1:
            raise ConfigError(f"virtual cache capacity must be positive, got {virtual_capacity}")
        self.virtual_capacity = virtual_capacity
        self.virtual: "OrderedDict[int, None]" = OrderedDict()
        self._promoted: Set[int] = set()

    def record_access(self, file_id: int, slot: int):
        super().record_access(file_id, slot)
        if file_id in self.virtual:
            self._promoted.add(file_id)
            self.virtual.move_to_end(file_id)
            return
        self.virtual[file_id] = None
        while len(self.virtual) > self.virtual_capacity:
            old, _ = self.virtual.popitem(last=False)
            self._promoted.discard(old)

    def _admits(self, file_id: int) -> bool:
        return file_id in self._promoted


_POLICIES = {
    PolicyName.LRU: LRUCache,
    PolicyName.LFU: LFUCache,
    PolicyName.RR: RandomCache,
    PolicyName.PRR: PRRCache,
    PolicyName.TWO_LRU: TwoLRUCache,
}


def make_cache(policy: PolicyName, capacity: float, sizes: np.ndarray,
               rng: Optional[np.random.Generator] = None,
               virtual_capacity: Optional[int] = None) -> EvictionCache:
    """Build the eviction cache for a baseline policy name."""
    policy = PolicyName(policy)
    cls = _POLICIES.get(policy)
    if cls is None:
        raise ConfigError(f"{policy.value} is not a baseline eviction policy")
    if cls is TwoLRUCache:
        return cls(capacity, sizes, rng, virtual_capacity)
    return cls(capacity, sizes, rng)
