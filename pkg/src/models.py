"""
Data models shared by the placement simulator.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

try:
    from .errors import ConfigError, UnknownFileError
    from .penalty import PenaltyFamily, PenaltySpec
except ImportError:
    from errors import ConfigError, UnknownFileError
    from penalty import PenaltyFamily, PenaltySpec


class Topology(Enum):
    """Network topologies.

    ONE: the root reaches users over side links, caches are refreshed
    periodically. TWO: all root traffic passes through the cache.
    """
    ONE = "one"
    TWO = "two"


class PolicyName(Enum):
    """Storage policies, named as in config files."""
    LRU = "lru"
    LFU = "lfu"
    RR = "rr"
    PRR = "prr"
    TWO_LRU = "2lru"
    TOP_X = "topx"
    LEAST_X = "leastx"
    LEAST_X_TH = "leastxth"
    LEAST_X_F = "leastxf"

    @property
    def is_proposed(self) -> bool:
        """Policies driven by anticipated flows."""
        return self in (PolicyName.TOP_X, PolicyName.LEAST_X, PolicyName.LEAST_X_TH, PolicyName.LEAST_X_F)

    @property
    def is_periodic(self) -> bool:
        """Proposed policies that act only at cache-update events."""
        return self in (PolicyName.TOP_X, PolicyName.LEAST_X, PolicyName.LEAST_X_TH)


@dataclass(frozen=True)
class Catalog:
    """Immutable file library; file ids are positions in ``sizes``."""
    sizes: np.ndarray
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=float)
        if sizes.ndim != 1 or sizes.size == 0:
            raise ConfigError("catalog needs at least one file")
        if not np.all(sizes > 0):
            raise ConfigError("file sizes must be positive")
        sizes.setflags(write=False)
        object.__setattr__(self, 'sizes', sizes)
        if self.names and len(self.names) != sizes.size:
            raise ConfigError(f"catalog has {sizes.size} sizes but {len(self.names)} names")

    @property
    def files(self) -> int:
        return int(self.sizes.size)

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.sizes))

    def name(self, file_id: int) -> str:
        """External name of a file (its id when the catalog is unnamed)."""
        return self.names[file_id] if self.names else str(file_id)

    def storage_for_percent(self, percent: float) -> float:
        """Cache size expressed as a percentage of the total library volume."""
        return self.total_volume * percent / 100.0

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {'sizes': self.sizes.tolist(), 'names': list(self.names)}

    @classmethod
    def from_dict(cls, data: dict) -> 'Catalog':
        """Create Catalog from dictionary."""
        return cls(np.asarray(data['sizes'], dtype=float), tuple(data.get('names', ())))


@dataclass(frozen=True)
class NetworkConfig:
    """Per-cache storage M_i, link capacities C^c_i, C^r_i and penalties."""
    storage: np.ndarray
    cache_capacity: np.ndarray
    root_capacity: np.ndarray
    cache_penalties: Tuple[PenaltySpec, ...]
    root_penalties: Tuple[PenaltySpec, ...]

    def __post_init__(self):
        n = len(self.cache_penalties)
        arrays = {}
        for name in ('storage', 'cache_capacity', 'root_capacity'):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            if not np.all(value > 0):
                raise ConfigError(f"{name} must be positive for every cache")
            value.setflags(write=False)
            arrays[name] = value
        if n == 0 or len(self.root_penalties) != n:
            raise ConfigError("need one cache-path and one root-path penalty per cache")
        for name, value in arrays.items():
            object.__setattr__(self, name, value)
        # Delay penalties are analysed on their link capacity unless told otherwise.
        object.__setattr__(self, 'cache_penalties', tuple(
            _default_domain(spec, cap) for spec, cap in zip(self.cache_penalties, arrays['cache_capacity'])))
        object.__setattr__(self, 'root_penalties', tuple(
            _default_domain(spec, cap) for spec, cap in zip(self.root_penalties, arrays['root_capacity'])))

    @classmethod
    def uniform(cls, caches: int, storage: float, cache_capacity: float, root_capacity: float,
                cache_penalty: PenaltySpec, root_penalty: PenaltySpec) -> 'NetworkConfig':
        """All caches share the same parameters."""
        if caches < 1:
            raise ConfigError(f"need at least one cache, got {caches}")
        return cls(np.full(caches, storage, dtype=float),
                   np.full(caches, cache_capacity, dtype=float),
                   np.full(caches, root_capacity, dtype=float),
                   (cache_penalty,) * caches,
                   (root_penalty,) * caches)

    @property
    def caches(self) -> int:
        return len(self.cache_penalties)

    def with_storage(self, storage) -> 'NetworkConfig':
        """Copy with new per-cache storage."""
        return NetworkConfig(np.broadcast_to(np.asarray(storage, dtype=float), (self.caches,)).copy(),
                             self.cache_capacity, self.root_capacity,
                             self.cache_penalties, self.root_penalties)


def _default_domain(spec: PenaltySpec, capacity: float) -> PenaltySpec:
    if spec.family in (PenaltyFamily.KLEINROCK, PenaltyFamily.MM1) and not math.isfinite(spec.domain_max):
        return spec.with_domain(float(capacity))
    return spec


class RequestEvent(NamedTuple):
    """One user request: slot-scaled time, cache, file and demanded volume."""
    time: float
    cache: int
    file: int
    volume: float

    @property
    def slot(self) -> int:
        return int(math.floor(self.time))


@dataclass
class RequestStream:
    """Time-ordered request events stored column-wise."""
    time: np.ndarray
    cache: np.ndarray
    file: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.cache = np.asarray(self.cache, dtype=np.int64)
        self.file = np.asarray(self.file, dtype=np.int64)
        self.volume = np.asarray(self.volume, dtype=float)
        n = self.time.size
        if not (self.cache.size == self.file.size == self.volume.size == n):
            raise ConfigError("request stream columns have different lengths")

    @classmethod
    def empty(cls) -> 'RequestStream':
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_events(cls, events: Sequence[RequestEvent]) -> 'RequestStream':
        if not events:
            return cls.empty()
        time, cache, file, volume = zip(*events)
        return cls(np.array(time), np.array(cache), np.array(file), np.array(volume))

    @classmethod
    def merge(cls, time, cache, file, volume) -> 'RequestStream':
        """Build a stream from unsorted columns, sorting stably by time."""
        order = np.argsort(np.asarray(time, dtype=float), kind='stable')
        return cls(np.asarray(time)[order], np.asarray(cache)[order],
                   np.asarray(file)[order], np.asarray(volume)[order])

    def __len__(self) -> int:
        return int(self.time.size)

    def __iter__(self) -> Iterator[RequestEvent]:
        for row in zip(self.time.tolist(), self.cache.tolist(), self.file.tolist(), self.volume.tolist()):
            yield RequestEvent(*row)

    @property
    def slots(self) -> np.ndarray:
        return np.floor(self.time).astype(np.int64)

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.volume))

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.time) >= 0))

    def validate(self, catalog: Catalog, caches: int):
        """Check ids against the catalog and the number of caches."""
        if len(self) == 0:
            return
        if self.file.min() < 0 or self.file.max() >= catalog.files:
            bad = int(self.file[(self.file < 0) | (self.file >= catalog.files)][0])
            raise UnknownFileError(f"request for file {bad} outside the catalog of {catalog.files} files")
        if self.cache.min() < 0 or self.cache.max() >= caches:
            raise ConfigError(f"request stream addresses caches beyond the {caches} configured")
        if not self.is_sorted():
            raise ConfigError("request stream is not sorted by time")


@dataclass(frozen=True)
class PopularityProfile:
    """First-request time tau, request count V and decay rate omega of a file."""
    file_id: int
    tau: float
    V: int
    omega: float

    def __post_init__(self):
        if self.V < 1:
            raise ConfigError(f"file {self.file_id}: request count must be >= 1, got {self.V}")
        if not self.omega > 0:
            raise ConfigError(f"file {self.file_id}: decay rate must be positive, got {self.omega}")

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {'file_id': self.file_id, 'tau': self.tau, 'V': self.V, 'omega': self.omega}

    @classmethod
    def from_dict(cls, data: dict) -> 'PopularityProfile':
        """Create PopularityProfile from dictionary."""
        return cls(int(data['file_id']), float(data['tau']), int(data['V']), float(data['omega']))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a single simulation run needs besides catalog and stream."""
    topology: Topology
    policy: PolicyName
    network: NetworkConfig
    horizon: int
    mu: Optional[float] = None
    dual_interval: int = 1
    cache_update_interval: int = 1
    warmup: int = 0
    seed: int = 0
    init_mode: str = "floor"
    delta: float = 1e-9
    miss_log_capacity: Optional[int] = None
    virtual_capacity: Optional[int] = None
    initial_fill: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'topology', Topology(self.topology))
        object.__setattr__(self, 'policy', PolicyName(self.policy))
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least one slot, got {self.horizon}")
        if not (0 <= self.warmup < self.horizon):
            raise ConfigError(f"warmup must lie in [0, horizon), got {self.warmup}")
        if self.dual_interval < 1 or self.cache_update_interval < 1:
            raise ConfigError("dual and cache update intervals must be positive")
        if self.policy.is_proposed and self.dual_interval > self.cache_update_interval:
            raise ConfigError(
                f"dual interval ({self.dual_interval}) must not exceed the cache update "
                f"interval ({self.cache_update_interval}) for {self.policy.value}")
        if self.policy is PolicyName.LEAST_X_F and self.topology is not Topology.TWO:
            raise ConfigError("leastxf admits files on root downloads and needs topology two")
        if self.initial_fill not in (None, "random", "empty"):
            raise ConfigError(f"initial_fill must be 'random' or 'empty', got {self.initial_fill}")

    @property
    def fill(self) -> str:
        """Initial cache contents: random for topology one, empty for two."""
        if self.initial_fill is not None:
            return self.initial_fill
        return "random" if self.topology is Topology.ONE else "empty"


@dataclass(frozen=True)
class MetricsRecord:
    """Per-slot, per-cache metrics."""
    slot: int
    cache_id: int
    nc: float
    rdv: float
    bbc: float
    hits: int
    misses: int
    demand: float = 0.0
    cache_violation: bool = False
    root_violation: bool = False

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            'slot': self.slot,
            'cache_id': self.cache_id,
            'nc': self.nc,
            'rdv': self.rdv,
            'bbc': self.bbc,
            'hits': self.hits,
            'misses': self.misses,
        }


@dataclass(frozen=True)
class PlacementEvent:
    """A change of cache contents at one cache."""
    slot: int
    cache_id: int
    admitted: Tuple[int, ...]
    evicted: Tuple[int, ...]
    volume: float

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            'slot': self.slot,
            'cache_id': self.cache_id,
            'admitted': ";".join(str(f) for f in self.admitted),
            'evicted': ";".join(str(f) for f in self.evicted),
            'volume': self.volume,
        }


@dataclass
class RunManifest:
    """A sweep: config path, output directory and the axes to cross."""
    config_path: str
    output_dir: str
    policies: List[PolicyName]
    cache_sizes: List[float]
    cache_update_intervals: List[int]
    seeds: List[int]
    settings: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('policies', 'cache_sizes', 'cache_update_intervals', 'seeds'):
            if not getattr(self, name):
                raise ConfigError(f"sweep axis '{name}' is empty")

    def cells(self) -> List[Tuple[PolicyName, float, int, int]]:
        """All (policy, cache size %, update interval, seed) combinations."""
        return [(policy, size, interval, seed)
                for policy in self.policies
                for size in self.cache_sizes
                for interval in self.cache_update_intervals
                for seed in self.seeds]
