"""
Slot-by-slot placement simulation.

Every slot the requests are served from the cache when the file is stored
and from the root otherwise, and the demand is accumulated for the dual
engine. Cache-update events apply the configured policy; in topology two the
baselines and Least-X_f admit files on each root download instead. Network
cost, rerouted volume and backhaul consumption are recorded per slot and
cache.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from .baselines import EvictionCache, make_cache
    from .dual_engine import AnticipatedFlows, DemandMatrix, DualEngine, DualState, ResidualTrace
    from .errors import ParameterError, PenaltyDomainError
    from .models import (Catalog, ExperimentConfig, MetricsRecord, NetworkConfig, PlacementEvent,
                         PolicyName, RequestStream, Topology)
    from .penalty import PenaltySpec, evaluate
    from .placement import (CacheState, MissLog, default_miss_log_capacity, least_x, least_x_f,
                            least_x_th, random_fill, top_x)
except ImportError:
    from baselines import EvictionCache, make_cache
    from dual_engine import AnticipatedFlows, DemandMatrix, DualEngine, DualState, ResidualTrace
    from errors import ParameterError, PenaltyDomainError
    from models import (Catalog, ExperimentConfig, MetricsRecord, NetworkConfig, PlacementEvent,
                        PolicyName, RequestStream, Topology)
    from penalty import PenaltySpec, evaluate
    from placement import (CacheState, MissLog, default_miss_log_capacity, least_x, least_x_f,
                           least_x_th, random_fill, top_x)


logger = logging.getLogger(__name__)


class CapacityViolation(NamedTuple):
    """Served volume above a link capacity in one slot."""
    slot: int
    cache_id: int
    path: str
    volume: float
    capacity: float


def served_cost(cache_volume: np.ndarray, root_volume: np.ndarray,
                cache_spec: PenaltySpec, root_spec: PenaltySpec) -> float:
    """sum_f chi(cache volume) + phi(root volume); infinite outside a penalty's domain."""
    try:
        return float(np.sum(evaluate(cache_spec, cache_volume)) + np.sum(evaluate(root_spec, root_volume)))
    except PenaltyDomainError as e:
        logger.debug("network cost is unbounded: %s", e)
        return math.inf


def slot_metrics(demand: np.ndarray, stored: np.ndarray, cache_spec: PenaltySpec,
                 root_spec: PenaltySpec) -> Tuple[float, float]:
    """(NC, RDV) of one cache for a demand row and a 0/1 storage row."""
    demand = np.asarray(demand, dtype=float)
    stored = np.asarray(stored, dtype=float)
    if demand.shape != stored.shape:
        raise ParameterError(f"demand {demand.shape} and storage {stored.shape} must have one shape")
    hit = stored * demand
    miss = (1.0 - stored) * demand
    return served_cost(hit, miss, cache_spec, root_spec), float(np.sum(miss))


def bbc_accounting(topology: Topology, metrics: Sequence[MetricsRecord],
                   events: Sequence[PlacementEvent]) -> List[MetricsRecord]:
    """Fill in backhaul consumption.

    Topology one: the volume of files admitted at that slot and cache.
    Topology two: the rerouted volume, since every root download crosses
    the backhaul.
    """
    topology = Topology(topology)
    if topology is Topology.TWO:
        return [replace(r, bbc=r.rdv) for r in metrics]
    admitted: Dict[Tuple[int, int], float] = {}
    for event in events:
        key = (event.slot, event.cache_id)
        admitted[key] = admitted.get(key, 0.0) + event.volume
    return [replace(r, bbc=admitted.get((r.slot, r.cache_id), 0.0)) for r in metrics]


def capacity_audit(cache_volume: np.ndarray, root_volume: np.ndarray,
                   network: NetworkConfig) -> List[CapacityViolation]:
    """Slots where served volume exceeds C^c or C^r; nothing is corrected.

    Both arrays are slots x caches; a single row of anticipated-flow totals
    can be audited the same way.
    """
    cache_volume = np.atleast_2d(np.asarray(cache_volume, dtype=float))
    root_volume = np.atleast_2d(np.asarray(root_volume, dtype=float))
    report = []
    for path, volume, capacity in (("cache", cache_volume, network.cache_capacity),
                                   ("root", root_volume, network.root_capacity)):
        for t, i in zip(*np.nonzero(volume > capacity[None, :])):
            report.append(CapacityViolation(int(t), int(i), path, float(volume[t, i]), float(capacity[i])))
    report.sort()
    return report


def metrics_frame(metrics: Sequence[MetricsRecord]) -> pd.DataFrame:
    """Per-slot totals over caches."""
    frame = pd.DataFrame([r.to_dict() for r in metrics],
                         columns=['slot', 'cache_id', 'nc', 'rdv', 'bbc', 'hits', 'misses'])
    return frame.groupby('slot', sort=True)[['nc', 'rdv', 'bbc', 'hits', 'misses']].sum()


def summarize(metrics: Sequence[MetricsRecord], warmup: int = 0) -> Dict[str, float]:
    """Means per slot after the warmup, plus the hit ratio."""
    per_slot = metrics_frame(metrics)
    per_slot = per_slot[per_slot.index >= warmup]
    if per_slot.empty:
        raise ParameterError(f"no slots left after a warmup of {warmup}")
    requests = float(per_slot['hits'].sum() + per_slot['misses'].sum())
    return {
        'slots': int(len(per_slot)),
        'nc': float(per_slot['nc'].mean()),
        'rdv': float(per_slot['rdv'].mean()),
        'bbc': float(per_slot['bbc'].mean()),
        'hit_ratio': float(per_slot['hits'].sum()) / requests if requests else 0.0,
        'requests': int(requests),
    }


def rdv_learning_curve(metrics: Sequence[MetricsRecord]) -> pd.DataFrame:
    """Running rerouted volume per request from the first slot on."""
    per_slot = metrics_frame(metrics)
    requests = (per_slot['hits'] + per_slot['misses']).cumsum()
    curve = pd.DataFrame({
        'requests': requests,
        'rdv_per_request': per_slot['rdv'].cumsum() / requests.where(requests > 0),
    })
    return curve.fillna(0.0)


@dataclass
class SimulationResult:
    """Metrics, placement events and diagnostics of one run."""
    config: ExperimentConfig
    metrics: List[MetricsRecord]
    events: List[PlacementEvent]
    violations: List[CapacityViolation]
    dual: Optional[DualState] = None
    residual: Optional[ResidualTrace] = None
    stored: List[frozenset] = field(default_factory=list)

    def summary(self) -> Dict[str, float]:
        return summarize(self.metrics, self.config.warmup)


_PERIODIC = {
    PolicyName.TOP_X: None,
    PolicyName.LEAST_X: least_x,
    PolicyName.LEAST_X_TH: least_x_th,
}


class Simulator:
    """One run over one catalog.

    ``flows`` fixes the anticipated flows instead of running the dual engine
    and ``initial`` overrides the starting contents, one set per cache.
    """

    def __init__(self, config: ExperimentConfig, catalog: Catalog,
                 flows: Optional[AnticipatedFlows] = None,
                 initial: Optional[Sequence[Sequence[int]]] = None):
        self.config = config
        self.catalog = catalog
        self.network = config.network
        self.sizes = catalog.sizes
        self.policy = config.policy
        self.topology = config.topology
        caches, files = self.network.caches, catalog.files

        seeds = np.random.SeedSequence(config.seed).spawn(2 * caches)
        fill_rngs = [np.random.default_rng(s) for s in seeds[:caches]]
        policy_rngs = [np.random.default_rng(s) for s in seeds[caches:]]

        self.engine: Optional[DualEngine] = None
        self.fixed_flows = flows is not None
        self.flows = flows
        if self.policy.is_proposed and flows is None:
            self.engine = DualEngine(self.network, files, config.mu, config.init_mode, delta=config.delta)
        if flows is not None and flows.x.shape != (caches, files):
            raise ParameterError(f"injected flows have shape {flows.x.shape}, expected {(caches, files)}")

        self.states: List[CacheState] = []
        self.baselines: List[EvictionCache] = []
        self.miss_logs: List[MissLog] = []
        for i in range(caches):
            storage = float(self.network.storage[i])
            if initial is not None:
                contents = frozenset(initial[i])
            elif config.fill == "random":
                contents = random_fill(storage, self.sizes, fill_rngs[i])
            else:
                contents = frozenset()
            capacity = config.miss_log_capacity or default_miss_log_capacity(storage, self.sizes)
            self.miss_logs.append(MissLog(capacity))
            if self.policy.is_proposed:
                self.states.append(CacheState(storage, self.sizes, contents))
            else:
                cache = make_cache(self.policy, storage, self.sizes, policy_rngs[i], config.virtual_capacity)
                cache.preload(contents)
                self.baselines.append(cache)
                self.states.append(cache.state)

        self.per_request = self.topology is Topology.TWO and not self.policy.is_periodic
        self.events: List[PlacementEvent] = []

    def _record(self, slot: int, cache_id: int, admitted: Sequence[int], evicted: Sequence[int]):
        if not admitted and not evicted:
            return
        volume = float(sum(self.sizes[f] for f in admitted))
        self.events.append(PlacementEvent(slot, cache_id, tuple(sorted(admitted)), tuple(sorted(evicted)), volume))
        logger.debug("slot %d cache %d: admitted %s, evicted %s", slot, cache_id, admitted, evicted)

    def cache_update(self, slot: int):
        """Apply the periodic policy at every cache."""
        if self.per_request:
            return
        if self.policy.is_proposed:
            if self.flows is None:
                logger.debug("slot %d: no anticipated flows yet, placement skipped", slot)
                return
            rule = _PERIODIC[self.policy]
            for i, state in enumerate(self.states):
                x_row = self.flows.x[i]
                if rule is None:
                    new = top_x(x_row, self.sizes, state.capacity)
                else:
                    new = rule(state, x_row, self.miss_logs[i], self.sizes)
                admitted, evicted = state.replace(new)
                self._record(slot, i, admitted, evicted)
                self.miss_logs[i].clear()
        else:
            for i, cache in enumerate(self.baselines):
                change = cache.periodic_update(self.miss_logs[i], slot)
                self._record(slot, i, change.admitted, change.evicted)
                self.miss_logs[i].clear()

    def serve(self, slot: int, cache_id: int, file_id: int) -> bool:
        """Serve one request; True when the cache holds the file."""
        state = self.states[cache_id]
        if self.per_request:
            if self.baselines:
                outcome = self.baselines[cache_id].request(file_id, slot)
                self._record(slot, cache_id, outcome.change.admitted, outcome.change.evicted)
                return outcome.hit
            hit = file_id in state
            if not hit and self.flows is not None:
                cached, evicted = least_x_f(state, self.flows.x[cache_id], file_id, self.sizes)
                if cached:
                    for f in evicted:
                        state.remove(f)
                    state.add(file_id)
                    self._record(slot, cache_id, (file_id,), tuple(evicted))
            return hit
        hit = file_id in state
        if self.baselines:
            self.baselines[cache_id].record_access(file_id, slot)
        if not hit:
            self.miss_logs[cache_id].record(file_id, slot)
        return hit

    def run(self, stream: RequestStream) -> SimulationResult:
        config = self.config
        caches, files = self.network.caches, self.catalog.files
        horizon = config.horizon
        stream.validate(self.catalog, caches)
        slots = stream.slots
        beyond = int(np.count_nonzero(slots >= horizon))
        if beyond:
            logger.warning("%d requests fall after the horizon of %d slots and are ignored", beyond, horizon)
        bounds = np.searchsorted(slots, np.arange(horizon + 1), side='left')
        ids_cache = stream.cache.tolist()
        ids_file = stream.file.tolist()
        volumes = stream.volume.tolist()

        accumulated = np.zeros((caches, files))
        served = np.zeros((horizon, caches, 2))
        metrics: List[MetricsRecord] = []
        for t in range(horizon):
            if t % config.cache_update_interval == 0:
                self.cache_update(t)

            hit_d = np.zeros((caches, files))
            root_d = np.zeros((caches, files))
            hits = np.zeros(caches, dtype=np.int64)
            misses = np.zeros(caches, dtype=np.int64)
            for k in range(bounds[t], bounds[t + 1]):
                i, f, v = ids_cache[k], ids_file[k], volumes[k]
                if self.serve(t, i, f):
                    hit_d[i, f] += v
                    hits[i] += 1
                else:
                    root_d[i, f] += v
                    misses[i] += 1
            demand = hit_d + root_d
            accumulated += demand

            for i in range(caches):
                cache_total = float(hit_d[i].sum())
                rdv = float(root_d[i].sum())
                served[t, i] = (cache_total, rdv)
                nc = served_cost(hit_d[i], root_d[i], self.network.cache_penalties[i],
                                 self.network.root_penalties[i])
                metrics.append(MetricsRecord(
                    t, i, nc, rdv, 0.0, int(hits[i]), int(misses[i]), cache_total + rdv,
                    cache_total > self.network.cache_capacity[i], rdv > self.network.root_capacity[i]))

            if self.engine is not None and (t + 1) % config.dual_interval == 0:
                self.flows = self.engine.step(DemandMatrix(accumulated))
                accumulated = np.zeros((caches, files))

        violations = capacity_audit(served[:, :, 0], served[:, :, 1], self.network)
        if violations:
            logger.warning("%d served-volume capacity violations (first at slot %d, cache %d)",
                           len(violations), violations[0].slot, violations[0].cache_id)
        unbounded = [r for r in metrics if math.isinf(r.nc)]
        if unbounded:
            logger.warning("network cost is unbounded in %d records (first at slot %d, cache %d)",
                           len(unbounded), unbounded[0].slot, unbounded[0].cache_id)
        metrics = bbc_accounting(self.topology, metrics, self.events)
        result = SimulationResult(config, metrics, list(self.events), violations,
                                  stored=[s.snapshot() for s in self.states])
        if self.engine is not None:
            result.dual = self.engine.snapshot()
            if self.engine.history.steps:
                result.residual = self.engine.trace()
        return result


def run(config: ExperimentConfig, catalog: Catalog, stream: RequestStream) -> SimulationResult:
    """Simulate one configuration over a request stream."""
    logger.info("running %s, topology %s, %d caches, %d files, %d slots",
                config.policy.value, config.topology.value, config.network.caches, catalog.files, config.horizon)
    result = Simulator(config, catalog).run(stream)
    logger.info("%s done: %s", config.policy.value,
                ", ".join(f"{k}={v:.6g}" for k, v in result.summary().items()))
    return result
