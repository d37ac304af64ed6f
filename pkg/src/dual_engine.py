"""
Incremental dual ascent on the shadow prices of unmet demand.

Each step solves the cache-path and root-path subproblems of every cache at
the current prices (the anticipated flows) and then moves the prices against
the gap between anticipated flows and accumulated demand:

    lambda <- lambda - mu * (x + y - d)

Prices are never projected. Under over-provisioned demand and a step size
below the curvature modulus they stay inside [floor, Delta] on their own;
breaches are logged and recorded as diagnostics.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

try:
    from .errors import InitializationError, ParameterError, StepSizeError
    from .models import NetworkConfig
    from .penalty import constants
    from .subproblem import DEFAULT_DELTA, SubproblemInstance, solve, verify_kkt
except ImportError:
    from errors import InitializationError, ParameterError, StepSizeError
    from models import NetworkConfig
    from penalty import constants
    from subproblem import DEFAULT_DELTA, SubproblemInstance, solve, verify_kkt


logger = logging.getLogger(__name__)

# Slack allowed when checking the price bounds.
BOUND_SLACK = 1e-7

# Breach messages kept on a DualState; later breaches are only counted.
MAX_DIAGNOSTICS = 20


class InitMode(Enum):
    """How the initial prices are chosen."""
    FLOOR = "floor"
    UNIFORM_CAP = "uniform_cap"
    CUSTOM = "custom"


class NetworkConstants(NamedTuple):
    """Curvature constants and price bounds derived from the penalties."""
    m: float
    L: np.ndarray
    delta_cap: np.ndarray
    phi_floor: np.ndarray


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DemandMatrix:
    """Demanded volume per (cache, file) over one accumulation interval."""
    d: np.ndarray

    def __post_init__(self):
        d = _frozen(self.d)
        if d.ndim != 2:
            raise ParameterError("demand matrix must be two-dimensional")
        if np.any(d < 0):
            raise ParameterError("demand must be non-negative")
        object.__setattr__(self, 'd', d)

    @classmethod
    def zeros(cls, caches: int, files: int) -> 'DemandMatrix':
        return cls(np.zeros((caches, files)))

    def feasible(self, network: NetworkConfig) -> np.ndarray:
        """Per cache: does the demand fit within C^c + C^r (over-provisioning)?"""
        return self.d.sum(axis=1) <= network.cache_capacity + network.root_capacity


@dataclass(frozen=True)
class AnticipatedFlows:
    """Cache-path flows x and root-path flows y, one row per cache."""
    x: np.ndarray
    y: np.ndarray
    kkt_residual: float = 0.0

    def __post_init__(self):
        x, y = _frozen(self.x), _frozen(self.y)
        if x.shape != y.shape or x.ndim != 2:
            raise ParameterError("anticipated flow matrices must share one 2-d shape")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'y', y)

    @property
    def total(self) -> np.ndarray:
        return self.x + self.y


@dataclass(frozen=True)
class DualState:
    """Shadow prices and the constants that bound them."""
    lam: np.ndarray
    mu: float
    delta_cap: np.ndarray
    phi_floor: np.ndarray
    t: int = 0
    diagnostics: Tuple[str, ...] = ()
    breaches: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'lam', _frozen(self.lam))
        object.__setattr__(self, 'delta_cap', _frozen(self.delta_cap))
        object.__setattr__(self, 'phi_floor', _frozen(self.phi_floor))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.lam.shape

    def bound_violations(self, slack: float = BOUND_SLACK) -> List[str]:
        """Describe every breach of the lower and row-sum price bounds."""
        problems = []
        low = self.lam < self.phi_floor[:, None] - slack
        for i, f in zip(*np.nonzero(low)):
            problems.append(f"t={self.t}: price of file {f} at cache {i} fell to {self.lam[i, f]:.6g} "
                            f"below the floor {self.phi_floor[i]:.6g}")
        sums = self.lam.sum(axis=1)
        for i in np.nonzero(sums > self.delta_cap + slack)[0]:
            problems.append(f"t={self.t}: prices at cache {i} sum to {sums[i]:.6g} above Delta={self.delta_cap[i]:.6g}")
        return problems

    def rows(self):
        """Yield (cache id, file id, lambda) for CSV snapshots."""
        caches, files = self.lam.shape
        for i in range(caches):
            for f in range(files):
                yield i, f, float(self.lam[i, f])


def network_constants(network: NetworkConfig, files: int) -> NetworkConstants:
    """m = min over caches of min(m_chi, m_phi); per cache L, Delta and the price floor."""
    ms, Ls, deltas, floors = [], [], [], []
    for i in range(network.caches):
        chi = constants(network.cache_penalties[i])
        phi = constants(network.root_penalties[i])
        L = max(chi.L, phi.L)
        ms.append(min(chi.m, phi.m))
        Ls.append(L)
        deltas.append(L * (network.cache_capacity[i] + network.root_capacity[i]) + files * max(chi.d0, phi.d0))
        floors.append(min(chi.d0, phi.d0))
    return NetworkConstants(min(ms), np.array(Ls), np.array(deltas), np.array(floors))


def init(network: NetworkConfig, files: int, mu: Optional[float] = None,
         mode: InitMode = InitMode.FLOOR, custom: Optional[np.ndarray] = None) -> DualState:
    """Initial prices inside [floor, Delta] and a step size in (0, m).

    mu defaults to m/2.
    """
    if files < 1:
        raise ParameterError(f"need at least one file, got {files}")
    mode = InitMode(mode)
    consts = network_constants(network, files)
    if mu is None:
        mu = 0.5 * consts.m
    if not (0 < mu < consts.m):
        raise StepSizeError(f"step size mu={mu:g} must lie in (0, m) with m={consts.m:g}")

    caches = network.caches
    if mode is InitMode.FLOOR:
        lam = np.repeat(consts.phi_floor[:, None], files, axis=1)
    elif mode is InitMode.UNIFORM_CAP:
        level = consts.delta_cap / files
        short = level < consts.phi_floor
        if np.any(short):
            i = int(np.nonzero(short)[0][0])
            raise InitializationError(
                f"uniform_cap level Delta/F={level[i]:.6g} at cache {i} is below the floor {consts.phi_floor[i]:.6g}")
        lam = np.repeat(level[:, None], files, axis=1)
    else:
        if custom is None:
            raise InitializationError("custom initialization needs a price matrix")
        lam = np.asarray(custom, dtype=float)
        if lam.shape != (caches, files):
            raise InitializationError(f"custom prices have shape {lam.shape}, expected {(caches, files)}")

    state = DualState(lam, float(mu), consts.delta_cap, consts.phi_floor)
    problems = state.bound_violations(slack=0.0)
    if problems:
        raise InitializationError(problems[0])
    logger.debug("dual state initialized (%s), mu=%g, m=%g", mode.value, mu, consts.m)
    return state


def primal_step(state: DualState, network: NetworkConfig, delta: float = DEFAULT_DELTA,
                check_kkt: bool = False) -> AnticipatedFlows:
    """Anticipated flows: one cache-path and one root-path subproblem per cache."""
    caches, files = state.shape
    x = np.zeros((caches, files))
    y = np.zeros((caches, files))
    worst = 0.0
    for i in range(caches):
        prices = state.lam[i]
        for out, capacity, penalty in ((x, network.cache_capacity[i], network.cache_penalties[i]),
                                       (y, network.root_capacity[i], network.root_penalties[i])):
            inst = SubproblemInstance(prices, float(capacity), penalty)
            sol = solve(inst, delta)
            out[i] = sol.flows
            if check_kkt:
                worst = max(worst, verify_kkt(inst, sol))
    if check_kkt and worst > 10 * delta:
        logger.warning("t=%d: subproblem optimality residual %.3g exceeds 10*delta", state.t, worst)
    return AnticipatedFlows(x, y, worst)


def dual_step(state: DualState, flows: AnticipatedFlows, demand: DemandMatrix) -> DualState:
    """lambda(t+1) = lambda(t) - mu (x + y - d), without projection."""
    if flows.x.shape != state.shape or demand.d.shape != state.shape:
        raise ParameterError(f"flows {flows.x.shape} and demand {demand.d.shape} must match prices {state.shape}")
    lam = state.lam - state.mu * (flows.total - demand.d)
    new_state = replace(state, lam=lam, t=state.t + 1)
    problems = new_state.bound_violations()
    if problems:
        if not state.breaches:
            logger.warning("price bound violated: %s; further breaches are counted in diagnostics", problems[0])
        kept = state.diagnostics + tuple(problems[:MAX_DIAGNOSTICS - len(state.diagnostics)])
        new_state = replace(new_state, diagnostics=kept, breaches=state.breaches + len(problems))
    return new_state


@dataclass
class DualHistory:
    """Running sums over the recorded steps, enough to rebuild the residual trace."""
    caches: int
    files: int
    steps: int = 0
    residual_sum: np.ndarray = field(default=None)
    lam_sum: np.ndarray = field(default=None)
    lam_sq_sum: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (self.caches, self.files)
        if self.residual_sum is None:
            self.residual_sum = np.zeros(shape)
        if self.lam_sum is None:
            self.lam_sum = np.zeros(shape)
        if self.lam_sq_sum is None:
            self.lam_sq_sum = np.zeros(shape)

    def record(self, state: DualState, flows: AnticipatedFlows, demand: DemandMatrix):
        """Add one step taken from ``state`` with the given flows and demand."""
        self.steps += 1
        self.residual_sum += flows.total - demand.d
        self.lam_sum += state.lam
        self.lam_sq_sum += state.lam ** 2


class ResidualTrace(NamedTuple):
    """Averaged constraint violation and the Lagrangian-gradient proxy."""
    average_violation: np.ndarray
    mean_violation: float
    gradient_proxy: float
    steps: int


def residual_trace(history: DualHistory) -> ResidualTrace:
    """|1/T sum_t (x + y - d)| per (cache, file) and 2/T sqrt(sum (lambda - mean lambda)^2)."""
    T = history.steps
    if T < 1:
        raise ParameterError("residual trace needs at least one recorded step")
    average = np.abs(history.residual_sum / T)
    mean_lam = history.lam_sum / T
    spread = float(np.sum(np.maximum(history.lam_sq_sum - T * mean_lam ** 2, 0.0)))
    return ResidualTrace(average, float(np.mean(average)), 2.0 * math.sqrt(spread) / T, T)


class DualEngine:
    """Owns the dual state of a run and steps it once per accumulation interval."""

    def __init__(self, network: NetworkConfig, files: int, mu: Optional[float] = None,
                 mode: InitMode = InitMode.FLOOR, custom: Optional[np.ndarray] = None,
                 delta: float = DEFAULT_DELTA, check_kkt: bool = False):
        self.network = network
        self.delta = delta
        self.check_kkt = check_kkt
        self.state = init(network, files, mu, mode, custom)
        self.history = DualHistory(network.caches, files)
        self.flows: Optional[AnticipatedFlows] = None
        self._warned_infeasible = False

    def step(self, demand: DemandMatrix) -> AnticipatedFlows:
        """Primal step at the current prices, then a dual step on ``demand``."""
        feasible = demand.feasible(self.network)
        if not np.all(feasible):
            log = logger.debug if self._warned_infeasible else logger.warning
            self._warned_infeasible = True
            log("t=%d: demand exceeds C^c + C^r at caches %s; price bounds are not guaranteed",
                self.state.t, np.nonzero(~feasible)[0].tolist())
        flows = primal_step(self.state, self.network, self.delta, self.check_kkt)
        self.history.record(self.state, flows, demand)
        self.state = dual_step(self.state, flows, demand)
        self.flows = flows
        return flows

    def snapshot(self) -> DualState:
        """The current state; immutable, safe to hand out."""
        return self.state

    def trace(self) -> ResidualTrace:
        return residual_trace(self.history)
