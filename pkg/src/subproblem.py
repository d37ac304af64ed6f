"""
Per-cache primal subproblem:

    u = argmin_{u >= 0} sum_f h(u_f) - lambda^T u   s.t.  1^T u <= C

solved by water-filling on the prices. With g_f(z) = h'^{-1}(lambda_f - z) the
optimum is [g_f(0)]_+ when that fits, otherwise [g_f(v)]_+ where v >= 0 makes
the total flow equal C.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

try:
    from .errors import ParameterError
    from .penalty import PenaltySpec, deriv, inv_deriv, marginal_at_zero
except ImportError:
    from errors import ParameterError
    from penalty import PenaltySpec, deriv, inv_deriv, marginal_at_zero


logger = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-9


class Backend(Enum):
    """Solver backends."""
    AUTO = "auto"
    WATERFILL = "waterfill"
    BISECTION = "bisection"


@dataclass(frozen=True)
class SubproblemInstance:
    """Prices, capacity and penalty of one subproblem."""
    prices: np.ndarray
    capacity: float
    penalty: PenaltySpec

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 1 or prices.size == 0:
            raise ParameterError("subproblem needs a non-empty price vector")
        if not np.all(np.isfinite(prices)):
            raise ParameterError("subproblem prices must be finite")
        if not self.capacity > 0:
            raise ParameterError(f"subproblem capacity must be positive, got {self.capacity}")
        object.__setattr__(self, 'prices', prices)


@dataclass(frozen=True)
class SubproblemSolution:
    """Optimal flows, the capacity multiplier and whether the capacity binds."""
    flows: np.ndarray
    multiplier: float
    saturated: bool


def g(penalty: PenaltySpec, lam: Union[float, np.ndarray], z: float) -> Union[float, np.ndarray]:
    """Pre-clamp flow h'^{-1}(lam - z).

    Where lam - z < h'(0) the affine families return their (negative) linear
    extension and the delay families return -inf; only [g]_+ is ever used.
    """
    target = np.asarray(lam, dtype=float) - z
    d0 = marginal_at_zero(penalty)
    if penalty.is_affine_inverse:
        out = (target - d0) / penalty.slope
    else:
        valid = target >= d0
        out = np.full_like(target, -np.inf)
        if np.any(valid):
            out[valid] = inv_deriv(penalty, target[valid])
    return float(out) if np.ndim(lam) == 0 else out


def _clamped_total(penalty: PenaltySpec, prices: np.ndarray, z: float) -> np.ndarray:
    return np.maximum(g(penalty, prices, z), 0.0)


def _waterfill(inst: SubproblemInstance, start: np.ndarray) -> SubproblemSolution:
    """Sorted water-filling for penalties with an affine inverse derivative.

    Prices are scanned in ascending order (ties by file index); at each step
    either the active set's common level solves the capacity equation or the
    lowest active file is dropped.
    """
    penalty = inst.penalty
    d0 = marginal_at_zero(penalty)
    slope = penalty.slope
    prices = inst.prices
    order = np.argsort(prices, kind='stable')
    sorted_prices = prices[order]

    active = start[order] > 0
    k = int(np.count_nonzero(~active))
    active_sum = float(np.sum(sorted_prices[k:]))
    n_active = prices.size - k
    level = 0.0
    while n_active > 0:
        # rho(z) = (sum_active lambda - n_active (z + d0)) / slope
        edge = sorted_prices[k] - d0
        rho_at_edge = (active_sum - n_active * (edge + d0)) / slope
        if rho_at_edge <= inst.capacity:
            level = (active_sum - slope * inst.capacity) / n_active - d0
            break
        active_sum -= sorted_prices[k]
        n_active -= 1
        k += 1

    flows = np.zeros_like(prices)
    if n_active > 0:
        top = order[k:]
        flows[top] = np.maximum((prices[top] - level - d0) / slope, 0.0)
    return SubproblemSolution(flows, max(level, 0.0), True)


def _bisection(inst: SubproblemInstance, delta: float) -> SubproblemSolution:
    """Bisection on the capacity multiplier over [0, max lambda - h'(0)]."""
    penalty = inst.penalty
    lo = 0.0
    hi = float(np.max(inst.prices)) - marginal_at_zero(penalty)
    flows = _clamped_total(penalty, inst.prices, hi)
    while hi - lo > delta or inst.capacity - float(np.sum(flows)) > delta:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        trial = _clamped_total(penalty, inst.prices, mid)
        if float(np.sum(trial)) > inst.capacity:
            lo = mid
        else:
            hi, flows = mid, trial
    return SubproblemSolution(flows, hi, True)


def solve(inst: SubproblemInstance, delta: float = DEFAULT_DELTA,
          backend: Backend = Backend.AUTO) -> SubproblemSolution:
    """Solve one subproblem to accuracy delta.

    AUTO uses water-filling for the quadratic families and bisection for the
    delay families. The returned flows never exceed the capacity.
    """
    if not delta > 0:
        raise ParameterError(f"solver tolerance must be positive, got {delta}")
    backend = Backend(backend)
    start = _clamped_total(inst.penalty, inst.prices, 0.0)
    total = float(np.sum(start))
    if total <= inst.capacity:
        return SubproblemSolution(start, 0.0, total >= inst.capacity - delta)
    if backend is Backend.AUTO:
        backend = Backend.WATERFILL if inst.penalty.is_affine_inverse else Backend.BISECTION
    if backend is Backend.WATERFILL:
        if not inst.penalty.is_affine_inverse:
            raise ParameterError(f"water-filling needs an affine inverse derivative, "
                                 f"not a {inst.penalty.family.value} penalty")
        return _waterfill(inst, start)
    return _bisection(inst, delta)


def solve_row(prices: Sequence[float], capacity: float, penalty: PenaltySpec,
              delta: float = DEFAULT_DELTA) -> SubproblemSolution:
    """Convenience wrapper building the instance from its parts."""
    return solve(SubproblemInstance(np.asarray(prices, dtype=float), capacity, penalty), delta)


def verify_kkt(inst: SubproblemInstance, sol: SubproblemSolution) -> float:
    """Largest violation of the optimality conditions; zero at the optimum.

    Covers primal feasibility, complementary slackness and per-file
    stationarity, with the bound multiplier recovered for clamped files.
    """
    flows = np.asarray(sol.flows, dtype=float)
    if flows.shape != inst.prices.shape:
        raise ParameterError(f"solution has {flows.size} flows for {inst.prices.size} prices")
    upsilon = float(sol.multiplier)
    total = float(np.sum(flows))
    residuals = [
        max(0.0, total - inst.capacity),
        max(0.0, -float(np.min(flows))),
        max(0.0, -upsilon),
        abs(upsilon * (total - inst.capacity)),
    ]
    penalty = inst.penalty
    d0 = marginal_at_zero(penalty)
    positive = flows > 0
    if np.any(positive):
        inside = np.minimum(flows[positive], penalty.domain_max)
        if penalty.cap < np.inf:
            inside = np.minimum(inside, penalty.cap * (1.0 - 1e-12))
        grad = deriv(penalty, inside) - inst.prices[positive] + upsilon
        residuals.append(float(np.max(np.abs(grad))))
    clamped = ~positive
    if np.any(clamped):
        # xi_f = max(0, h'(0) - lambda_f + v); the stationarity gap is what xi cannot absorb.
        gap = d0 - inst.prices[clamped] + upsilon
        xi = np.maximum(0.0, gap)
        residuals.append(float(np.max(np.abs(gap - xi))))
    return max(residuals)
