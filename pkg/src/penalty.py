"""
Convex link-cost functions for the cache path and the root path.

Each family exposes its value, derivative, inverse derivative and the
curvature constants (m, L) that the dual step-size and price bounds rely on.
All functions accept scalars or numpy arrays.
"""
import logging
import math
from dataclasses import dataclass, replace, asdict
from enum import Enum
from typing import NamedTuple, Optional, Union

import numpy as np

try:
    from .errors import BelowRangeError, ConfigError, PenaltyDomainError
except ImportError:
    from errors import BelowRangeError, ConfigError, PenaltyDomainError


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Width of the final bracket in the bisection used to invert h'.
BISECTION_XTOL = 1e-12
BISECTION_MAX_ITER = 200

# Upper bracket for inverting delay-type derivatives that blow up at the link capacity.
_CAP_GUARD = 1e-12


class PenaltyFamily(Enum):
    """Supported penalty families, named as in experiment config files."""
    QUADRATIC = "quadratic"
    LINEAR_QUADRATIC = "linquad"
    KLEINROCK = "kleinrock"
    MM1 = "mm1"


class PenaltyConstants(NamedTuple):
    """Strong-convexity modulus, derivative Lipschitz constant and h'(0)."""
    m: float
    L: float
    d0: float


@dataclass(frozen=True)
class PenaltySpec:
    """An immutable penalty function h with the interval it is analysed on.

    Only the parameters of ``family`` are meaningful:
    quadratic ``(a/2)x^2 + b``, linquad ``w x + x^2/2``,
    kleinrock ``x/(cap - x)``, mm1 ``k x/(cap - x) + k0`` up to ``x_max``
    and quadratic extrapolation beyond.
    """
    family: PenaltyFamily
    a: float = 1.0
    b: float = 0.0
    w: float = 0.0
    cap: float = math.inf
    k: float = 1.0
    k0: float = 0.0
    x_max: Optional[float] = None
    domain_max: float = math.inf

    def __post_init__(self):
        family = self.family
        if family is PenaltyFamily.QUADRATIC:
            if not self.a > 0:
                raise ConfigError(f"quadratic penalty needs a > 0 for strict convexity, got a={self.a}")
            if self.b < 0:
                raise ConfigError(f"quadratic offset b must be >= 0, got b={self.b}")
        elif family is PenaltyFamily.LINEAR_QUADRATIC:
            if self.w < 0:
                raise ConfigError(f"linquad price w must be >= 0, got w={self.w}")
        elif family is PenaltyFamily.KLEINROCK:
            if not (0 < self.cap < math.inf):
                raise ConfigError(f"kleinrock penalty needs a finite cap > 0, got cap={self.cap}")
        elif family is PenaltyFamily.MM1:
            if not (0 < self.cap < math.inf):
                raise ConfigError(f"mm1 penalty needs a finite cap > 0, got cap={self.cap}")
            if not self.k > 0 or self.k0 < 0:
                raise ConfigError(f"mm1 penalty needs k > 0 and k0 >= 0, got k={self.k}, k0={self.k0}")
            if self.x_max is None or not (0 < self.x_max < self.cap):
                raise ConfigError(f"mm1 penalty needs 0 < x_max < cap, got x_max={self.x_max}")
        if not self.domain_max > 0:
            raise ConfigError(f"domain_max must be positive, got {self.domain_max}")

    @classmethod
    def quadratic(cls, a: float = 1.0, b: float = 0.0, domain_max: float = math.inf) -> 'PenaltySpec':
        return cls(PenaltyFamily.QUADRATIC, a=a, b=b, domain_max=domain_max)

    @classmethod
    def linquad(cls, w: float = 0.0, domain_max: float = math.inf) -> 'PenaltySpec':
        return cls(PenaltyFamily.LINEAR_QUADRATIC, w=w, domain_max=domain_max)

    @classmethod
    def kleinrock(cls, cap: float, domain_max: float = math.inf) -> 'PenaltySpec':
        return cls(PenaltyFamily.KLEINROCK, cap=cap, domain_max=domain_max)

    @classmethod
    def mm1(cls, cap: float, k: float = 1.0, k0: float = 0.0, x_max: Optional[float] = None,
            domain_max: float = math.inf) -> 'PenaltySpec':
        if x_max is None:
            x_max = 0.9 * cap
        return cls(PenaltyFamily.MM1, cap=cap, k=k, k0=k0, x_max=x_max, domain_max=domain_max)

    def with_domain(self, domain_max: float) -> 'PenaltySpec':
        """Return a copy analysed on [0, domain_max]."""
        return replace(self, domain_max=domain_max)

    @property
    def is_affine_inverse(self) -> bool:
        """True when h'^{-1} is affine, so water-filling has a closed form."""
        return self.family in (PenaltyFamily.QUADRATIC, PenaltyFamily.LINEAR_QUADRATIC)

    @property
    def slope(self) -> float:
        """Second derivative of the affine-inverse families."""
        if self.family is PenaltyFamily.QUADRATIC:
            return self.a
        if self.family is PenaltyFamily.LINEAR_QUADRATIC:
            return 1.0
        raise ConfigError(f"{self.family.value} penalty has no constant curvature")

    _PARAMS = {
        PenaltyFamily.QUADRATIC: ("a", "b"),
        PenaltyFamily.LINEAR_QUADRATIC: ("w",),
        PenaltyFamily.KLEINROCK: ("cap",),
        PenaltyFamily.MM1: ("k", "k0", "cap", "x_max"),
    }

    def describe(self) -> str:
        """Render as ``family key=value ...``, the form accepted by parse()."""
        params = [f"{name}={getattr(self, name):g}" for name in self._PARAMS[self.family]]
        if math.isfinite(self.domain_max):
            params.append(f"domain_max={self.domain_max:g}")
        return " ".join([self.family.value] + params)

    @classmethod
    def parse(cls, text: str) -> 'PenaltySpec':
        """Parse ``family key=value ...`` as written in config files."""
        tokens = text.split()
        if not tokens:
            raise ConfigError("empty penalty specification")
        try:
            family = PenaltyFamily(tokens[0].lower())
        except ValueError:
            names = ", ".join(f.value for f in PenaltyFamily)
            raise ConfigError(f"unknown penalty family '{tokens[0]}' (expected one of {names})")
        allowed = set(cls._PARAMS[family]) | {"domain_max"}
        params = {}
        for token in tokens[1:]:
            key, sep, value = token.partition("=")
            if not sep or key not in allowed:
                raise ConfigError(f"bad parameter '{token}' for {family.value} penalty")
            try:
                params[key] = float(value)
            except ValueError:
                raise ConfigError(f"parameter {key} of {family.value} penalty is not a number: {value}")
        if family is PenaltyFamily.MM1:
            if "cap" not in params:
                raise ConfigError("mm1 penalty needs cap=...")
            return cls.mm1(**params)
        if family is PenaltyFamily.KLEINROCK and "cap" not in params:
            raise ConfigError("kleinrock penalty needs cap=...")
        return cls(family, **params)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        data = asdict(self)
        data['family'] = self.family.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'PenaltySpec':
        """Create PenaltySpec from dictionary."""
        data = dict(data)
        data['family'] = PenaltyFamily(data['family'])
        return cls(**data)


def _as_array(x: ArrayLike) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _like(x: ArrayLike, out: np.ndarray) -> ArrayLike:
    return float(out) if np.ndim(x) == 0 else out


def _check_domain(spec: PenaltySpec, x: np.ndarray):
    if x.size == 0:
        return
    if np.any(np.isnan(x)) or np.min(x) < 0:
        raise PenaltyDomainError(f"{spec.family.value} penalty evaluated below its domain: x must be >= 0")
    if np.max(x) > spec.domain_max:
        raise PenaltyDomainError(
            f"{spec.family.value} penalty evaluated above domain_max={spec.domain_max:g} "
            f"(x={float(np.max(x)):g})")
    if spec.family in (PenaltyFamily.KLEINROCK, PenaltyFamily.MM1) and np.max(x) >= spec.cap:
        raise PenaltyDomainError(
            f"{spec.family.value} penalty evaluated at or above cap={spec.cap:g} (x={float(np.max(x)):g})")


def _delay(spec: PenaltySpec, x: np.ndarray):
    """Value, first and second derivative of k x/(cap - x)."""
    gap = spec.cap - x
    scale = spec.k if spec.family is PenaltyFamily.MM1 else 1.0
    return scale * x / gap, scale * spec.cap / gap ** 2, 2.0 * scale * spec.cap / gap ** 3


def _mm1_terms(spec: PenaltySpec, x: np.ndarray):
    """Value, derivative and curvature of the clamped M/M/1 penalty."""
    inside = np.minimum(x, spec.x_max)
    value, first, second = _delay(spec, inside)
    v_edge, d_edge, c_edge = _delay(spec, np.float64(spec.x_max))
    excess = np.maximum(x - spec.x_max, 0.0)
    beyond = x > spec.x_max
    value = np.where(beyond, v_edge + d_edge * excess + 0.5 * c_edge * excess ** 2, value) + spec.k0
    first = np.where(beyond, d_edge + c_edge * excess, first)
    second = np.where(beyond, c_edge, second)
    return value, first, second


def evaluate(spec: PenaltySpec, x: ArrayLike) -> ArrayLike:
    """Return h(x)."""
    arr = _as_array(x)
    _check_domain(spec, arr)
    family = spec.family
    if family is PenaltyFamily.QUADRATIC:
        out = 0.5 * spec.a * arr ** 2 + spec.b
    elif family is PenaltyFamily.LINEAR_QUADRATIC:
        out = spec.w * arr + 0.5 * arr ** 2
    elif family is PenaltyFamily.KLEINROCK:
        out = _delay(spec, arr)[0]
    else:
        out = _mm1_terms(spec, arr)[0]
    return _like(x, out)


def _deriv_unchecked(spec: PenaltySpec, arr: np.ndarray) -> np.ndarray:
    family = spec.family
    if family is PenaltyFamily.QUADRATIC:
        return spec.a * arr
    if family is PenaltyFamily.LINEAR_QUADRATIC:
        return spec.w + arr
    if family is PenaltyFamily.KLEINROCK:
        return _delay(spec, arr)[1]
    return _mm1_terms(spec, arr)[1]


def deriv(spec: PenaltySpec, x: ArrayLike) -> ArrayLike:
    """Return h'(x)."""
    arr = _as_array(x)
    _check_domain(spec, arr)
    return _like(x, _deriv_unchecked(spec, arr))


def curvature(spec: PenaltySpec, x: ArrayLike) -> ArrayLike:
    """Return h''(x)."""
    arr = _as_array(x)
    _check_domain(spec, arr)
    family = spec.family
    if family is PenaltyFamily.QUADRATIC:
        out = np.full_like(arr, spec.a)
    elif family is PenaltyFamily.LINEAR_QUADRATIC:
        out = np.ones_like(arr)
    elif family is PenaltyFamily.KLEINROCK:
        out = _delay(spec, arr)[2]
    else:
        out = _mm1_terms(spec, arr)[2]
    return _like(x, out)


def marginal_at_zero(spec: PenaltySpec) -> float:
    """h'(0)."""
    return float(_deriv_unchecked(spec, np.float64(0.0)))


def _bisect_inverse(spec: PenaltySpec, g: np.ndarray) -> np.ndarray:
    # h' is strictly increasing on [0, cap), so bisection on x brackets the root.
    lo = np.zeros_like(g)
    hi = np.full_like(g, spec.cap * (1.0 - _CAP_GUARD))
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        above = _deriv_unchecked(spec, mid) >= g
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= BISECTION_XTOL):
            break
    return 0.5 * (lo + hi)


def inv_deriv(spec: PenaltySpec, g: ArrayLike) -> ArrayLike:
    """Return the volume x with h'(x) = g.

    Closed form for the quadratic families, monotone bisection for the delay
    families. Raises BelowRangeError when g < h'(0); callers apply the
    positive-part clamp themselves.
    """
    arr = _as_array(g)
    d0 = marginal_at_zero(spec)
    if arr.size and (np.any(np.isnan(arr)) or np.min(arr) < d0):
        raise BelowRangeError(
            f"marginal cost {float(np.nanmin(arr)):g} is below h'(0)={d0:g} for {spec.family.value} penalty")
    family = spec.family
    if family is PenaltyFamily.QUADRATIC:
        out = arr / spec.a
    elif family is PenaltyFamily.LINEAR_QUADRATIC:
        out = arr - spec.w
    else:
        out = _bisect_inverse(spec, arr)
    return _like(g, out)


def constants(spec: PenaltySpec) -> PenaltyConstants:
    """Return (m, L, h'(0)) on [0, domain_max].

    Raises ConfigError when L is not finite, e.g. a delay penalty analysed up
    to or beyond its link capacity.
    """
    family = spec.family
    d0 = marginal_at_zero(spec)
    if family is PenaltyFamily.QUADRATIC:
        return PenaltyConstants(spec.a, spec.a, d0)
    if family is PenaltyFamily.LINEAR_QUADRATIC:
        return PenaltyConstants(1.0, 1.0, d0)
    if family is PenaltyFamily.KLEINROCK:
        if not spec.domain_max < spec.cap:
            raise ConfigError(
                f"kleinrock penalty has no finite Lipschitz constant on [0, {spec.domain_max:g}] "
                f"with cap={spec.cap:g}; set domain_max below cap")
        m = float(_delay(spec, np.float64(0.0))[2])
        L = float(_delay(spec, np.float64(spec.domain_max))[2])
        return PenaltyConstants(m, L, d0)
    m = float(_mm1_terms(spec, np.float64(0.0))[2])
    L = float(_mm1_terms(spec, np.float64(min(spec.domain_max, spec.x_max)))[2])
    return PenaltyConstants(m, L, d0)
