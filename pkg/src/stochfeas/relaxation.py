"""Relaxation strategies: distributions for the per-iteration relaxation draw.

A strategy is an immutable distribution with positive support, closed-form
moments, and a declared cap ``rho >= 2`` bounding its support from above.
The key derived quantity is the damping ``E[lam (2 - lam)]``, which decides
which algorithms accept the strategy:

* super-relaxed runs require ``E[lam (2 - lam)] >= 0`` (strictly positive
  when an inf-positivity margin is demanded),
* runs with relaxations bounded by 2 require support inside ]0, 2[.

Moments are always computed in closed form; sampling exists only to drive
iterations.  Strategies are immutable and shareable across threads; the
generators passed to :func:`sample` are single-owner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError, UsageError

ALGORITHM_SUPER_RELAXED = "super_relaxed"      # random lam, damping >= 0
ALGORITHM_BOUNDED_BY_TWO = "bounded_by_two"    # support inside ]0, 2[
ALGORITHM_BLOCK_ITERATIVE = "block_iterative"  # support in ]0, rho], damping margin

_ALGORITHMS = (ALGORITHM_SUPER_RELAXED, ALGORITHM_BOUNDED_BY_TWO, ALGORITHM_BLOCK_ITERATIVE)


@dataclass(frozen=True)
class RelaxationMoments:
    """Closed-form moments: mean E[lam], E[lam^2], and E[lam (2 - lam)]."""

    mean: float
    second_moment: float
    damping: float = field(init=False)

    def __post_init__(self):
        # damping is defined through the identity so it holds exactly
        object.__setattr__(self, "damping", 2.0 * self.mean - self.second_moment)


@dataclass(frozen=True)
class ValidationReport:
    accepted: bool
    reason: str
    mu: float       # E[lam (2 - lam)]
    zeta: float     # E[lam^2]


class RelaxationStrategy:
    """Base class; concrete strategies define support bounds, moments, draws."""

    cap: float

    def support_bounds(self) -> tuple[float, float]:
        """Return (inf, sup) of the support."""
        raise NotImplementedError

    def moments(self) -> RelaxationMoments:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    def _check_cap(self, cap: Optional[float]) -> float:
        lo, hi = self.support_bounds()
        if lo <= 0.0:
            raise UsageError(f"relaxation support must be positive, got inf {lo}")
        cap = max(2.0, hi) if cap is None else float(cap)
        if cap < 2.0:
            raise UsageError(f"declared cap rho must be >= 2, got {cap}")
        if hi > cap:
            raise UsageError(f"support sup {hi} exceeds declared cap {cap}")
        return cap


@dataclass(frozen=True)
class Constant(RelaxationStrategy):
    """Degenerate strategy lam = value on every draw."""

    value: float
    cap: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0.0):
            raise UsageError(f"constant relaxation must be positive, got {self.value}")
        object.__setattr__(self, "cap", self._check_cap(self.cap))

    def support_bounds(self):
        return (self.value, self.value)

    def moments(self):
        return RelaxationMoments(self.value, self.value ** 2)

    def sample(self, rng):
        return self.value

    def to_config(self):
        return {"kind": "constant", "value": self.value, "cap": self.cap}


@dataclass(frozen=True)
class TwoPoint(RelaxationStrategy):
    """Two-point strategy: value_a with probability prob_a, else value_b."""

    value_a: float
    prob_a: float
    value_b: float
    cap: Optional[float] = None

    def __post_init__(self):
        for name, v in (("value_a", self.value_a), ("value_b", self.value_b)):
            if not (np.isfinite(v) and v > 0.0):
                raise UsageError(f"{name} must be positive, got {v}")
        if not (0.0 <= self.prob_a <= 1.0):
            raise UsageError(f"prob_a must lie in [0, 1], got {self.prob_a}")
        object.__setattr__(self, "cap", self._check_cap(self.cap))

    def support_bounds(self):
        return (min(self.value_a, self.value_b), max(self.value_a, self.value_b))

    def moments(self):
        p = self.prob_a
        mean = p * self.value_a + (1.0 - p) * self.value_b
        second = p * self.value_a ** 2 + (1.0 - p) * self.value_b ** 2
        return RelaxationMoments(mean, second)

    def sample(self, rng):
        return self.value_a if rng.random() < self.prob_a else self.value_b

    def to_config(self):
        return {"kind": "two_point", "a": self.value_a, "p_a": self.prob_a,
                "b": self.value_b, "cap": self.cap}


@dataclass(frozen=True)
class UniformInterval(RelaxationStrategy):
    """Uniform strategy on [lo, hi] with 0 < lo < hi."""

    lo: float
    hi: float
    cap: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and 0.0 < self.lo < self.hi):
            raise UsageError(f"uniform interval requires 0 < lo < hi, got [{self.lo}, {self.hi}]")
        object.__setattr__(self, "cap", self._check_cap(self.cap))

    def support_bounds(self):
        return (self.lo, self.hi)

    def moments(self):
        mean = 0.5 * (self.lo + self.hi)
        second = (self.lo ** 2 + self.lo * self.hi + self.hi ** 2) / 3.0
        return RelaxationMoments(mean, second)

    def sample(self, rng):
        return self.lo + (self.hi - self.lo) * rng.random()

    def to_config(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi, "cap": self.cap}


def moments(strategy: RelaxationStrategy) -> RelaxationMoments:
    """Closed-form moments of a strategy (never estimated by sampling)."""
    return strategy.moments()


def sample(strategy: RelaxationStrategy, rng: np.random.Generator) -> float:
    """Draw one relaxation value from the strategy's dedicated stream."""
    return strategy.sample(rng)


def validate_for_algorithm(
    strategy: RelaxationStrategy,
    algorithm: str,
    require_positive_damping: bool = False,
) -> ValidationReport:
    """Check the side condition the named algorithm imposes on the strategy.

    ``super_relaxed`` and ``block_iterative`` accept iff the damping
    ``E[lam (2 - lam)]`` is >= 0 (strictly > 0 when
    ``require_positive_damping`` is set, matching an inf-positivity margin
    ``mu > 0``).  ``bounded_by_two`` accepts iff the support lies strictly
    inside ]0, 2[.  The report carries ``mu`` (the damping) and ``zeta``
    (the second moment) for rate computations.
    """
    if algorithm not in _ALGORITHMS:
        raise UsageError(f"unknown algorithm {algorithm!r}; expected one of {_ALGORITHMS}")
    m = strategy.moments()
    lo, hi = strategy.support_bounds()
    if algorithm == ALGORITHM_BOUNDED_BY_TWO:
        if hi >= 2.0:
            return ValidationReport(False, f"support sup {hi} not strictly below 2", m.damping, m.second_moment)
        if lo <= 0.0:
            return ValidationReport(False, f"support inf {lo} not strictly positive", m.damping, m.second_moment)
        return ValidationReport(True, "support inside ]0, 2[", m.damping, m.second_moment)
    if require_positive_damping:
        if m.damping <= 0.0:
            return ValidationReport(
                False, f"E[lam(2-lam)] = {m.damping:.6g} is not > 0", m.damping, m.second_moment
            )
    elif m.damping < 0.0:
        return ValidationReport(
            False, f"E[lam(2-lam)] = {m.damping:.6g} < 0", m.damping, m.second_moment
        )
    return ValidationReport(True, f"E[lam(2-lam)] = {m.damping:.6g}", m.damping, m.second_moment)


def require_support_inside(strategy: RelaxationStrategy, lo: float, hi: float, what: str) -> None:
    """Raise ConfigurationError unless the support lies strictly inside ]lo, hi[."""
    s_lo, s_hi = strategy.support_bounds()
    if not (s_lo > lo and s_hi < hi):
        raise ConfigurationError(
            f"{what}: support [{s_lo}, {s_hi}] not inside ]{lo}, {hi}["
        )


def strategy_from_config(obj: dict) -> RelaxationStrategy:
    """Build a strategy from its tagged-object serialization."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise UsageError("relaxation config must be an object with a 'kind' field")
    kind = obj["kind"]
    try:
        if kind == "constant":
            return Constant(float(obj["value"]), cap=obj.get("cap"))
        if kind == "two_point":
            return TwoPoint(float(obj["a"]), float(obj["p_a"]), float(obj["b"]), cap=obj.get("cap"))
        if kind == "uniform":
            return UniformInterval(float(obj["lo"]), float(obj["hi"]), cap=obj.get("cap"))
    except KeyError as exc:
        raise UsageError(f"relaxation config for kind {kind!r} missing field {exc}") from exc
    raise UsageError(f"unknown relaxation kind {kind!r}")


def strategy_label(strategy: RelaxationStrategy) -> str:
    """Short deterministic label used in output file names."""
    if isinstance(strategy, Constant):
        return f"const{strategy.value:g}"
    if isinstance(strategy, TwoPoint):
        return f"twopoint{strategy.value_a:g}-{strategy.prob_a:g}-{strategy.value_b:g}"
    if isinstance(strategy, UniformInterval):
        return f"uniform{strategy.lo:g}-{strategy.hi:g}"
    return type(strategy).__name__.lower()
