"""Randomly relaxed fixed point drivers.

Three iterations on top of one loop skeleton:

* relaxed iteration with stochastic errors for a nonexpansive T,
      x_{n+1} = x_n + mu_n (T x_n + e_n - x_n),     mu_n in ]0, 1[;
* the alpha-averaged variant, identical recursion with mu_n in ]0, 1/alpha[;
* stochastic gradient descent for a 1/beta-Lipschitz-gradient objective,
      x_{n+1} = x_n - gamma_n grad g_{k_n}(x_n),    gamma_n = 2 beta / (n + 1)^nu,
  with nu in ]2/3, 1] and an unbiased, bounded-variance gradient family.

Relaxation draws come from the run's "relaxation" substream and noise draws
from the "noise" substream, so mu_n is independent of the noise sigma-algebra
by stream separation.  Draw order per iteration is fixed: error first, then
relaxation.  A run is single-threaded and owns its streams; distinct runs
never share state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import relaxation as rx
from .exceptions import ConfigurationError, NumericError, UsageError
from .geometry import as_point
from .operators import OperatorFamily, sample_index
from .rngstreams import substream
from .trace import ConvergenceTrace

DIVERGENCE_NORM = 1e12


# ---------------------------------------------------------------------------
# Error schedules.
# ---------------------------------------------------------------------------

class ZeroErrors:
    """No perturbation; trivially summable."""

    declares_summable = True

    def sample(self, n, dim, rng):
        return None  # solvers skip the addition entirely

    def describe(self):
        return "zero"


class DecayingNoise:
    """Bounded gaussian-like noise with ||e_n|| <= c / (n + 1)^q.

    The direction is an isotropic gaussian draw with norm capped at 1.  The
    schedule certifies sum_n sqrt(E||e_n||^2) < inf iff q > 1, which with a
    fixed relaxation distribution is exactly the summability requirement
    sum_n sqrt(E mu_n^2  E||e_n||^2) < inf.
    """

    def __init__(self, c: float, q: float):
        if not (c > 0.0 and math.isfinite(c)):
            raise UsageError(f"noise scale c must be positive, got {c}")
        if not math.isfinite(q):
            raise UsageError(f"noise decay q must be finite, got {q}")
        self.c = float(c)
        self.q = float(q)

    @property
    def declares_summable(self):
        return self.q > 1.0

    def sample(self, n, dim, rng):
        g = rng.standard_normal(dim)
        norm = float(np.linalg.norm(g))
        if norm > 1.0:
            g /= norm
        return (self.c / (n + 1.0) ** self.q) * g

    def describe(self):
        return f"decaying(c={self.c:g}, q={self.q:g})"


def _check_schedule_certificate(schedule) -> None:
    declared = getattr(schedule, "declares_summable", None)
    if declared is None:
        raise ConfigurationError(
            "error schedule must declare its summability certificate "
            "(attribute declares_summable)"
        )
    if not declared:
        raise ConfigurationError(
            "summability certificate violated: "
            "sum_n sqrt(E mu_n^2 E||e_n||^2) diverges for the configured schedule"
        )


# ---------------------------------------------------------------------------
# Configurations.
# ---------------------------------------------------------------------------

@dataclass
class KmConfig:
    """Configuration of the relaxed fixed point runs.

    ``cut_tolerance`` is the per-iteration slack allowed in the cut-validity
    condition.  No supported method instantiates it with a nonzero value, so
    it is pinned to zero and rejected otherwise.
    """

    mu_strategy: rx.RelaxationStrategy
    max_iters: int
    seed: int
    error_schedule: object = field(default_factory=ZeroErrors)
    atol: float = 1e-10
    record_every: int = 1
    cut_tolerance: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        if self.cut_tolerance != 0.0:
            raise ConfigurationError("nonzero cut tolerances are not supported")
        _check_schedule_certificate(self.error_schedule)

    def validate_plain(self):
        rx.require_support_inside(self.mu_strategy, 0.0, 1.0, "mu_n in ]0, 1[ violated")

    def validate_averaged(self, alpha: float):
        if not (0.0 < alpha < 1.0):
            raise ConfigurationError(f"averagedness constant must lie in ]0, 1[, got {alpha}")
        rx.require_support_inside(
            self.mu_strategy, 0.0, 1.0 / alpha, f"mu_n in ]0, 1/alpha[ = ]0, {1.0 / alpha:g}[ violated"
        )


@dataclass
class SgdConfig:
    """Configuration of the stochastic gradient runs."""

    beta: float
    nu: float
    max_iters: int
    seed: int
    gradient_family: "GradientFamily"
    atol: float = 0.0
    record_every: int = 1
    spot_check_samples: int = 10_000

    def __post_init__(self):
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not (2.0 / 3.0 < self.nu <= 1.0):
            raise ConfigurationError(f"nu in ]2/3, 1] violated: got {self.nu}")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")

    def step_size(self, n: int) -> float:
        return 2.0 * self.beta / (n + 1.0) ** self.nu


class GradientFamily:
    """Indexed stochastic gradients with a sampler and declared variance bound.

    ``gradients`` maps an index to the callable grad g_k.  ``mean_gradient``
    is the deterministic grad f when available (used for trace residuals and
    the unbiasedness spot-check).  ``variance_bound`` is the declared xi with
    E||grad g_k(x) - grad f(x)||^2 <= xi.
    """

    def __init__(self, gradients: Sequence[Callable], mean_gradient: Optional[Callable],
                 variance_bound: float, weights=None):
        if not gradients:
            raise UsageError("gradient family needs at least one member")
        if not (variance_bound >= 0.0 and math.isfinite(variance_bound)):
            raise UsageError(f"variance bound must be finite and >= 0, got {variance_bound}")
        self._family = OperatorFamily(list(gradients), weights=weights)
        self.mean_gradient = mean_gradient
        self.variance_bound = float(variance_bound)

    def __len__(self):
        return len(self._family)

    def draw(self, rng) -> int:
        return sample_index(self._family, rng)

    def gradient(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._family.apply(k, x), dtype=np.float64)

    def spot_check_unbiased(self, x0: np.ndarray, rng, samples: int) -> None:
        """Monte-Carlo check that the sample mean gradient at x0 is within
        3 sigma of the declared mean gradient, sigma = sqrt(xi / m)."""
        if self.mean_gradient is None:
            return
        acc = np.zeros_like(x0)
        for _ in range(samples):
            acc += self.gradient(self.draw(rng), x0)
        acc /= samples
        target = np.asarray(self.mean_gradient(x0), dtype=np.float64)
        dev = float(np.linalg.norm(acc - target))
        bound = 3.0 * math.sqrt(max(self.variance_bound, 1e-300) / samples)
        if dev > bound and self.variance_bound > 0.0:
            raise ConfigurationError(
                f"unbiasedness spot-check failed at x0: |mean - grad f| = {dev:.3e} "
                f"> 3 sqrt(xi/m) = {bound:.3e}"
            )
        if self.variance_bound == 0.0 and dev > 1e-9 * (1.0 + float(np.linalg.norm(target))):
            raise ConfigurationError(
                f"zero-variance family deviates from mean gradient by {dev:.3e}"
            )


def quadratic_family(center, offsets) -> GradientFamily:
    """Built-in family for f(x) = ||x - c||^2 / 2 with grad g_k(x) = x - c - w_k.

    Offsets are recentred to zero mean so the family is exactly unbiased;
    the variance bound is max_k ||w_k||^2.
    """
    center = as_point(center, "center")
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 2 or offsets.shape[1] != center.shape[0]:
        raise UsageError("offsets must be a (K, dim) array matching the center")
    offsets = offsets - offsets.mean(axis=0)
    xi = float(np.max(np.sum(offsets ** 2, axis=1)))
    gradients = [
        (lambda w: (lambda x: x - center - w))(offsets[k]) for k in range(offsets.shape[0])
    ]
    return GradientFamily(gradients, lambda x: x - center, xi)


# ---------------------------------------------------------------------------
# Drivers.
# ---------------------------------------------------------------------------

def _guard(x: np.ndarray, n: int) -> None:
    # NaN/Inf propagate into the squared norm, so one reduction covers both
    norm_sq = float(x @ x)
    if not math.isfinite(norm_sq) or norm_sq > DIVERGENCE_NORM ** 2:
        raise NumericError(f"iterate diverged at iteration {n}")


def _relaxed_loop(T, cfg: KmConfig, x0) -> tuple[np.ndarray, ConvergenceTrace]:
    x = as_point(x0, "x0").copy()
    noise_rng = substream(cfg.seed, "noise")
    mu_rng = substream(cfg.seed, "relaxation")
    trace = ConvergenceTrace()
    start = time.perf_counter()
    stop_reason = "max_iters"
    n = -1
    for n in range(cfg.max_iters):
        tx = np.asarray(T(x), dtype=np.float64)
        step = tx - x
        residual = math.sqrt(float(step @ step))
        e = cfg.error_schedule.sample(n, x.shape[0], noise_rng)
        mu = rx.sample(cfg.mu_strategy, mu_rng)
        if e is not None:
            step = step + e
        x = x + mu * step
        _guard(x, n)
        if n % cfg.record_every == 0 or residual < cfg.atol:
            trace.append(n, time.perf_counter() - start, residual, None, mu, 1.0)
        if residual < cfg.atol:
            stop_reason = "atol"
            break
    trace.footer.update(
        stop_reason=stop_reason, atol=cfg.atol, iterations_run=n + 1,
        errors=cfg.error_schedule.describe() if hasattr(cfg.error_schedule, "describe") else "custom",
    )
    return x, trace


def run_km(T, cfg: KmConfig, x0) -> tuple[np.ndarray, ConvergenceTrace]:
    """Relaxed iteration x_{n+1} = x_n + mu_n (T x_n + e_n - x_n) for
    nonexpansive T, with mu_n supported inside ]0, 1[."""
    cfg.validate_plain()
    return _relaxed_loop(T, cfg, x0)


def run_km_averaged(T, alpha: float, cfg: KmConfig, x0) -> tuple[np.ndarray, ConvergenceTrace]:
    """Same recursion for an alpha-averaged T, allowing mu_n inside ]0, 1/alpha[."""
    cfg.validate_averaged(alpha)
    return _relaxed_loop(T, cfg, x0)


def run_sgd(cfg: SgdConfig, x0) -> tuple[np.ndarray, ConvergenceTrace]:
    """Stochastic gradient descent with steps gamma_n = 2 beta / (n + 1)^nu.

    The trace residual column holds ||grad f(x_n)|| when the family declares
    its mean gradient, else the norm of the sampled gradient.
    """
    x = as_point(x0, "x0").copy()
    family = cfg.gradient_family
    family.spot_check_unbiased(x, substream(cfg.seed, "validation"), cfg.spot_check_samples)
    idx_rng = substream(cfg.seed, "index")
    trace = ConvergenceTrace()
    start = time.perf_counter()
    stop_reason = "max_iters"
    mean_grad = family.mean_gradient
    n = -1
    for n in range(cfg.max_iters):
        gamma = cfg.step_size(n)
        k = family.draw(idx_rng)
        g = family.gradient(k, x)
        if mean_grad is not None:
            gf = np.asarray(mean_grad(x), dtype=np.float64)
            residual = math.sqrt(float(gf @ gf))
        else:
            residual = math.sqrt(float(g @ g))
        x = x - gamma * g
        _guard(x, n)
        if n % cfg.record_every == 0 or residual < cfg.atol:
            trace.append(n, time.perf_counter() - start, residual, None, gamma, 1.0)
        if residual < cfg.atol:
            stop_reason = "atol"
            break
    trace.footer.update(stop_reason=stop_reason, atol=cfg.atol, iterations_run=n + 1)
    return x, trace
