"""Signal and image restoration experiments.

Signal: recover a piecewise-polynomial signal of length n from p circularly
blurred observations r_k = L_k xbar + w_k with ||w_k||_inf <= eta.  Each
scalar bound -eta <= (L_k x - r_k)_j <= eta is one hyperslab constraint
with an exact projector; the feasibility problem is solved by the
block-iterative algorithm from x0 = 0.

Image: recover an n x n grayscale image from four observations blurred by
one circular Gaussian kernel (std 8) plus uniform([0, 5]) noise.  The
constraints are four residual balls ||r_k - L x||^2 <= xi handled by
subgradient projectors, the pixel box [0, 255], and a known low-frequency
Fourier mask.  The confidence radius is

    xi = n^2 E|u|^2 + 1.96 n sqrt(E|u|^4 - (E|u|^2)^2),   u ~ uniform([0, 5]),

with exact moments E|u|^2 = 25/3 and E|u|^4 = 125, so each ball contains
the true image with 95% confidence (generation records whether it actually
does on this noise draw).

Ground truths are deterministic seeded built-ins (a piecewise-polynomial
signal, a synthetic grayscale image); loaders accept user-supplied ground
truth instead (raw float32 little-endian vectors for signals, 8-bit binary
PGM for images).  Convolution boundary handling is circular throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import relaxation as rx
from .block import BlockConfig, run_block
from .diagnostics import AveragedTrace, aggregate_runs, estimate_reference_solution
from .exceptions import ReferenceSolutionError, UsageError
from .geometry import as_point
from .operators import (
    FqneOperator,
    InequalityConstraint,
    OperatorFamily,
    box_projector,
    fourier_support_projector,
    project_box,
    project_fourier_support,
    subgradient_projector_operator,
    symmetrize_fourier_mask,
)
from .rngstreams import substream
from .trace import ConvergenceTrace

UNIFORM_NOISE_HIGH = 5.0
PIXEL_MAX = 255.0
# exact moments of uniform([0, 5]): E u^2 = 25/3, E u^4 = 125
_EU2 = 25.0 / 3.0
_EU4 = 125.0


def canonical_strategies() -> dict:
    """The four relaxation strategies compared in the experiments."""
    return {
        "const1": rx.Constant(1.0),
        "const1.9": rx.Constant(1.9),
        "twopoint": rx.TwoPoint(2.3, 0.5, 1.5),
        "uniform": rx.UniformInterval(1.5, 2.3),
    }


# ---------------------------------------------------------------------------
# Circular Gaussian convolution.
# ---------------------------------------------------------------------------

def gaussian_kernel_1d(n: int, std: float) -> np.ndarray:
    """Circular zero-mean Gaussian kernel of length n, normalized to sum 1."""
    d = np.minimum(np.arange(n), n - np.arange(n)).astype(np.float64)
    k = np.exp(-0.5 * (d / std) ** 2)
    return k / k.sum()


def gaussian_kernel_2d(n: int, std: float) -> np.ndarray:
    k = gaussian_kernel_1d(n, std)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def circ_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution via the FFT (any matching shape, 1-D or 2-D)."""
    return np.real(np.fft.ifftn(np.fft.fftn(x) * np.fft.fftn(kernel)))


def circulant_row(kernel: np.ndarray, j: int) -> np.ndarray:
    """Row j of the circulant matrix of ``kernel``: row_j[m] = kernel[(j-m) % n]."""
    base = np.roll(kernel[::-1], 1)
    return np.roll(base, j)


# ---------------------------------------------------------------------------
# Signal problem.
# ---------------------------------------------------------------------------

@dataclass
class SignalProblem:
    n: int
    p: int
    eta: float
    stds: np.ndarray                 # (p,)
    kernels: np.ndarray              # (p, n) circular convolution kernels
    observations: np.ndarray         # (p, n)
    ground_truth: np.ndarray         # (n,) used for reporting only
    seed: int

    @property
    def constraint_count(self) -> int:
        return self.n * self.p

    def blur(self, k: int, x: np.ndarray) -> np.ndarray:
        return circ_conv(x, self.kernels[k])

    def slab_bounds(self, k: int, j: int) -> tuple[np.ndarray, float, float]:
        """Normal and bounds of the constraint -eta <= (L_k x - r_k)_j <= eta."""
        a = circulant_row(self.kernels[k], j)
        r = float(self.observations[k, j])
        return a, r - self.eta, r + self.eta

    def build_family(self) -> OperatorFamily:
        """All n*p hyperslab projectors, uniform index distribution.

        Projectors share the per-filter base row (rolled per coordinate) and
        the per-filter squared norm, so the family stays lightweight.
        """
        members = []
        for k in range(self.p):
            base = np.roll(self.kernels[k][::-1], 1)
            norm_sq = float(base @ base)
            for j in range(self.n):
                members.append(_SlabMember(base, norm_sq, j,
                                           float(self.observations[k, j]), self.eta))
        return OperatorFamily(members)

    def max_violation(self, x) -> float:
        """max_{k,j} of dist((L_k x - r_k)_j, [-eta, eta]); <= 0 means feasible."""
        x = as_point(x, "x")
        worst = -np.inf
        for k in range(self.p):
            res = self.blur(k, x) - self.observations[k]
            worst = max(worst, float(np.max(np.abs(res) - self.eta)))
        return worst


class _SlabMember(FqneOperator):
    """Hyperslab projector for one (filter, coordinate) pair.

    The normal is row j of the circulant blur matrix, i.e. the shared base
    row rotated by j; inner products and the projection step use two slice
    dots instead of materializing the rotated row.
    """

    __slots__ = ("base", "norm_sq", "j", "lo", "hi")

    def __init__(self, base, norm_sq, j, r, eta):
        self.base = base
        self.norm_sq = norm_sq
        self.j = j
        self.lo = r - eta
        self.hi = r + eta
        super().__init__(self._project, fix_test=self._fixed, name=f"slab[{j}]")

    def _dot(self, x):
        j = self.j
        base = self.base
        n = base.shape[0]
        # row_j[m] = base[(m - j) % n]
        return float(base[: n - j] @ x[j:]) + float(base[n - j:] @ x[:j])

    def _project(self, x):
        v = self._dot(x)
        if v > self.hi:
            c = (v - self.hi) / self.norm_sq
        elif v < self.lo:
            c = (v - self.lo) / self.norm_sq
        else:
            return x
        j = self.j
        base = self.base
        n = base.shape[0]
        out = x.copy()
        out[j:] -= c * base[: n - j]
        out[:j] -= c * base[n - j:]
        return out

    def _fixed(self, x):
        return self.lo <= self._dot(x) <= self.hi


def piecewise_polynomial_signal(n: int, rng: np.random.Generator,
                                segments: int = 6, max_degree: int = 3) -> np.ndarray:
    """Seeded piecewise-polynomial test signal scaled to [-1, 1]."""
    cuts = np.sort(rng.choice(np.arange(1, n), size=segments - 1, replace=False))
    bounds = np.concatenate(([0], cuts, [n]))
    x = np.empty(n)
    for s in range(segments):
        lo, hi = int(bounds[s]), int(bounds[s + 1])
        t = np.linspace(-1.0, 1.0, hi - lo)
        deg = int(rng.integers(0, max_degree + 1))
        coeffs = rng.uniform(-1.0, 1.0, size=deg + 1)
        x[lo:hi] = np.polyval(coeffs, t)
    peak = float(np.max(np.abs(x)))
    if peak > 0.0:
        x /= peak
    return x


def generate_signal_problem(n: int = 1024, p: int = 20, eta: float = 0.15,
                            std_range: tuple = (10.0, 30.0), seed: int = 0,
                            noise_fill: float = 1.0) -> SignalProblem:
    """Build a seeded signal restoration instance.

    The noise is drawn uniformly in [-noise_fill * eta, noise_fill * eta]
    per coordinate while the slab half-width stays eta, so the ground truth
    satisfies every hyperslab constraint by construction and the feasibility
    problem is consistent.  ``noise_fill = 1`` reproduces the full-width
    protocol; values below 1 leave an interior margin of (1 - noise_fill) eta
    around the truth, which keeps small instances well conditioned.
    """
    if n < 2 or p < 1:
        raise UsageError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if not (eta > 0.0 and math.isfinite(eta)):
        raise UsageError(f"noise bound eta must be positive, got {eta}")
    if not (0.0 < noise_fill <= 1.0):
        raise UsageError(f"noise_fill must lie in ]0, 1], got {noise_fill}")
    lo, hi = float(std_range[0]), float(std_range[1])
    if not (0.0 < lo <= hi < n):
        raise UsageError(f"std_range must satisfy 0 < lo <= hi < n, got {std_range}")
    truth_rng = substream(seed, "ground_truth")
    blur_rng = substream(seed, "blur")
    noise_rng = substream(seed, "observation_noise")
    xbar = piecewise_polynomial_signal(n, truth_rng)
    stds = blur_rng.uniform(lo, hi, size=p)
    kernels = np.stack([gaussian_kernel_1d(n, s) for s in stds])
    bound = noise_fill * eta
    noise = noise_rng.uniform(-bound, bound, size=(p, n))
    observations = np.stack([circ_conv(xbar, kernels[k]) for k in range(p)]) + noise
    return SignalProblem(n, p, eta, stds, kernels, observations, xbar, seed)


def desk_signal_problem(seed: int = 0) -> SignalProblem:
    """Reduced instance for fast runs: n=256, p=10, blur widths scaled with
    n, and noise filling 60% of the slab width so the feasible set keeps a
    real interior (the full-width protocol at this size converges too slowly
    for quick verification runs)."""
    return generate_signal_problem(n=256, p=10, eta=0.15, std_range=(2.5, 7.5),
                                   seed=seed, noise_fill=0.6)


DESK_IMAGE_BLUR_STD = 1.0
DESK_IMAGE_FOURIER_WEIGHT = 2.0


def desk_image_problem(seed: int = 0) -> ImageProblem:
    """Reduced image instance: n=64 with the blur width scaled down.

    Pair with ``build_family(fourier_weight=DESK_IMAGE_FOURIER_WEIGHT)``;
    at this size the unit-relaxation run needs the spectrum constraint
    sampled more often to reach tight feasibility within a short budget.
    """
    return generate_image_problem(n=64, seed=seed, blur_std=DESK_IMAGE_BLUR_STD)


def load_signal_ground_truth(path, n: int) -> np.ndarray:
    """Raw little-endian float32 vector loader for user-supplied signals."""
    data = np.fromfile(path, dtype="<f4")
    if data.size != n:
        raise UsageError(f"signal file holds {data.size} samples, expected {n}")
    return data.astype(np.float64)


# ---------------------------------------------------------------------------
# Image problem.
# ---------------------------------------------------------------------------

@dataclass
class ImageProblem:
    n: int
    xi: float
    kernel: np.ndarray               # (n, n) circular blur kernel
    observations: np.ndarray         # (4, n, n)
    ground_truth: np.ndarray         # (n, n)
    mask: np.ndarray                 # (n, n) bool, conjugate-symmetric
    target_spectrum: np.ndarray      # (n, n) complex, defined on mask
    ball_contains_truth: tuple       # per-observation record (95% by design)
    seed: int

    def __post_init__(self):
        self._kernel_fft = np.fft.fft2(self.kernel)
        self._obs_fft = np.stack([np.fft.fft2(self.observations[k]) for k in range(4)])

    @property
    def dim(self) -> int:
        return self.n * self.n

    def blur_flat(self, x: np.ndarray) -> np.ndarray:
        spec = np.fft.fft2(x.reshape(self.n, self.n)) * self._kernel_fft
        return np.real(np.fft.ifft2(spec)).ravel()

    def blur_adjoint_flat(self, y: np.ndarray) -> np.ndarray:
        spec = np.fft.fft2(y.reshape(self.n, self.n)) * np.conj(self._kernel_fft)
        return np.real(np.fft.ifft2(spec)).ravel()

    def _residual_fft(self, k: int, x: np.ndarray) -> np.ndarray:
        return self._kernel_fft * np.fft.fft2(x.reshape(self.n, self.n)) - self._obs_fft[k]

    def ball_value(self, k: int, x: np.ndarray) -> float:
        """f_k(x) = ||r_k - L x||^2 - xi on flattened points (via Parseval)."""
        res_hat = self._residual_fft(k, x)
        return float(np.vdot(res_hat, res_hat).real) / self.dim - self.xi

    def ball_constraint(self, k: int) -> InequalityConstraint:
        def value(x):
            return self.ball_value(k, x)

        def subgrad(x):
            # 2 L^T (L x - r_k), fused in the frequency domain
            res_hat = self._residual_fft(k, x)
            return 2.0 * np.real(np.fft.ifft2(np.conj(self._kernel_fft) * res_hat)).ravel()

        return InequalityConstraint(value, subgrad, name=f"ball[{k}]")

    def build_family(self, fourier_weight: float = 1.0) -> OperatorFamily:
        """Four ball subgradient projectors, the pixel box, the Fourier mask.

        ``fourier_weight`` sets the relative sampling weight of the
        Fourier-support projector (the other five members keep weight 1).
        Any full-support index law leaves the solution set unchanged;
        sampling the spectrum constraint more often speeds up unit-relaxation
        runs on small instances, where it is the binding constraint.
        """
        members = [subgradient_projector_operator(self.ball_constraint(k)) for k in range(4)]
        members.append(box_projector(0.0, PIXEL_MAX))
        members.append(fourier_support_projector(self.target_spectrum, self.mask))
        if fourier_weight == 1.0:
            return OperatorFamily(members)
        if fourier_weight <= 0.0:
            raise UsageError("fourier_weight must be positive")
        weights = np.array([1.0] * 5 + [float(fourier_weight)])
        return OperatorFamily(members, weights=weights / weights.sum())

    def finalize(self, x: np.ndarray) -> np.ndarray:
        """Terminal cleanup: project onto the Fourier set, then the box.

        The box projection is last, so it holds exactly; the Fourier
        constraint is preserved only up to the drift the clamp introduces.
        """
        grid = project_fourier_support(self.target_spectrum, self.mask,
                                       x.reshape(self.n, self.n))
        return project_box(0.0, PIXEL_MAX, grid.ravel())

    def feasibility_report(self, x: np.ndarray) -> dict:
        x = as_point(x, "x")
        spec = np.fft.fft2(x.reshape(self.n, self.n))
        target_norm = float(np.linalg.norm(self.target_spectrum[self.mask]))
        fourier_dev = float(np.linalg.norm(spec[self.mask] - self.target_spectrum[self.mask]))
        return {
            "ball_values": [self.ball_value(k, x) for k in range(4)],
            "box_violation": float(np.max(np.maximum(x - PIXEL_MAX, 0.0)
                                          + np.maximum(-x, 0.0))),
            "fourier_relative_deviation": fourier_dev / max(1.0, target_norm),
        }


def confidence_radius(n: int) -> float:
    """xi = n^2 E u^2 + 1.96 n sqrt(E u^4 - (E u^2)^2) for u ~ uniform([0, 5])."""
    return n * n * _EU2 + 1.96 * n * math.sqrt(_EU4 - _EU2 ** 2)


def synthetic_image(n: int) -> np.ndarray:
    """Deterministic grayscale test image with values in [0, 255]."""
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    img = 40.0 + 120.0 * (ii + jj) / (2.0 * (n - 1))
    # bright rectangle
    img[n // 8: n // 3, n // 6: n // 2] = 220.0
    # dark rectangle
    img[n // 2: 3 * n // 4, n // 2: 7 * n // 8] = 25.0
    # disk
    rr = (ii - 0.7 * n) ** 2 + (jj - 0.3 * n) ** 2
    img[rr < (0.15 * n) ** 2] = 180.0
    # thin bright line
    img[:, n // 2 - max(1, n // 64): n // 2] = 245.0
    return np.clip(img, 0.0, PIXEL_MAX)


def generate_image_problem(n: int = 256, seed: int = 0, blur_std: float = 8.0) -> ImageProblem:
    """Build a seeded image restoration instance (n must be divisible by 8)."""
    if n % 8 != 0:
        raise UsageError(f"image side must be divisible by 8, got {n}")
    xbar = synthetic_image(n)
    kernel = gaussian_kernel_2d(n, blur_std)
    blurred = circ_conv(xbar, kernel)
    noise_rng = substream(seed, "observation_noise")
    noise = noise_rng.uniform(0.0, UNIFORM_NOISE_HIGH, size=(4, n, n))
    observations = blurred[None, :, :] + noise
    xi = confidence_radius(n)
    contains = tuple(bool(np.sum((observations[k] - blurred) ** 2) <= xi) for k in range(4))
    low = np.zeros((n, n), dtype=bool)
    low[: n // 8, : n // 8] = True
    mask = symmetrize_fourier_mask(low)
    target = np.where(mask, np.fft.fft2(xbar), 0.0 + 0.0j)
    return ImageProblem(n, xi, kernel, observations, xbar, mask, target, contains, seed)


def load_image_ground_truth(path) -> np.ndarray:
    """Binary 8-bit PGM (P5) loader for user-supplied images."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        # skip whitespace and comment lines
        while i < len(data) and data[i: i + 1].isspace():
            i += 1
        if i < len(data) and data[i: i + 1] == b"#":
            while i < len(data) and data[i: i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i: i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise UsageError("expected binary PGM (P5) image")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise UsageError(f"expected 8-bit PGM, got maxval {maxval}")
    pixels = np.frombuffer(data[i + 1: i + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise UsageError("truncated PGM payload")
    return pixels.reshape(height, width).astype(np.float64)


# ---------------------------------------------------------------------------
# Experiment driver.
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    label: str
    seeds: list
    traces: list                       # per-seed ConvergenceTrace
    finals: list                       # per-seed final iterates
    references: list                   # per-seed x_inf or None
    averaged: Optional[AveragedTrace]
    results: list                      # per-seed BlockResult


def run_experiment(problem, block_cfg: BlockConfig, relaxation_label: str,
                   repeats: int = 1, compute_reference: bool = True,
                   strategy: Optional[rx.RelaxationStrategy] = None,
                   family: Optional[OperatorFamily] = None) -> ExperimentResult:
    """Run one relaxation strategy over ``repeats`` seeds from x0 = 0.

    ``relaxation_label`` selects one of the canonical strategies unless an
    explicit ``strategy`` is given.  Each seeded run is performed twice with
    identical draws: an extended pass (10x the budget, early stop at
    residual 1e-12) estimates the run's own limit, then a recording pass
    over the full budget logs the normalized error against it.  When the
    extended pass fails to converge, the dB column is dropped for that seed
    and the residual trace stands in.
    """
    if strategy is None:
        try:
            strategy = canonical_strategies()[relaxation_label]
        except KeyError:
            raise UsageError(
                f"unknown strategy label {relaxation_label!r}; "
                f"known: {sorted(canonical_strategies())}"
            )
    if family is None:
        family = problem.build_family()
    dim = problem.n if isinstance(problem, SignalProblem) else problem.dim
    x0 = np.zeros(dim)
    reference_tol = max(1e-12, block_cfg.atol)

    seeds, traces, finals, refs, results = [], [], [], [], []
    for rep in range(repeats):
        run_seed = _experiment_seed(block_cfg.seed, relaxation_label, rep)
        cfg = replace(block_cfg, relaxation=strategy, seed=run_seed)
        reference = None
        if compute_reference:
            def extended(max_iters, atol, _cfg=cfg):
                res = run_block(family, replace(_cfg, max_iters=max_iters, atol=atol,
                                                record_every=max(1, _cfg.record_every)), x0)
                return res.final, res.trace
            try:
                reference = estimate_reference_solution(extended, cfg.max_iters,
                                                        residual_tol=reference_tol)
            except ReferenceSolutionError:
                reference = None
        record_cfg = replace(cfg, atol=0.0)
        res = run_block(family, record_cfg, x0, reference_solution=reference)
        seeds.append(run_seed)
        traces.append(res.trace)
        finals.append(res.final)
        refs.append(reference)
        results.append(res)

    averaged = None
    if traces and all(t.db_column() is not None for t in traces):
        averaged = aggregate_runs(traces)
    elif traces and all(t.db_column() is None for t in traces):
        averaged = aggregate_runs(traces)
    return ExperimentResult(relaxation_label, seeds, traces, finals, refs, averaged, results)


def _experiment_seed(base_seed: int, label: str, repeat: int) -> int:
    from .rngstreams import derive_seed

    return derive_seed(base_seed, label, repeat)


def iterations_to_db(trace: ConvergenceTrace, threshold_db: float) -> Optional[int]:
    """First recorded iteration at which the dB column crosses the threshold."""
    db = trace.db_column()
    if db is None:
        return None
    below = np.nonzero(db <= threshold_db)[0]
    if below.size == 0:
        return None
    return int(trace.iterations()[below[0]])
