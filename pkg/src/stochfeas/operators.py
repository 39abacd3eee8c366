"""Firmly quasinonexpansive operator toolbox.

Exact projectors (box, hyperslab, Fourier support), subgradient projectors
built from convex inequality functions, and indexed operator families with
reproducible categorical index sampling.

Every built-in projector P satisfies P(P(x)) = P(x) and the firm
quasinonexpansiveness inequality

    ||T x - z||^2 + ||T x - x||^2 <= ||x - z||^2   for all z in Fix T.

Operators are immutable after construction and safe to apply concurrently;
index-sampling generators are single-owner.  The demiclosedness of Id - T
at 0, assumed by the convergence theory, is an analytic property of the
supplied maps and is not checked at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DegenerateConstraintError, NumericError, UsageError
from .geometry import as_point, require_same_dim


class FqneOperator:
    """A firmly quasinonexpansive map with an optional fixed-set membership test.

    ``fix_test`` is used only by tests and audits, never by solvers.
    """

    __slots__ = ("_apply", "fix_test", "name")

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray],
                 fix_test: Optional[Callable[[np.ndarray], bool]] = None,
                 name: str = ""):
        self._apply = apply
        self.fix_test = fix_test
        self.name = name

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._apply(x)

    def __repr__(self):
        return f"FqneOperator({self.name or self._apply!r})"


@dataclass(frozen=True)
class InequalityConstraint:
    """A convex inequality f(x) <= 0 with a subgradient selection s(x)."""

    value: Callable[[np.ndarray], float]
    subgradient: Callable[[np.ndarray], np.ndarray]
    name: str = ""


def subgradient_projector(constraint: InequalityConstraint, x) -> np.ndarray:
    """Apply the subgradient projector of ``constraint`` at ``x``.

    Returns ``x`` when f(x) <= 0, otherwise

        x - f(x) / ||s(x)||^2 * s(x).

    The output lands in the half-space {z : f(x) + <s(x), z - x> <= 0},
    which contains the level set {f <= 0}; firm quasinonexpansiveness with
    respect to that set follows.
    """
    x = as_point(x, "x")
    fx = float(constraint.value(x))
    if fx <= 0.0:
        return x
    s = as_point(constraint.subgradient(x), "subgradient")
    require_same_dim(s, x, "subgradient_projector")
    norm_sq = float(s @ s)
    if norm_sq == 0.0:
        raise DegenerateConstraintError(
            f"constraint {constraint.name or '?'}: f(x) = {fx} > 0 but s(x) = 0"
        )
    return x - (fx / norm_sq) * s


def subgradient_projector_operator(constraint: InequalityConstraint) -> FqneOperator:
    return FqneOperator(
        lambda x: subgradient_projector(constraint, x),
        fix_test=lambda x: float(constraint.value(as_point(x))) <= 0.0,
        name=f"G[{constraint.name}]" if constraint.name else "G[f]",
    )


def project_box(lo, hi, x) -> np.ndarray:
    """Componentwise clamp of ``x`` to the box [lo, hi]."""
    x = as_point(x, "x")
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), x.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), x.shape)
    if np.any(lo > hi):
        raise UsageError("box bounds require lo <= hi componentwise")
    return np.minimum(np.maximum(x, lo), hi)


def box_projector(lo, hi) -> FqneOperator:
    return FqneOperator(
        lambda x: project_box(lo, hi, x),
        fix_test=lambda x: bool(np.all(x >= np.asarray(lo)) and np.all(x <= np.asarray(hi))),
        name="proj_box",
    )


def project_hyperslab(a, lo: float, hi: float, x) -> np.ndarray:
    """Project ``x`` onto the hyperslab {z : lo <= <a, z> <= hi}.

    With lo == hi this is the hyperplane projection.
    """
    a = as_point(a, "a")
    x = as_point(x, "x")
    require_same_dim(a, x, "project_hyperslab")
    if lo > hi:
        raise UsageError(f"hyperslab requires lo <= hi, got [{lo}, {hi}]")
    norm_sq = float(a @ a)
    if norm_sq == 0.0:
        raise UsageError("hyperslab normal must be nonzero")
    v = float(a @ x)
    if v > hi:
        return x - ((v - hi) / norm_sq) * a
    if v < lo:
        return x - ((v - lo) / norm_sq) * a
    return x


def hyperslab_projector(a, lo: float, hi: float, name: str = "proj_slab") -> FqneOperator:
    a = as_point(a, "a")
    return FqneOperator(
        lambda x: project_hyperslab(a, lo, hi, x),
        fix_test=lambda x: lo <= float(a @ as_point(x)) <= hi,
        name=name,
    )


def halfspace_projector(a, b: float, name: str = "proj_halfspace") -> FqneOperator:
    """Projector onto {z : <a, z> <= b}."""
    return hyperslab_projector(a, -np.inf, b, name=name)


# ---------------------------------------------------------------------------
# Fourier-support projector.
#
# DFT convention: unnormalized forward transform (numpy fft2) with 1/N^2 on
# the inverse.  Real input forces the conjugate symmetry
# F[u, v] = conj(F[(-u) mod n, (-v) mod n]); masks must be closed under the
# index mirror (u, v) -> ((-u) mod n, (-v) mod n).
# ---------------------------------------------------------------------------

def _mirror_indices(n_rows: int, n_cols: int):
    u = np.arange(n_rows).reshape(-1, 1)
    v = np.arange(n_cols).reshape(1, -1)
    return (-u) % n_rows, (-v) % n_cols


def symmetrize_fourier_mask(mask) -> np.ndarray:
    """Close a boolean frequency mask under the real-DFT conjugate mirror."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise UsageError("Fourier mask must be a 2-D boolean grid")
    mu, mv = _mirror_indices(*mask.shape)
    return mask | mask[mu, mv]


def validate_fourier_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise UsageError("Fourier mask must be a 2-D boolean grid")
    mu, mv = _mirror_indices(*mask.shape)
    if not np.array_equal(mask, mask[mu, mv]):
        raise UsageError("Fourier mask is not closed under conjugate symmetry")
    return mask


def project_fourier_support(target_spectrum, mask, x) -> np.ndarray:
    """Replace the DFT of ``x`` on the masked frequencies by ``target_spectrum``.

    ``x`` is a real 2-D grid.  The output is real; the imaginary residue of
    the inverse transform is verified against 1e-9 (relative to the grid
    scale) before being discarded.
    """
    mask = validate_fourier_mask(mask)
    target = np.asarray(target_spectrum, dtype=np.complex128)
    if target.shape != mask.shape:
        raise UsageError("target spectrum and mask shapes differ")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != mask.shape:
        raise UsageError(f"grid shape {x.shape} does not match mask shape {mask.shape}")
    if not np.all(np.isfinite(x)):
        raise UsageError("grid contains non-finite entries")
    mu, mv = _mirror_indices(*mask.shape)
    mirrored = np.conj(target[mu, mv])
    scale = max(1.0, float(np.max(np.abs(target[mask]), initial=0.0)))
    if np.max(np.abs((target - mirrored)[mask]), initial=0.0) > 1e-9 * scale:
        raise UsageError("target spectrum is not conjugate-symmetric on the mask")
    spectrum = np.fft.fft2(x)
    spectrum[mask] = target[mask]
    out = np.fft.ifft2(spectrum)
    residue = float(np.max(np.abs(out.imag)))
    tol = 1e-9 * max(1.0, float(np.max(np.abs(out.real))))
    if residue > tol:
        raise NumericError(f"imaginary residue {residue:.3e} exceeds {tol:.3e}")
    return np.ascontiguousarray(out.real)


def fourier_support_projector(target_spectrum, mask, grid_shape=None) -> FqneOperator:
    """Fourier-support projector acting on row-major flattened grids."""
    mask = validate_fourier_mask(mask)
    shape = mask.shape if grid_shape is None else grid_shape

    def apply(x):
        return project_fourier_support(target_spectrum, mask, np.reshape(x, shape)).ravel()

    def fix(x):
        spec = np.fft.fft2(np.reshape(x, shape))
        return bool(np.allclose(spec[mask], np.asarray(target_spectrum)[mask],
                                rtol=1e-9, atol=1e-9))

    return FqneOperator(apply, fix_test=fix, name="proj_fourier")


# ---------------------------------------------------------------------------
# Indexed operator families.
# ---------------------------------------------------------------------------

class OperatorFamily:
    """A finite indexed family of operators with an index distribution.

    Members may be ``FqneOperator`` instances or plain callables.  Weights
    default to uniform; they must be nonnegative and sum to 1 within 1e-12.
    """

    def __init__(self, members: Sequence, weights=None):
        members = list(members)
        if not members:
            raise UsageError("operator family needs at least one member")
        self.members = members
        if weights is None:
            weights = np.full(len(members), 1.0 / len(members))
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (len(members),):
                raise UsageError("index weights must match the number of members")
            if np.any(weights < 0.0):
                raise UsageError("index weights must be nonnegative")
            if abs(float(weights.sum()) - 1.0) > 1e-12:
                raise UsageError(f"index weights sum to {weights.sum()!r}, not 1")
        self.weights = weights
        self._cum = np.cumsum(weights)
        self._cum[-1] = 1.0

    def __len__(self):
        return len(self.members)

    def member(self, k: int):
        return self.members[k]

    def apply(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.members[k](x)


def sample_index(family: OperatorFamily, rng: np.random.Generator) -> int:
    """Draw one index from the family's distribution (inverse CDF on one uniform)."""
    if len(family) == 1:
        return 0
    return int(np.searchsorted(family._cum, rng.random(), side="right"))
