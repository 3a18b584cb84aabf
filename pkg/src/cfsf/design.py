"""Regressor construction for both stages, evaluation grids, rank checks.

Second-stage rows are Kronecker products ``p(x) ⊗ r1(z1_1) ⊗ ... ⊗ q(v)``
with ``q`` varying fastest, then the covariate factors, then ``p``. With the
default transforms and one covariate the coordinate order is::

    (1, Φ⁻¹(v), z1, z1·Φ⁻¹(v), x, x·Φ⁻¹(v), x·z1, x·z1·Φ⁻¹(v))

The control transform ``q`` acts on ``Φ⁻¹(v)``, not on ``v`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import ndtri

from cfsf.errors import InvalidInput
from cfsf.numerics import empirical_quantile

KINDS = ("raw_plus_intercept", "polynomial", "cubic_bspline")
RANK_THRESHOLD = 1e-10


@dataclass(frozen=True)
class TransformSpec:
    """Basis expansion of one scalar variable, always spanning constants.

    ``raw_plus_intercept`` gives (1, v); ``polynomial`` gives (1, v, ..., v^degree);
    ``cubic_bspline`` gives the ``n_knots + 4`` cubic B-splines on the interior
    ``knots`` and boundary ``bounds`` (a partition of unity). Spline knots are
    filled in from data by :meth:`fitted` unless supplied.
    """

    kind: str = "raw_plus_intercept"
    degree: int = 1
    n_knots: int = 4
    knots: tuple[float, ...] | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown transform kind {self.kind!r}")
        if self.degree < 1:
            raise InvalidInput("polynomial degree must be >= 1")
        if self.n_knots < 1:
            raise InvalidInput("spline needs at least one knot")
        if self.knots is not None:
            if len(self.knots) != self.n_knots:
                object.__setattr__(self, "n_knots", len(self.knots))
            if np.any(np.diff(self.knots) <= 0):
                raise InvalidInput("spline knots must be strictly increasing")

    @property
    def dim(self) -> int:
        if self.kind == "raw_plus_intercept":
            return 2
        if self.kind == "polynomial":
            return self.degree + 1
        return self.n_knots + 4

    @property
    def resolved(self) -> bool:
        return self.kind != "cubic_bspline" or (self.knots is not None and self.bounds is not None)

    def fitted(self, values) -> TransformSpec:
        """Fix spline knots at sample quantiles (equidistant probabilities) of ``values``."""
        if self.resolved:
            return self
        v = np.asarray(values, dtype=float)
        lo, hi = float(v.min()), float(v.max())
        if not hi > lo:
            raise InvalidInput("cannot place spline knots on a constant variable")
        bounds = self.bounds or (lo, hi)
        knots = self.knots
        if knots is None:
            probs = np.arange(1, self.n_knots + 1) / (self.n_knots + 1)
            knots = tuple(empirical_quantile(v, p) for p in probs)
            if np.any(np.diff(knots) <= 0) or knots[0] <= bounds[0] or knots[-1] >= bounds[1]:
                knots = tuple(np.linspace(bounds[0], bounds[1], self.n_knots + 2)[1:-1])
        return replace(self, knots=tuple(float(k) for k in knots), bounds=bounds)

    def basis(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float).reshape(-1)
        if self.kind == "raw_plus_intercept":
            return np.column_stack([np.ones_like(v), v])
        if self.kind == "polynomial":
            return v[:, None] ** np.arange(self.degree + 1)
        if not self.resolved:
            raise InvalidInput("spline transform has no knots; call fitted() first")
        lo, hi = self.bounds
        t = np.concatenate([[lo] * 4, self.knots, [hi] * 4])
        vv = np.clip(v, lo, hi)
        return BSpline.design_matrix(vv, t, 3).toarray()


DEFAULT = TransformSpec()


@dataclass(frozen=True)
class RegressorSpec:
    """Transforms for the first stage ``r(Z)`` and second stage ``w(X, Z1, V)``.

    The first stage is additive across instrument components with a single
    intercept. ``covariates`` holds one transform per Z1 component; when it is
    shorter than the number of components the last entry (or the default)
    is reused.
    """

    first_stage: TransformSpec = DEFAULT
    treatment: TransformSpec = DEFAULT
    covariates: tuple[TransformSpec, ...] = ()
    control: TransformSpec = DEFAULT

    def covariate(self, j: int) -> TransformSpec:
        if not self.covariates:
            return DEFAULT
        return self.covariates[min(j, len(self.covariates) - 1)]

    def fitted(self, x, z1, z) -> RegressorSpec:
        """Resolve any data-dependent knot placement."""
        z1 = np.asarray(z1, dtype=float).reshape(len(x), -1)
        z = np.asarray(z, dtype=float).reshape(len(x), -1)
        # first-stage spline knots are shared across instrument components
        first = self.first_stage.fitted(z.ravel())
        covs = tuple(self.covariate(j).fitted(z1[:, j]) for j in range(z1.shape[1]))
        return replace(self, first_stage=first, treatment=self.treatment.fitted(x),
                       covariates=covs if covs else self.covariates)

    def second_stage_dim(self, n_covariates: int) -> int:
        dim = self.treatment.dim * self.control.dim
        for j in range(n_covariates):
            dim *= self.covariate(j).dim
        return dim


def _row_kron(a, b):
    n = a.shape[0]
    return (a[:, :, None] * b[:, None, :]).reshape(n, -1)


def first_stage_design(z, spec: RegressorSpec) -> np.ndarray:
    """Rows ``r(z_i)``: intercept followed by each component's non-constant basis."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if not np.all(np.isfinite(z)):
        raise InvalidInput("instruments contain non-finite values")
    cols = [np.ones((z.shape[0], 1))]
    for j in range(z.shape[1]):
        cols.append(spec.first_stage.basis(z[:, j])[:, 1:])
    return np.hstack(cols)


def build_first_stage_row(z, spec: RegressorSpec = RegressorSpec()) -> np.ndarray:
    return first_stage_design(np.atleast_1d(np.asarray(z, dtype=float))[None, :], spec)[0]


def second_stage_design(x, z1, v, spec: RegressorSpec) -> np.ndarray:
    """Rows ``w(x_i, z1_i, v_i)`` for arrays of equal length (v strictly in (0, 1))."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.shape[0]
    v = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    if np.any((v <= 0) | (v >= 1)):
        raise InvalidInput("control values must lie strictly inside (0, 1)")
    z1 = np.asarray(z1, dtype=float)
    if z1.size == 0:
        z1 = np.empty((n, 0))
    elif z1.ndim == 1:
        # a single covariate vector shared by every row
        z1 = np.broadcast_to(z1, (n, z1.shape[0]))
    return _row_kron(spec.treatment.basis(x), _inner_rows(z1, v, spec))


def _inner_rows(z1, v, spec):
    out = spec.control.basis(ndtri(v))
    for j in reversed(range(z1.shape[1])):
        out = _row_kron(spec.covariate(j).basis(z1[:, j]), out)
    return out


def inner_design(z1, v, spec: RegressorSpec) -> np.ndarray:
    """Rows ``r1(z1_i) ⊗ q(v_i)``: the second-stage row without the treatment factor.

    For a fixed treatment value x, ``w(x, z1, v)'β = inner(z1, v)'B(x)`` where
    :func:`contract_treatment` builds ``B(x)``.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if np.any((v <= 0) | (v >= 1)):
        raise InvalidInput("control values must lie strictly inside (0, 1)")
    z1 = np.asarray(z1, dtype=float).reshape(v.shape[0], -1)
    return _inner_rows(z1, v, spec)


def contract_treatment(coef, x: float, spec: RegressorSpec) -> np.ndarray:
    """Coefficient rows (M × dim) contracted with p(x), giving M × dim/len(p)."""
    coef = np.asarray(coef, dtype=float)
    p = spec.treatment.basis([float(x)])[0]
    M, k = coef.shape
    blocks = coef.reshape(M, p.shape[0], k // p.shape[0])
    return np.ascontiguousarray(np.einsum("mpr,p->mr", blocks, p))


def build_second_stage_row(x, z1, v, spec: RegressorSpec = RegressorSpec()) -> np.ndarray:
    z1 = np.atleast_1d(np.asarray(z1, dtype=float)).reshape(1, -1)
    if not 0.0 < float(v) < 1.0:
        raise InvalidInput("control value must lie strictly inside (0, 1)")
    return second_stage_design([x], z1, [v], spec)[0]


def check_full_rank(design, threshold: float = RANK_THRESHOLD):
    """Smallest eigenvalue of ``design' design / n`` and whether it exceeds ``threshold``."""
    D = np.asarray(design, dtype=float)
    n, k = D.shape
    if n < k:
        return 0.0, False
    eig = float(np.linalg.eigvalsh(D.T @ D / n)[0])
    return eig, bool(eig > threshold)


@dataclass(frozen=True)
class Grid:
    points: np.ndarray = field(repr=False)
    placement: str = "equidistant"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def equidistant(self) -> bool:
        return self.placement == "equidistant"

    @property
    def delta(self) -> float:
        return float((self.points[-1] - self.points[0]) / (self.size - 1)) if self.size > 1 else 0.0


def make_grid(data_or_bounds, size: int, placement: str = "sample_quantile",
              prob_range=(0.0, 1.0)) -> Grid:
    """Evaluation grid.

    ``sample_quantile`` takes ``empirical_quantile(data, p)`` at ``size``
    equidistant probabilities spanning ``prob_range``; ties are collapsed, so
    the returned grid can be shorter than ``size`` on discrete data.
    ``equidistant`` spans ``data_or_bounds = (lo, hi)`` with width
    ``(hi - lo) / (size - 1)``.
    """
    if size < 2:
        raise InvalidInput("grid size must be at least 2")
    if placement == "equidistant":
        lo, hi = (float(b) for b in data_or_bounds)
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise InvalidInput(f"degenerate grid bounds ({lo}, {hi})")
        return Grid(np.linspace(lo, hi, size), "equidistant")
    if placement == "sample_quantile":
        data = np.asarray(data_or_bounds, dtype=float).reshape(-1)
        p0, p1 = prob_range
        probs = p0 + (p1 - p0) * np.arange(size) / (size - 1)
        srt = np.sort(data)
        pts = np.array([_sorted_quantile(srt, p) for p in probs])
        pts = np.unique(pts)
        if pts.shape[0] < 2:
            raise InvalidInput("sample-quantile grid collapsed to a single point")
        return Grid(pts, "sample_quantile")
    if placement == "support":
        pts = np.unique(np.asarray(data_or_bounds, dtype=float))
        if pts.shape[0] < 2:
            raise InvalidInput("support grid needs at least two distinct values")
        return Grid(pts, "support")
    raise InvalidInput(f"unknown grid placement {placement!r}")


def _sorted_quantile(srt, p):
    # same rule as numerics.empirical_quantile, on presorted data
    m = srt.shape[0]
    j = min(max(math.ceil(Fraction(repr(float(p))) * m), 1), m)
    return float(srt[j - 1])
