"""First stage: the control function V = F_X(X | Z).

QR fits a coefficient path over an equidistant grid of quantile levels in
[eps, 1 - eps] and integrates the indicator of the fitted quantiles; DR fits
one binary regression of 1(X <= x_m) per threshold and interpolates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cfsf import _backend
from cfsf.data import CoefficientPath, ObservationTable
from cfsf.design import Grid, RegressorSpec, first_stage_design
from cfsf.errors import InvalidInput, NumericalError, Separation
from cfsf.numerics import (
    link_cdf,
    quantile_regression_path,
    solve_binary_mle,
)

# DR control values are kept this far from 0 and 1 so that Φ⁻¹(V) stays finite
V_CLIP = 1e-12


@dataclass(frozen=True)
class TrimRule:
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidInput("trim bounds need lower < upper")

    @property
    def active(self) -> bool:
        return np.isfinite(self.lower) or np.isfinite(self.upper)

    def indicator(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return ((x >= self.lower) & (x <= self.upper)).astype(np.int8)


@dataclass(frozen=True)
class ControlFunctionFit:
    method: str
    path: CoefficientPath
    epsilon: float
    v_hat: np.ndarray
    trim: np.ndarray
    link: str = "logit"
    dropped: tuple = ()


def quantile_grid(M: int, epsilon: float) -> np.ndarray:
    """Equidistant levels eps = v_1 < ... < v_M = 1 - eps."""
    if M < 2:
        raise InvalidInput("grid size M must be at least 2")
    if not 0.0 < epsilon < 0.5:
        raise InvalidInput("epsilon must lie in (0, 0.5)")
    return np.linspace(epsilon, 1.0 - epsilon, M)


def fit_first_stage_qr(table: ObservationTable, weights, spec: RegressorSpec,
                       M: int = 599, epsilon: float = 0.01) -> CoefficientPath:
    levels = quantile_grid(M, epsilon)
    R = first_stage_design(table.z, spec)
    try:
        coef, _ = quantile_regression_path(R, table.x, weights, levels)
    except NumericalError as exc:
        raise type(exc)(f"first-stage QR: {exc}") from exc
    return CoefficientPath(levels, coef)


def qr_control_values(x, R, path: CoefficientPath, epsilon: float) -> np.ndarray:
    """eps + (1 - 2 eps) * (share of grid levels whose fitted quantile is <= x)."""
    R = np.ascontiguousarray(R, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    counts = _backend.kernels.count_rows_below(R, path.coef, x)
    return epsilon + (1.0 - 2.0 * epsilon) * counts / len(path)


def qr_control_value(x: float, z, path: CoefficientPath, epsilon: float,
                     spec: RegressorSpec = RegressorSpec()) -> float:
    R = first_stage_design(np.atleast_1d(np.asarray(z, dtype=float))[None, :], spec)
    return float(qr_control_values([float(x)], R, path, epsilon)[0])


def fit_first_stage_dr(table: ObservationTable, weights, spec: RegressorSpec,
                       x_grid: Grid, link: str = "logit"):
    """Per-threshold binary regressions of 1(X <= x_m) on r(Z).

    Thresholds where every positively weighted row falls on one side carry
    no information and are skipped; thresholds where the fit separates are
    dropped with a warning. Returns ``(path, dropped_thresholds)``.
    """
    R = first_stage_design(table.z, spec)
    w = np.ones(table.n) if weights is None else np.asarray(weights, dtype=float)
    pos = w > 0
    grid, coefs, dropped = [], [], []
    for xm in x_grid.points:
        d = (table.x <= xm).astype(float)
        frac = d[pos].mean()
        if frac == 0.0 or frac == 1.0:
            continue
        try:
            b, _ = solve_binary_mle(R, d, w, link)
        except Separation:
            dropped.append(float(xm))
            continue
        grid.append(xm)
        coefs.append(b)
    if len(grid) < 2:
        raise Separation("first-stage DR: fewer than two estimable thresholds")
    if dropped:
        warnings.warn(f"first-stage DR: dropped {len(dropped)} separated threshold(s)")
    return CoefficientPath(np.array(grid), np.array(coefs)), tuple(dropped)


def dr_control_values(x, R, path: CoefficientPath, link: str) -> np.ndarray:
    """Γ(r(z)'π(x)) with π interpolated along the threshold grid.

    The index profile m -> r(z)'π(x_m) is sorted before interpolating so the
    result is nondecreasing in x (rearrangement; a no-op for monotone
    profiles, where this equals Γ of the interpolated coefficients).
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(R, dtype=float) @ path.coef.T
    bad = np.any(np.diff(eta, axis=1) < 0, axis=1)
    if np.any(bad):
        eta[bad] = np.sort(eta[bad], axis=1)
    grid = path.grid
    M = grid.shape[0]
    idx = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, M - 2)
    lo, hi = grid[idx], grid[idx + 1]
    frac = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    rows = np.arange(x.shape[0])
    e = eta[rows, idx] * (1.0 - frac) + eta[rows, idx + 1] * frac
    e = np.where(x >= hi, eta[rows, idx + 1], e)
    return np.clip(link_cdf(e, link), V_CLIP, 1.0 - V_CLIP)


def dr_control_value(x: float, z, path: CoefficientPath, link: str = "logit",
                     spec: RegressorSpec = RegressorSpec()) -> float:
    R = first_stage_design(np.atleast_1d(np.asarray(z, dtype=float))[None, :], spec)
    return float(dr_control_values(np.array([float(x)]), R, path, link)[0])


def control_function(table: ObservationTable, weights, spec: RegressorSpec, *,
                     method: str = "qr", M: int = 599, epsilon: float = 0.01,
                     link: str = "logit", trim: TrimRule = TrimRule(),
                     x_grid: Grid | None = None) -> ControlFunctionFit:
    """Fit the first stage and evaluate V̂_i at every kept observation.

    Rows outside the trim interval get ``(V̂_i, T_i) = (0, 0)``.
    """
    T = trim.indicator(table.x)
    R = first_stage_design(table.z, spec)
    v = np.zeros(table.n)
    keep = T.astype(bool)
    if method == "qr":
        path = fit_first_stage_qr(table, weights, spec, M, epsilon)
        v[keep] = qr_control_values(table.x[keep], R[keep], path, epsilon)
        dropped = ()
    elif method == "dr":
        if x_grid is None:
            from cfsf.design import make_grid
            x_grid = make_grid(table.x, M, "sample_quantile")
        path, dropped = fit_first_stage_dr(table, weights, spec, x_grid, link)
        v[keep] = dr_control_values(table.x[keep], R[keep], path, link)
    else:
        raise InvalidInput(f"unknown first-stage method {method!r}")
    return ControlFunctionFit(method, path, epsilon, v, T, link, dropped)
