"""Second stage: reduced-form conditional CDF of Y given (X, Z1, V).

Only kept rows (T_i = 1, positive weight) enter the fits, so trimmed rows
have no influence at all on the coefficients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cfsf import _backend
from cfsf.data import CoefficientPath, ObservationTable
from cfsf.design import Grid, RegressorSpec, check_full_rank, second_stage_design
from cfsf.errors import EmptyAfterTrim, NumericalError, RankDeficient, Separation
from cfsf.first_stage import ControlFunctionFit, quantile_grid
from cfsf.numerics import link_cdf, quantile_regression_path, solve_binary_mle


@dataclass(frozen=True)
class SecondStageFit:
    """Fitted reduced-form path.

    For DR, ``fixed[m]`` is NaN where a regression was fitted and 0 or 1 at
    thresholds where every kept row fell on one side (the coefficient row is
    then zero and unused).
    """

    method: str
    path: CoefficientPath
    epsilon: float
    spec: RegressorSpec
    link: str = "logit"
    fixed: np.ndarray | None = None
    dropped: tuple = ()

    @property
    def grid(self) -> np.ndarray:
        return self.path.grid


def kept_rows(table: ObservationTable, weights, cf: ControlFunctionFit):
    """Indices of rows with T_i = 1 and positive weight, and their weights."""
    w = np.ones(table.n) if weights is None else np.asarray(weights, dtype=float)
    idx = np.flatnonzero((cf.trim == 1) & (w > 0))
    if idx.shape[0] == 0:
        raise EmptyAfterTrim("no observations left after trimming")
    return idx, w[idx]


def _kept_design(table, weights, cf, spec):
    idx, w = kept_rows(table, weights, cf)
    W = second_stage_design(table.x[idx], table.z1[idx], cf.v_hat[idx], spec)
    eig, ok = check_full_rank(W)
    if not ok:
        raise RankDeficient(
            f"second-stage design is rank deficient (min eigenvalue {eig:.3g})", eig)
    return idx, w, W


def fit_second_stage_qr(table: ObservationTable, weights, cf: ControlFunctionFit,
                        spec: RegressorSpec, M: int = 599,
                        epsilon: float = 0.01) -> SecondStageFit:
    idx, w, W = _kept_design(table, weights, cf, spec)
    levels = quantile_grid(M, epsilon)
    try:
        coef, _ = quantile_regression_path(W, table.y[idx], w, levels)
    except NumericalError as exc:
        raise type(exc)(f"second-stage QR: {exc}") from exc
    return SecondStageFit("qr", CoefficientPath(levels, coef), epsilon, spec)


def fit_second_stage_dr(table: ObservationTable, weights, cf: ControlFunctionFit,
                        spec: RegressorSpec, y_grid: Grid,
                        link: str = "logit") -> SecondStageFit:
    """One binary regression of 1(Y <= y_m) per threshold, on kept rows.

    Thresholds below every kept Y get the fixed value 0, those at or above
    every kept Y get 1. Separated thresholds are dropped with a warning.
    """
    idx, w, W = _kept_design(table, weights, cf, spec)
    y = table.y[idx]
    grid, coefs, fixed, dropped = [], [], [], []
    zero = np.zeros(W.shape[1])
    for ym in y_grid.points:
        d = (y <= ym).astype(float)
        frac = d.mean()
        if frac == 0.0 or frac == 1.0:
            grid.append(ym)
            coefs.append(zero)
            fixed.append(frac)
            continue
        try:
            b, _ = solve_binary_mle(W, d, w, link)
        except Separation:
            dropped.append(float(ym))
            continue
        grid.append(ym)
        coefs.append(b)
        fixed.append(np.nan)
    if not np.any(np.isnan(fixed)):
        raise Separation("second-stage DR: no estimable threshold")
    if dropped:
        warnings.warn(f"second-stage DR: dropped {len(dropped)} separated threshold(s)")
    path = CoefficientPath(np.array(grid), np.array(coefs))
    return SecondStageFit("dr", path, 0.0, spec, link, np.array(fixed), tuple(dropped))


def _row(x, z1, v, spec):
    z1 = np.atleast_1d(np.asarray(z1, dtype=float)).reshape(1, -1)
    return second_stage_design([float(x)], z1, [float(v)], spec)


def qr_reduced_cdf(y: float, x: float, z1, v: float, fit: SecondStageFit) -> float:
    """eps + (1 - 2 eps) * (share of fitted quantiles w(x, z1, v)'β(u_m) <= y)."""
    W = _row(x, z1, v, fit.spec)
    count = _backend.kernels.count_rows_below(W, fit.path.coef, np.array([float(y)]))
    return fit.epsilon + (1.0 - 2.0 * fit.epsilon) * count[0] / len(fit.path)


def dr_probabilities(W, fit: SecondStageFit) -> np.ndarray:
    """Γ(W β(y_m)) for every row of ``W`` and every grid threshold."""
    P = link_cdf(np.asarray(W, dtype=float) @ fit.path.coef.T, fit.link)
    fx = ~np.isnan(fit.fixed)
    P[:, fx] = fit.fixed[fx]
    return P


def dr_reduced_cdf(y: float, x: float, z1, v: float, fit: SecondStageFit) -> float:
    """Fitted CDF at the largest grid threshold not above ``y`` (0 left of the grid)."""
    m = int(np.searchsorted(fit.grid, float(y), side="right")) - 1
    if m < 0:
        return 0.0
    if not np.isnan(fit.fixed[m]):
        return float(fit.fixed[m])
    eta = _row(x, z1, v, fit.spec)[0] @ fit.path.coef[m]
    return float(link_cdf(eta, fit.link))


def reduced_cdf(y, x, z1, v, fit: SecondStageFit) -> float:
    if fit.method == "qr":
        return qr_reduced_cdf(y, x, z1, v, fit)
    return dr_reduced_cdf(y, x, z1, v, fit)
