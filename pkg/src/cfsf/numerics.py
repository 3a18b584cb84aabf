"""Core solvers and scalar utilities.

Quantile regression runs on the compiled simplex kernel (or its numpy twin);
binary-response maximum likelihood is a damped Newton method in numpy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
from scipy.optimize import linprog
from scipy.special import expit, log_ndtr, ndtr, ndtri

from cfsf import _backend
from cfsf.errors import InvalidInput, NoConvergence, RankDeficient, Separation

log = logging.getLogger(__name__)

QR_TOL = 1e-10
MLE_TOL = 1e-8
MLE_MAX_ITER = 100
COEF_CAP = 30.0
LINKS = ("logit", "probit")


@dataclass(frozen=True)
class SolverReport:
    converged: bool
    iterations: int
    final_objective: float
    gradient_norm: float


# ---------------------------------------------------------------- validation

def _design(design):
    X = np.ascontiguousarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidInput("design must be a 2-d array")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("design contains non-finite entries")
    return X


def _vector(v, n, name):
    v = np.ascontiguousarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise InvalidInput(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return v


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = _vector(weights, n, "weights")
    if np.any(w < 0):
        raise InvalidInput("weights must be nonnegative")
    if not np.any(w > 0):
        raise InvalidInput("at least one weight must be positive")
    return w


def _require_full_rank(X, what="design"):
    n, k = X.shape
    if n < k:
        raise RankDeficient(f"{what} has {n} rows for {k} columns", 0.0)
    _, R, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] <= 1e-10 * max(diag[0], 1e-300):
        eig = float(np.linalg.eigvalsh(X.T @ X / n)[0])
        raise RankDeficient(f"{what} is rank deficient (min eigenvalue {eig:.3g})", eig)


def _initial_basis(X):
    # first k pivots of a column-pivoted QR of X^T are linearly independent rows
    _, _, piv = scipy.linalg.qr(X.T, mode="economic", pivoting=True)
    return np.ascontiguousarray(piv[: X.shape[1]], dtype=np.intp)


# ---------------------------------------------------------- quantile regression

def check_loss(u, tau):
    """rho_tau(u) = u * (tau - 1{u < 0})."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def qr_objective(coef, design, response, weights, tau):
    r = np.asarray(response) - np.asarray(design) @ np.asarray(coef)
    return float(np.sum(np.asarray(weights) * check_loss(r, tau)))


def _lp_quantile_regression(X, y, w, tau):
    n, k = X.shape
    c = np.concatenate([np.zeros(k), tau * w, (1.0 - tau) * w])
    A = sparse.hstack([sparse.csr_matrix(X), sparse.identity(n), -sparse.identity(n)], format="csr")
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise NoConvergence(f"LP quantile regression failed at tau={tau}: {res.message}")
    return res.x[:k]


def _basis_from_solution(X, y, coef):
    r = np.abs(y - X @ coef)
    order = np.argsort(r, kind="stable")
    cand = order[: max(4 * X.shape[1], 32)]
    piv = _initial_basis(X[cand])
    return np.ascontiguousarray(cand[piv], dtype=np.intp)


def quantile_regression_path(design, response, weights=None, taus=(0.5,), tol=QR_TOL):
    """Weighted quantile regression coefficients at each level of ``taus``.

    Parameters
    ----------
    design : (n, k) array
    response : (n,) array
    weights : (n,) array of nonnegative weights, or None for unit weights.
        Rows with zero weight are dropped before solving.
    taus : increasing sequence of levels in (0, 1)

    Returns
    -------
    coef : (len(taus), k) array
    reports : list of SolverReport, one per level
    """
    X = _design(design)
    n, k = X.shape
    y = _vector(response, n, "response")
    w = _weights(weights, n)
    taus = np.ascontiguousarray(taus, dtype=float).reshape(-1)
    if np.any((taus <= 0) | (taus >= 1)):
        raise InvalidInput("quantile levels must lie in (0, 1)")
    if np.any(np.diff(taus) < 0):
        raise InvalidInput("quantile levels must be nondecreasing")

    keep = w > 0
    if not keep.all():
        X, y, w = np.ascontiguousarray(X[keep]), y[keep], w[keep]
    _require_full_rank(X)

    kern = _backend.kernels
    max_iter = max(1000, 20 * X.shape[0])
    M = len(taus)
    coef = np.empty((M, k))
    reports = [None] * M
    basis = _initial_basis(X)
    start = 0
    while start < M:
        out = kern.qr_path(X, y, w, taus[start:], basis, max_iter, tol)
        c, iters, status, viol, obj, basis = out
        bad = np.flatnonzero(status != 0)
        stop = M if len(bad) == 0 else start + int(bad[0])
        for m in range(start, stop):
            j = m - start
            coef[m] = c[j]
            reports[m] = SolverReport(True, int(iters[j]), float(obj[j]), float(viol[j]))
        if stop == M:
            break
        tau = float(taus[stop])
        log.debug("simplex status %d at tau=%g, falling back to HiGHS", status[stop - start], tau)
        lp = _lp_quantile_regression(X, y, w, tau)
        basis = _basis_from_solution(X, y, lp)
        c1, it1, st1, v1, o1, b1 = kern.qr_path(X, y, w, taus[stop:stop + 1], basis, max_iter, tol)
        if st1[0] == 0:
            coef[stop] = c1[0]
            reports[stop] = SolverReport(True, int(it1[0]), float(o1[0]), float(v1[0]))
            basis = b1
        else:
            coef[stop] = lp
            reports[stop] = SolverReport(False, int(it1[0]), qr_objective(lp, X, y, w, tau), float(v1[0]))
        start = stop + 1
    return coef, reports


def solve_quantile_regression(design, response, weights=None, tau=0.5, tol=QR_TOL):
    """Minimize sum_i w_i rho_tau(y_i - x_i'b); returns ``(coef, SolverReport)``."""
    if not 0.0 < tau < 1.0:
        raise InvalidInput("tau must lie in (0, 1)")
    coef, reports = quantile_regression_path(design, response, weights, [tau], tol)
    return coef[0], reports[0]


# ------------------------------------------------------------ binary response

def link_cdf(eta, link):
    if link == "logit":
        return expit(eta)
    if link == "probit":
        return ndtr(eta)
    raise InvalidInput(f"unknown link {link!r}")


def link_ppf(p, link):
    p = np.asarray(p, dtype=float)
    if link == "logit":
        return np.log(p) - np.log1p(-p)
    if link == "probit":
        return ndtri(p)
    raise InvalidInput(f"unknown link {link!r}")


def _log_cdf_pair(eta, link):
    if link == "logit":
        return -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
    return log_ndtr(eta), log_ndtr(-eta)


def binary_loglik(coef, design, indicator, weights, link):
    eta = np.asarray(design) @ np.asarray(coef)
    lp, lq = _log_cdf_pair(eta, link)
    d = np.asarray(indicator)
    return float(np.sum(np.asarray(weights) * (d * lp + (1 - d) * lq)))


def _derivs(eta, d, link):
    # first and second derivatives of the per-row log-likelihood in eta
    if link == "logit":
        p = expit(eta)
        return d - p, -p * (1.0 - p)
    lp, lq = _log_cdf_pair(eta, link)
    logphi = -0.5 * eta * eta - 0.5 * math.log(2.0 * math.pi)
    lam1 = np.exp(logphi - lp)
    lam0 = np.exp(logphi - lq)
    g = d * lam1 - (1 - d) * lam0
    h = -d * lam1 * (lam1 + eta) - (1 - d) * lam0 * (lam0 - eta)
    return g, h


def binary_score(coef, design, indicator, weights, link):
    X = np.asarray(design)
    g, _ = _derivs(X @ np.asarray(coef), np.asarray(indicator, dtype=float), link)
    return X.T @ (np.asarray(weights) * g)


def solve_binary_mle(design, indicator, weights=None, link="logit",
                     max_iter=MLE_MAX_ITER, tol=MLE_TOL, coef_cap=COEF_CAP):
    """Weighted logit/probit maximum likelihood by damped Newton.

    Convergence is declared when ``max|score| / sum(w) <= tol``. Coefficients
    leaving ``[-coef_cap, coef_cap]`` signal (quasi-)separation.
    """
    if link not in LINKS:
        raise InvalidInput(f"unknown link {link!r}")
    X = _design(design)
    n, k = X.shape
    d = _vector(indicator, n, "indicator")
    if np.any((d != 0) & (d != 1)):
        raise InvalidInput("indicator must be 0/1")
    w = _weights(weights, n)
    keep = w > 0
    if not keep.all():
        X, d, w = X[keep], d[keep], w[keep]
    sumw = w.sum()
    frac = float(np.dot(w, d) / sumw)
    if frac <= 0.0 or frac >= 1.0:
        raise InvalidInput("both indicator values must be present among weighted rows")

    beta = np.zeros(k)
    if np.all(X[:, 0] == 1.0):
        beta[0] = float(link_ppf(frac, link))
    eta = X @ beta
    ll = binary_loglik(beta, X, d, w, link)
    for it in range(max_iter + 1):
        g, h = _derivs(eta, d, link)
        grad = X.T @ (w * g)
        gnorm = float(np.max(np.abs(grad)) / sumw)
        if gnorm <= tol:
            return beta, SolverReport(True, it, -ll, gnorm)
        if it == max_iter:
            break
        info = (X * (-w * h)[:, None]).T @ X
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise RankDeficient("information matrix is singular")
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = binary_loglik(cand, X, d, w, link)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, ll_new
        eta = X @ beta
        if np.max(np.abs(beta)) > coef_cap:
            raise Separation(f"coefficient magnitude exceeded {coef_cap}")
    raise NoConvergence(f"binary MLE did not converge in {max_iter} iterations")


# ------------------------------------------------------------------- scalars

def empirical_quantile(sample, p):
    """Order statistic at position ceil(p * m) of the sorted sample."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    m = x.shape[0]
    if m == 0:
        raise InvalidInput("empirical_quantile of an empty sample")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("sample contains non-finite entries")
    if not 0.0 <= p <= 1.0:
        raise InvalidInput("p must lie in [0, 1]")
    # decimal value of p, so 0.9 * 10 is exactly 9
    j = math.ceil(Fraction(repr(float(p))) * m)
    j = min(max(j, 1), m)
    return float(np.partition(x, j - 1)[j - 1])


def iqr_scaled_sd(sample):
    """Interquartile range divided by 1.349 (the normal-law IQR in sd units)."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.shape[0] < 2:
        raise InvalidInput("iqr_scaled_sd needs at least two values")
    return (empirical_quantile(x, 0.75) - empirical_quantile(x, 0.25)) / 1.349


def rearrange_monotone(values, axis=-1):
    """Sort values along ``axis``; the monotone rearrangement of a profile."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("rearrange_monotone needs finite values")
    return np.sort(v, axis=axis)


def interpolate_path(grid, values, query):
    """Coordinatewise linear interpolation of a coefficient path.

    Queries outside the grid take the endpoint value. ``query`` may be a
    scalar (returns shape ``(k,)``) or an array (returns ``(len(query), k)``).
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if grid.ndim != 1 or grid.shape[0] < 2 or vals.shape[0] != grid.shape[0]:
        raise InvalidInput("grid must be 1-d with at least two points matching values")
    if np.any(np.diff(grid) <= 0):
        raise InvalidInput("grid must be strictly increasing")
    q = np.asarray(query, dtype=float)
    scalar = q.ndim == 0
    q = np.atleast_1d(q)
    # right-continuous bracket; exact at nodes
    idx = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, grid.shape[0] - 2)
    lo, hi = grid[idx], grid[idx + 1]
    frac = np.clip((q - lo) / (hi - lo), 0.0, 1.0)[:, None]
    out = vals[idx] * (1.0 - frac) + vals[idx + 1] * frac
    at_node = (q == hi)
    if np.any(at_node):
        out[at_node] = vals[idx[at_node] + 1]
    return out[0] if scalar else out
