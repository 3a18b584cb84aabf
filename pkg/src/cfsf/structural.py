"""Third stage: structural functions from the fitted reduced form.

The DSF at (y, x) averages the reduced-form CDF over the kept rows'
(Z1_i, V̂_i); QSF and ASF integrate a DSF profile over an outcome mesh.

Mesh integrals are anchored at the first mesh point ``y_1``::

    ASF(x)    = y_1 + sum_s Δ_s (1 - G(y_s, x))
    QSF(τ, x) = y_1 + sum_s Δ_s 1{G(y_s, x) < τ}

with Δ_s = δ on an equidistant mesh. When 0 is a mesh point this equals the
zero-anchored sum δ Σ_s [1(y_s >= 0) - G(y_s, x)] term for term; anchoring
at y_1 keeps the formulas exact when the mesh does not contain 0 and makes
them shift-equivariant. On a support mesh (discrete Y) Δ_s = y_{s+1} - y_s
and Δ_S = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from cfsf import _backend
from cfsf.data import CoefficientPath, ObservationTable
from cfsf.design import (
    Grid,
    RegressorSpec,
    contract_treatment,
    inner_design,
    second_stage_design,
)
from cfsf.errors import InvalidInput, RankDeficient
from cfsf.first_stage import ControlFunctionFit
from cfsf.numerics import link_cdf, rearrange_monotone
from cfsf.second_stage import SecondStageFit, kept_rows

KINDS = ("DSF", "QSF", "ASF")


@dataclass(frozen=True)
class StructuralSurface:
    """Estimates over a region.

    ``region`` has one row per point: (y, x) for DSF, (τ, x) for QSF and
    (x,) for ASF.
    """

    kind: str
    region: np.ndarray
    estimates: np.ndarray
    mesh: Grid | None = field(default=None, repr=False)
    conditioning: tuple | None = None

    def __len__(self):
        return self.estimates.shape[0]


def _z1_rows(table: ObservationTable, idx, z1):
    if z1 is None:
        return table.z1[idx]
    z1 = np.atleast_1d(np.asarray(z1, dtype=float))
    if z1.shape[0] != table.z1.shape[1]:
        raise InvalidInput(
            f"conditioning value has {z1.shape[0]} components, model has {table.z1.shape[1]}")
    return np.broadcast_to(z1, (idx.shape[0], z1.shape[0]))


def dsf_profile(ys, x: float, fit: SecondStageFit, cf: ControlFunctionFit,
                table: ObservationTable, weights=None, *, z1=None,
                equidistant: bool = False, rearrange: bool = False) -> np.ndarray:
    """Ĝ(y, x) at every ``y`` in the increasing array ``ys``.

    ``z1`` fixes the covariates at one value instead of averaging over the
    sample. ``equidistant`` selects the faster binning path for QR when
    ``ys`` is an equidistant mesh.
    """
    ys = np.ascontiguousarray(ys, dtype=float)
    idx, w = kept_rows(table, weights, cf)
    # x is fixed, so fold p(x) into the coefficients: w(x, z1, v)'β = inner'B(x)
    inner = inner_design(_z1_rows(table, idx, z1), cf.v_hat[idx], fit.spec)
    total = w.sum()
    if fit.method == "qr":
        Bx = contract_treatment(fit.path.coef, x, fit.spec)
        acc = _backend.kernels.weighted_count_below(
            np.ascontiguousarray(inner), Bx, np.ascontiguousarray(w), ys, equidistant)
        G = fit.epsilon + (1.0 - 2.0 * fit.epsilon) * acc / (len(fit.path) * total)
    else:
        m = np.searchsorted(fit.grid, ys, side="right") - 1
        cols = np.unique(m[m >= 0])
        sub = _subset(fit, cols)
        Bx = contract_treatment(sub.path.coef, x, fit.spec)
        col_mean = (w @ _dr_probabilities(inner, Bx, sub)) / total
        G = np.zeros(ys.shape[0])
        G[m >= 0] = col_mean[np.searchsorted(cols, m[m >= 0])]
    if rearrange:
        G = rearrange_monotone(G)
    return G


def _dr_probabilities(inner, Bx, fit):
    P = link_cdf(inner @ Bx.T, fit.link)
    fx = ~np.isnan(fit.fixed)
    P[:, fx] = fit.fixed[fx]
    return P


def _subset(fit: SecondStageFit, cols):
    path = CoefficientPath(fit.path.grid[cols], fit.path.coef[cols])
    return replace(fit, path=path, fixed=fit.fixed[cols])


def dsf(y: float, x: float, fit: SecondStageFit, cf: ControlFunctionFit,
        table: ObservationTable, weights=None, *, z1=None) -> float:
    return float(dsf_profile([float(y)], x, fit, cf, table, weights, z1=z1)[0])


def _steps(mesh: Grid) -> np.ndarray:
    if mesh.equidistant:
        return np.full(mesh.size, mesh.delta)
    return np.append(np.diff(mesh.points), 0.0)


def asf(profile, mesh: Grid) -> float:
    """Mean of the distribution whose CDF on ``mesh`` is ``profile``."""
    G = np.asarray(profile, dtype=float)
    return float(mesh.points[0] + np.sum(_steps(mesh) * (1.0 - G)))


def qsf(tau, profile, mesh: Grid):
    """Left-inverse of ``profile`` at level(s) ``tau`` on the mesh."""
    G = np.asarray(profile, dtype=float)
    steps = _steps(mesh)
    t = np.asarray(tau, dtype=float)
    below = G[None, :] < t.reshape(-1, 1)
    # row sums share one summation order, so the result is monotone in tau
    out = mesh.points[0] + np.where(below, steps, 0.0).sum(axis=1)
    return float(out[0]) if t.ndim == 0 else out


def asf_least_squares(x: float, table: ObservationTable, weights,
                      cf: ControlFunctionFit, spec: RegressorSpec) -> float:
    """Linear-regression ASF: w(x, Z̄1, v = 1/2)'β_LS.

    At v = 1/2 every Φ⁻¹(V) factor is zero, which evaluates the fit at the
    mean of Φ⁻¹(V).
    """
    idx, w = kept_rows(table, weights, cf)
    W = second_stage_design(table.x[idx], table.z1[idx], cf.v_hat[idx], spec)
    sw = np.sqrt(w)
    beta, _, rank, _ = np.linalg.lstsq(W * sw[:, None], table.y[idx] * sw, rcond=None)
    if rank < W.shape[1]:
        raise RankDeficient("least-squares design is rank deficient")
    z1_bar = (w @ table.z1[idx]) / w.sum()
    row = second_stage_design([float(x)], z1_bar[None, :], [0.5], spec)[0]
    return float(row @ beta)


@dataclass(frozen=True)
class Regions:
    """Evaluation points shared by the estimate and every bootstrap draw."""

    x: np.ndarray
    x_dsf: np.ndarray
    y: np.ndarray
    taus: np.ndarray


def surfaces(fit: SecondStageFit, cf: ControlFunctionFit, table: ObservationTable,
             weights, regions: Regions, mesh: Grid, *, z1=None,
             rearrange: bool = False) -> dict:
    """DSF, QSF and ASF over ``regions``, keyed by kind."""
    cond = None if z1 is None else tuple(float(v) for v in np.atleast_1d(z1))
    d_reg, d_est = [], []
    for x in regions.x_dsf:
        G = dsf_profile(regions.y, x, fit, cf, table, weights, z1=z1, rearrange=rearrange)
        d_reg.extend((y, x) for y in regions.y)
        d_est.append(G)
    q_reg, q_est, a_est = [], [], []
    for x in regions.x:
        G = dsf_profile(mesh.points, x, fit, cf, table, weights, z1=z1,
                        equidistant=mesh.equidistant, rearrange=rearrange)
        q_reg.extend((t, x) for t in regions.taus)
        q_est.append(qsf(regions.taus, G, mesh))
        a_est.append(asf(G, mesh))
    return {
        "DSF": StructuralSurface("DSF", np.array(d_reg), np.concatenate(d_est), None, cond),
        "QSF": StructuralSurface("QSF", np.array(q_reg), np.concatenate(q_est), mesh, cond),
        "ASF": StructuralSurface("ASF", np.asarray(regions.x, dtype=float)[:, None],
                                 np.array(a_est), mesh, cond),
    }


def conditional_surface(kind: str, z1, fit: SecondStageFit, cf: ControlFunctionFit,
                        table: ObservationTable, weights, regions: Regions,
                        mesh: Grid, rearrange: bool = False) -> StructuralSurface:
    """One surface with the covariates held at ``z1`` (None averages over them)."""
    if kind not in KINDS:
        raise InvalidInput(f"unknown surface kind {kind!r}")
    return surfaces(fit, cf, table, weights, regions, mesh, z1=z1, rearrange=rearrange)[kind]
