"""Three-stage estimation: control function, reduced form, structural functions.

:func:`prepare` fixes everything that depends on the original sample only
(spline knots, evaluation regions, outcome mesh, threshold grids) so that
bootstrap replicates reuse it; :func:`estimate` then runs the three stages
under a given weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfsf.data import ObservationTable
from cfsf.design import Grid, RegressorSpec, make_grid
from cfsf.errors import EmptyAfterTrim, InvalidInput
from cfsf.first_stage import ControlFunctionFit, TrimRule, control_function
from cfsf.numerics import LINKS, empirical_quantile
from cfsf.second_stage import SecondStageFit, fit_second_stage_dr, fit_second_stage_qr
from cfsf.structural import Regions, StructuralSurface, asf_least_squares, surfaces

METHODS = ("qr", "dr")


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings. Defaults follow the usual empirical setup:
    M = S = 599 grid points, ε = 0.01, 5 x-points and 15 y-points on the
    [0.1, 0.9] sample-quantile range, τ in {0.25, 0.5, 0.75}."""

    first_stage: str = "qr"
    second_stage: str = "qr"
    link: str = "logit"
    M: int = 599
    S: int = 599
    epsilon: float = 0.01
    trim: TrimRule = TrimRule()
    spec: RegressorSpec = RegressorSpec()
    x_points: int = 5
    x_range: tuple = (0.1, 0.9)
    x_dsf_points: int = 3
    y_points: int = 15
    y_range: tuple = (0.1, 0.9)
    taus: tuple = (0.25, 0.5, 0.75)
    y_discrete: bool = False
    rearrange: bool | None = None
    conditional_z1: tuple = ()
    asf_ls: bool = False

    def __post_init__(self):
        for name in ("first_stage", "second_stage"):
            if getattr(self, name) not in METHODS:
                raise InvalidInput(f"{name} must be one of {METHODS}")
        if self.link not in LINKS:
            raise InvalidInput(f"link must be one of {LINKS}")
        if not 0.0 < self.epsilon < 0.5:
            raise InvalidInput("epsilon must lie in (0, 0.5)")
        if self.M < 2 or self.S < 2:
            raise InvalidInput("M and S must be at least 2")
        if self.x_points < 1 or self.x_dsf_points < 1 or self.y_points < 1:
            raise InvalidInput("region sizes must be positive")
        for lo, hi in (self.x_range, self.y_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise InvalidInput("quantile ranges must satisfy 0 <= lo <= hi <= 1")
        if not self.taus or any(not 0.0 < t < 1.0 for t in self.taus):
            raise InvalidInput("tau levels must lie in (0, 1)")
        object.__setattr__(self, "taus", tuple(sorted(float(t) for t in self.taus)))

    @property
    def rearrange_dsf(self) -> bool:
        if self.rearrange is None:
            return self.second_stage == "dr"
        return self.rearrange


@dataclass(frozen=True)
class Setup:
    spec: RegressorSpec
    regions: Regions
    mesh: Grid
    x_grid: Grid | None = None
    y_grid: Grid | None = None


@dataclass(frozen=True)
class Estimate:
    surfaces: dict
    control: ControlFunctionFit = field(repr=False)
    reduced_form: SecondStageFit = field(repr=False)

    def values(self) -> dict:
        return {name: s.estimates for name, s in self.surfaces.items()}


def _quantile_points(values, size, prob_range):
    # ties collapse, so discrete data can give fewer than ``size`` points
    lo, hi = prob_range
    probs = np.linspace(lo, hi, size) if size > 1 else [lo]
    return np.unique([empirical_quantile(values, p) for p in probs])


def prepare(table: ObservationTable, config: EstimatorConfig) -> Setup:
    spec = config.spec.fitted(table.x, table.z1, table.z)
    keep = config.trim.indicator(table.x).astype(bool)
    if not keep.any():
        raise EmptyAfterTrim("no observations left after trimming")
    xk, yk = table.x[keep], table.y[keep]
    if config.y_discrete:
        mesh = make_grid(yk, 2, "support")
        y_region = mesh.points
    else:
        mesh = make_grid((yk.min(), yk.max()), config.S, "equidistant")
        y_region = _quantile_points(yk, config.y_points, config.y_range)
    regions = Regions(
        x=_quantile_points(xk, config.x_points, config.x_range),
        x_dsf=_quantile_points(xk, config.x_dsf_points, config.x_range),
        y=y_region,
        taus=np.array(config.taus),
    )
    x_grid = y_grid = None
    if config.first_stage == "dr":
        x_grid = make_grid(table.x, config.M, "sample_quantile")
    if config.second_stage == "dr":
        y_grid = Grid(np.union1d(mesh.points, y_region), "support")
    return Setup(spec, regions, mesh, x_grid, y_grid)


def _effective_weights(table, weights):
    if table.weights is None:
        return weights
    if weights is None:
        return table.weights
    return table.weights * np.asarray(weights, dtype=float)


def estimate(table: ObservationTable, config: EstimatorConfig, weights=None,
             setup: Setup | None = None) -> Estimate:
    """Run all three stages with observation weights ``weights`` (None = 1)."""
    if setup is None:
        setup = prepare(table, config)
    w = _effective_weights(table, weights)
    w = np.ones(table.n) if w is None else np.asarray(w, dtype=float)
    cf = control_function(table, w, setup.spec, method=config.first_stage, M=config.M,
                          epsilon=config.epsilon, link=config.link, trim=config.trim,
                          x_grid=setup.x_grid)
    if config.second_stage == "qr":
        fit = fit_second_stage_qr(table, w, cf, setup.spec, config.M, config.epsilon)
    else:
        fit = fit_second_stage_dr(table, w, cf, setup.spec, setup.y_grid, config.link)
    rearr = config.rearrange_dsf
    out = surfaces(fit, cf, table, w, setup.regions, setup.mesh, rearrange=rearr)
    for z1 in config.conditional_z1:
        cond = surfaces(fit, cf, table, w, setup.regions, setup.mesh, z1=z1, rearrange=rearr)
        tag = ",".join(repr(float(v)) for v in np.atleast_1d(z1))
        for kind, surf in cond.items():
            out[f"{kind}|z1={tag}"] = surf
    if config.asf_ls:
        xs = setup.regions.x
        est = np.array([asf_least_squares(x, table, w, cf, setup.spec) for x in xs])
        out["ASF_LS"] = StructuralSurface("ASF", np.asarray(xs)[:, None], est)
    return Estimate(out, cf, fit)
