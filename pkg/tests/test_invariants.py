"""Property tests over randomized inputs (1000 cases each)."""

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from cfsf.data import CoefficientPath, ObservationTable
from cfsf.design import Grid, RegressorSpec
from cfsf.errors import NumericalError
from cfsf.first_stage import TrimRule, control_function, quantile_grid
from cfsf.inference import bootstrap_ensemble
from cfsf.numerics import rearrange_monotone
from cfsf.pipeline import EstimatorConfig, estimate, prepare
from cfsf.second_stage import SecondStageFit
from cfsf.simulate import TriangularDesign, generate
from cfsf.structural import asf, dsf_profile, qsf

pytestmark = pytest.mark.filterwarnings("ignore:.*separated threshold")

PROPERTY = settings(max_examples=1000, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])

unit = st.floats(0.0, 1.0)
levels = st.lists(st.floats(0.001, 0.999), min_size=2, max_size=12)


@st.composite
def profiles(draw):
    S = draw(st.integers(2, 60))
    G = np.array(draw(st.lists(unit, min_size=S, max_size=S)))
    lo = draw(st.floats(-100, 100))
    width = draw(st.floats(0.01, 100))
    if draw(st.booleans()):
        mesh = Grid(np.linspace(lo, lo + width, S), "equidistant")
    else:
        steps = draw(st.lists(st.floats(0.01, 10), min_size=S - 1, max_size=S - 1))
        mesh = Grid(lo + np.concatenate([[0.0], np.cumsum(steps)]), "support")
    return G, mesh


@PROPERTY
@given(profiles(), levels)
def test_qsf_monotone_in_tau(profile, taus):
    G, mesh = profile
    t = np.sort(taus)
    q = qsf(t, G, mesh)
    assert np.all(np.diff(q) >= 0)
    top = mesh.points[0] + np.append(np.diff(mesh.points), 0.0).sum()
    if mesh.equidistant:
        top = mesh.points[0] + mesh.size * mesh.delta
    assert mesh.points[0] <= q.min() and q.max() <= top + 1e-12 * (1 + abs(top))


@PROPERTY
@given(profiles())
def test_rearranged_profile_keeps_asf_and_values(profile):
    G, mesh = profile
    R = rearrange_monotone(G)
    np.testing.assert_array_equal(np.sort(G), R)
    np.testing.assert_array_equal(rearrange_monotone(R), R)
    if mesh.equidistant:
        assert np.isclose(asf(R, mesh), asf(G, mesh), rtol=1e-12, atol=1e-9)


# ---------------------------------------------------------------- DSF range

_TABLE = generate(TriangularDesign(), 120, 99)
_CF = control_function(_TABLE, None, RegressorSpec(), M=19)


@st.composite
def reduced_forms(draw):
    M = draw(st.integers(2, 15))
    coef = np.array(draw(st.lists(st.lists(st.floats(-20, 20), min_size=4, max_size=4),
                                  min_size=M, max_size=M)))
    if draw(st.booleans()):
        eps = draw(st.floats(0.001, 0.49))
        path = CoefficientPath(quantile_grid(M, eps), coef)
        return SecondStageFit("qr", path, eps, RegressorSpec())
    grid = np.cumsum(draw(st.lists(st.floats(0.05, 3), min_size=M, max_size=M))) - 5.0
    fixed = np.array(draw(st.lists(st.sampled_from([np.nan, 0.0, 1.0]), min_size=M, max_size=M)))
    link = draw(st.sampled_from(["logit", "probit"]))
    return SecondStageFit("dr", CoefficientPath(grid, coef), 0.0, RegressorSpec(), link, fixed)


@PROPERTY
@given(reduced_forms(), st.lists(st.floats(-50, 50), min_size=1, max_size=10),
       st.floats(-5, 5), st.booleans())
def test_dsf_in_unit_interval(fit, ys, x, rearrange):
    G = dsf_profile(np.sort(ys), x, fit, _CF, _TABLE, rearrange=rearrange)
    assert np.all((G >= 0.0) & (G <= 1.0))
    if fit.method == "qr":
        assert np.all((G >= fit.epsilon - 1e-15) & (G <= 1 - fit.epsilon + 1e-15))


# ------------------------------------------------------- pipeline invariants

def _unit(n, seed, b):
    return np.ones(n)


@st.composite
def samples(draw):
    design = TriangularDesign(
        theta=draw(st.floats(-0.9, 0.9)), s2=draw(st.floats(0.0, 0.2)),
        z_law=draw(st.sampled_from(["standard_normal", "bernoulli"])))
    n = draw(st.integers(60, 120))
    table = generate(design, n, draw(st.integers(0, 2 ** 32 - 1)))
    config = EstimatorConfig(
        first_stage=draw(st.sampled_from(["qr", "dr"])),
        second_stage=draw(st.sampled_from(["qr", "dr"])),
        M=draw(st.integers(3, 11)), S=draw(st.integers(5, 41)), y_points=5)
    return table, config


def _estimate_or_reject(table, config, weights=None, setup=None):
    try:
        return estimate(table, config, weights, setup)
    except NumericalError:
        assume(False)


@PROPERTY
@given(samples())
def test_unit_weight_draw_equals_estimate(sample):
    table, config = sample
    setup = prepare(table, config)
    est = _estimate_or_reject(table, config, setup=setup)
    ens = bootstrap_ensemble(table, config, 2, 0, setup=setup, weight_fn=_unit)
    for name, surf in est.surfaces.items():
        for draw in ens.draws[name]:
            assert np.array_equal(draw, surf.estimates)


@PROPERTY
@given(samples(), st.floats(0.05, 0.3), st.floats(0.7, 0.95),
       st.floats(-1e3, 1e3), st.integers(0, 2 ** 32 - 1))
def test_trimmed_rows_have_no_influence(sample, p_lo, p_hi, shift, seed):
    table, config = sample
    lo, hi = np.quantile(table.x, [p_lo, p_hi])
    config = EstimatorConfig(**{**config.__dict__, "trim": TrimRule(lo, hi)})
    out = (table.x < lo) | (table.x > hi)
    y = table.y.copy()
    y[out] = shift + np.random.default_rng(seed).normal(size=out.sum()) * 100
    other = ObservationTable(y=y, x=table.x, z2=table.z2)
    a = _estimate_or_reject(table, config)
    b = _estimate_or_reject(other, config)
    for name in a.surfaces:
        assert np.array_equal(a.surfaces[name].estimates, b.surfaces[name].estimates)
        assert np.array_equal(a.surfaces[name].region, b.surfaces[name].region)
