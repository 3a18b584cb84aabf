import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from cfsf.errors import InvalidInput, RankDeficient, Separation
from cfsf.numerics import (
    binary_loglik,
    empirical_quantile,
    interpolate_path,
    iqr_scaled_sd,
    qr_objective,
    quantile_regression_path,
    rearrange_monotone,
    solve_binary_mle,
    solve_quantile_regression,
)

ONES3 = np.ones((3, 1))
ONES5 = np.ones((5, 1))


class TestQuantileRegression:
    @pytest.mark.parametrize("y, w, tau, expected", [
        ([1, 2, 3], None, 0.5, 2.0),
        ([1, 2, 3, 4, 5], None, 0.25, 2.0),
        ([1, 2, 3], [3, 1, 1], 0.5, 1.0),
    ])
    def test_intercept_only(self, y, w, tau, expected):
        X = np.ones((len(y), 1))
        coef, rep = solve_quantile_regression(X, y, w, tau)
        assert coef[0] == pytest.approx(expected, abs=1e-12)
        assert rep.converged

    def test_matches_objective_scan(self, rng):
        X = np.column_stack([np.ones(60), rng.normal(size=60)])
        y = 1 + 2 * X[:, 1] + rng.standard_t(3, size=60)
        w = rng.exponential(size=60)
        for tau in (0.1, 0.5, 0.9):
            coef, _ = solve_quantile_regression(X, y, w, tau)
            best = minimize(qr_objective, coef + 0.3, args=(X, y, w, tau),
                            method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
            assert qr_objective(coef, X, y, w, tau) <= best.fun + 1e-9

    def test_path_warm_start_matches_single_solves(self, rng):
        X = np.column_stack([np.ones(80), rng.normal(size=80), rng.uniform(size=80)])
        y = X @ [0.5, 1.0, -1.0] + rng.normal(size=80)
        taus = np.linspace(0.05, 0.95, 19)
        path, _ = quantile_regression_path(X, y, None, taus)
        for t, c in zip(taus, path):
            single, _ = solve_quantile_regression(X, y, None, t)
            assert qr_objective(c, X, y, np.ones(80), t) == pytest.approx(
                qr_objective(single, X, y, np.ones(80), t), abs=1e-9)

    def test_rank_deficient(self):
        X = np.column_stack([np.ones(5), np.ones(5)])
        with pytest.raises(RankDeficient):
            solve_quantile_regression(X, np.arange(5.0))

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            solve_quantile_regression(ONES3, [1.0, np.nan, 2.0])


class TestBinaryMLE:
    def test_half_fraction(self):
        coef, rep = solve_binary_mle(np.ones((4, 1)), [0, 1, 0, 1])
        assert coef[0] == pytest.approx(0.0, abs=1e-10)
        assert rep.converged

    def test_three_quarters(self):
        coef, _ = solve_binary_mle(np.ones((4, 1)), [1, 1, 1, 0])
        assert coef[0] == pytest.approx(np.log(3.0), abs=1e-10)

    def test_two_groups(self):
        X = np.array([[1, 0], [1, 0], [1, 1], [1, 1]], dtype=float)
        coef, _ = solve_binary_mle(X, [0, 1, 1, 0])
        np.testing.assert_allclose(coef, [0.0, 0.0], atol=1e-10)

    @pytest.mark.parametrize("link", ["logit", "probit"])
    def test_agrees_with_generic_optimizer(self, rng, link):
        X = np.column_stack([np.ones(300), rng.normal(size=300)])
        d = (X @ [0.2, 0.8] + rng.logistic(size=300) > 0).astype(float)
        w = rng.exponential(size=300)
        coef, _ = solve_binary_mle(X, d, w, link)
        ref = minimize(lambda b: -binary_loglik(b, X, d, w, link), np.zeros(2), method="BFGS",
                       options={"gtol": 1e-10})
        np.testing.assert_allclose(coef, ref.x, atol=1e-5)

    def test_separation(self):
        X = np.column_stack([np.ones(6), np.arange(6.0)])
        with pytest.raises(Separation):
            solve_binary_mle(X, [0, 0, 0, 1, 1, 1])


class TestScalars:
    @pytest.mark.parametrize("sample, p, expected", [
        ([1, 2, 3, 4, 5], 0.75, 4.0),
        ([7], 0.5, 7.0),
        ([1, 2, 3, 4, 5], 0.25, 2.0),
    ])
    def test_empirical_quantile(self, sample, p, expected):
        assert empirical_quantile(sample, p) == expected

    def test_empirical_quantile_empty(self):
        with pytest.raises(InvalidInput):
            empirical_quantile([], 0.5)

    @pytest.mark.parametrize("sample, expected", [
        ([1, 2, 3, 4, 5], 2 / 1.349),
        ([3.0] * 6, 0.0),
        ([0, 1], 1 / 1.349),
    ])
    def test_iqr_scaled_sd(self, sample, expected):
        assert iqr_scaled_sd(sample) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("values, expected", [
        ([0.2, 0.5, 0.4], [0.2, 0.4, 0.5]),
        ([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]),
        ([1, 0, 1, 0], [0, 0, 1, 1]),
    ])
    def test_rearrange_examples(self, values, expected):
        np.testing.assert_array_equal(rearrange_monotone(values), expected)

    def test_interpolate_midpoint(self):
        np.testing.assert_allclose(interpolate_path([0, 1], [[0], [2]], 0.5), [1.0])

    def test_interpolate_at_nodes(self):
        vals = np.array([[0.0, 1.0], [2.0, 5.0], [3.0, -1.0]])
        for g, v in zip([0.0, 0.4, 1.0], vals):
            np.testing.assert_array_equal(interpolate_path([0.0, 0.4, 1.0], vals, g), v)

    def test_interpolate_clamps(self):
        np.testing.assert_array_equal(interpolate_path([0, 1], [[0], [2]], -1.0), [0.0])
        np.testing.assert_array_equal(interpolate_path([0, 1], [[0], [2]], 3.0), [2.0])

    def test_interpolate_rejects_unsorted_grid(self):
        with pytest.raises(InvalidInput):
            interpolate_path([1, 0], [[0], [1]], 0.5)


floats = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(st.lists(floats, min_size=1, max_size=40))
def test_rearrangement_idempotent_and_multiset_preserving(values):
    once = rearrange_monotone(values)
    np.testing.assert_array_equal(rearrange_monotone(once), once)
    np.testing.assert_array_equal(np.sort(np.asarray(values, dtype=float)), once)
    assert np.all(np.diff(once) >= 0)


@settings(max_examples=1000, deadline=None)
@given(st.lists(floats, min_size=1, max_size=40), st.floats(0.0, 1.0))
def test_empirical_quantile_is_order_statistic(values, p):
    q = empirical_quantile(values, p)
    srt = np.sort(values)
    j = min(max(math.ceil(Fraction(repr(p)) * len(values)), 1), len(values))
    assert q == srt[j - 1]


class TestQuantileLevels:
    def test_decimal_levels_are_exact(self):
        assert empirical_quantile(np.arange(1.0, 11.0), 0.9) == 9.0
        assert empirical_quantile(np.arange(1.0, 200.0), 0.9) == 180.0
