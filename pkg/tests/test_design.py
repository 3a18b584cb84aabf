import numpy as np
import pytest
from scipy.special import ndtri

from cfsf.design import (
    RegressorSpec,
    TransformSpec,
    build_first_stage_row,
    build_second_stage_row,
    check_full_rank,
    contract_treatment,
    first_stage_design,
    inner_design,
    make_grid,
    second_stage_design,
)
from cfsf.errors import InvalidInput


class TestFirstStageRow:
    @pytest.mark.parametrize("z, expected", [(2.0, [1, 2]), (0.0, [1, 0])])
    def test_default(self, z, expected):
        np.testing.assert_array_equal(build_first_stage_row(z), expected)

    def test_polynomial(self):
        spec = RegressorSpec(first_stage=TransformSpec("polynomial", degree=2))
        np.testing.assert_array_equal(build_first_stage_row(3.0, spec), [1, 3, 9])

    def test_single_intercept_across_components(self):
        R = first_stage_design(np.array([[1.0, 2.0], [3.0, 4.0]]), RegressorSpec())
        np.testing.assert_array_equal(R, [[1, 1, 2], [1, 3, 4]])


class TestSecondStageRow:
    def test_no_covariates_median_control(self):
        np.testing.assert_array_equal(build_second_stage_row(1.0, [], 0.5), [1, 0, 1, 0])

    def test_upper_tail_control(self):
        row = build_second_stage_row(0.0, [], 0.975)
        np.testing.assert_allclose(row, [1, 1.959963984540054, 0, 0], atol=1e-12)

    def test_binary_covariate_order(self):
        row = build_second_stage_row(2.0, [1.0], 0.5)
        np.testing.assert_array_equal(row, [1, 0, 1, 0, 2, 0, 2, 0])

    def test_coordinate_order_generic(self):
        x, z1, v = 2.0, 3.0, 0.8
        e = ndtri(v)
        expected = [1, e, z1, z1 * e, x, x * e, x * z1, x * z1 * e]
        np.testing.assert_allclose(build_second_stage_row(x, [z1], v), expected)

    @pytest.mark.parametrize("v", [0.0, 1.0, -0.2])
    def test_control_outside_unit_interval(self, v):
        with pytest.raises(InvalidInput):
            build_second_stage_row(1.0, [], v)

    def test_contraction_matches_full_rows(self, rng):
        spec = RegressorSpec(treatment=TransformSpec("polynomial", degree=2))
        n, x = 7, 0.7
        z1 = rng.normal(size=(n, 2))
        v = rng.uniform(0.05, 0.95, n)
        W = second_stage_design(np.full(n, x), z1, v, spec)
        coef = rng.normal(size=(5, W.shape[1]))
        fast = inner_design(z1, v, spec) @ contract_treatment(coef, x, spec).T
        np.testing.assert_allclose(fast, W @ coef.T, rtol=1e-12, atol=1e-12)

    def test_spline_basis_is_partition_of_unity(self, rng):
        x = rng.normal(size=200)
        spec = RegressorSpec(treatment=TransformSpec("cubic_bspline", n_knots=3)).fitted(
            x, np.empty((200, 0)), x)
        B = spec.treatment.basis(x)
        assert B.shape == (200, 7)
        np.testing.assert_allclose(B.sum(axis=1), 1.0)


class TestRank:
    def test_orthonormal(self):
        D = np.sqrt(4) * np.eye(4)
        eig, ok = check_full_rank(D)
        assert eig == pytest.approx(1.0) and ok

    def test_duplicated_column(self, rng):
        a = rng.normal(size=50)
        eig, ok = check_full_rank(np.column_stack([np.ones(50), a, a]))
        assert abs(eig) < 1e-12 and not ok

    def test_random_design_eigen_oracle(self, rng):
        D = rng.normal(size=(100, 4))
        eig, ok = check_full_rank(D)
        poly = np.poly(D.T @ D / 100)
        ref = np.min(np.roots(poly).real)
        assert ok and eig == pytest.approx(ref, abs=1e-8)


class TestGrid:
    def test_sample_quantile(self):
        np.testing.assert_array_equal(make_grid([0, 1, 2, 3, 4], 5).points, [0, 1, 2, 3, 4])

    def test_equidistant(self):
        g = make_grid((0, 1), 3, "equidistant")
        np.testing.assert_array_equal(g.points, [0, 0.5, 1])
        assert g.delta == 0.5

    def test_quantile_range_default_region(self, rng):
        y = rng.normal(size=1000)
        g = make_grid(y, 15, "sample_quantile", (0.1, 0.9))
        assert g.size == 15
        assert g.points[0] == np.sort(y)[99] and g.points[-1] == np.sort(y)[899]

    def test_degenerate_bounds(self):
        with pytest.raises(InvalidInput):
            make_grid((1.0, 1.0), 5, "equidistant")

    def test_support(self):
        np.testing.assert_array_equal(make_grid([2, 0, 1, 2, 0], 2, "support").points, [0, 1, 2])
