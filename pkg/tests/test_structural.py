import numpy as np
import pytest
from scipy.special import ndtr

from cfsf.data import CoefficientPath, ObservationTable
from cfsf.design import Grid, RegressorSpec, make_grid
from cfsf.first_stage import control_function
from cfsf.inference import bootstrap_ensemble, pointwise_se
from cfsf.pipeline import EstimatorConfig, estimate, prepare
from cfsf.second_stage import SecondStageFit, fit_second_stage_qr, reduced_cdf
from cfsf.simulate import TriangularDesign, generate, oracle
from cfsf.structural import (
    asf,
    asf_least_squares,
    conditional_surface,
    dsf,
    dsf_profile,
    qsf,
)


@pytest.fixture(scope="module")
def fitted(small_table):
    spec = RegressorSpec()
    cf = control_function(small_table, None, spec, M=39)
    fit = fit_second_stage_qr(small_table, None, cf, spec, M=39)
    return small_table, cf, fit


class TestDSF:
    def test_constant_reduced_form(self, small_table):
        cf = control_function(small_table, None, RegressorSpec(), M=19)
        path = CoefficientPath([-10.0, 10.0], np.zeros((2, 4)))
        fit = SecondStageFit("dr", path, 0.0, RegressorSpec(), "logit", np.full(2, np.nan))
        assert dsf(0.0, 1.0, fit, cf, small_table) == 0.5

    def test_unit_weights_give_sample_average(self, fitted):
        table, cf, fit = fitted
        y, x = 2.0, 1.0
        direct = np.mean([reduced_cdf(y, x, table.z1[i], cf.v_hat[i], fit) for i in range(table.n)])
        assert dsf(y, x, fit, cf, table) == pytest.approx(direct, abs=1e-12)

    def test_equidistant_path_matches_generic(self, fitted):
        table, cf, fit = fitted
        mesh = make_grid((table.y.min(), table.y.max()), 101, "equidistant")
        a = dsf_profile(mesh.points, 1.0, fit, cf, table, equidistant=True)
        b = dsf_profile(mesh.points, 1.0, fit, cf, table, equidistant=False)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_simulation_oracle(self):
        design = TriangularDesign()
        n = 2000
        table = generate(design, n, 8)
        config = EstimatorConfig(M=99, S=199)
        setup = prepare(table, config)
        est = estimate(table, config, setup=setup).surfaces["DSF"]
        ens = bootstrap_ensemble(table, config, 30, seed=2, setup=setup)
        se = pointwise_se(ens.draws["DSF"])
        truth = np.array([oracle(design, "DSF", p) for p in est.region])
        interior = (truth > 0.1) & (truth < 0.9)
        assert np.all(np.abs(est.estimates - truth)[interior] <= 3 * se[interior] + 0.01)


class TestMeshIntegrals:
    mesh = Grid(np.linspace(-8.0, 8.0, 1601), "equidistant")

    def test_qsf_symmetric_median(self):
        assert qsf(0.5, ndtr(self.mesh.points), self.mesh) == pytest.approx(0.0, abs=0.011)

    def test_qsf_below_every_value(self):
        mesh = Grid(np.linspace(0.0, 4.0, 41), "equidistant")
        G = np.linspace(0.3, 1.0, 41)
        assert qsf(0.1, G, mesh) == 0.0

    def test_asf_point_mass_at_zero(self):
        G = (self.mesh.points >= 0).astype(float)
        assert asf(G, self.mesh) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("c", [-1.5, 0.0, 0.7])
    def test_asf_shifted_normal(self, c):
        assert asf(ndtr(self.mesh.points - c), self.mesh) == pytest.approx(c, abs=0.011)

    def test_support_mesh(self):
        mesh = Grid([0.0, 1.0, 3.0], "support")
        G = np.array([0.2, 0.5, 1.0])
        # masses 0.2, 0.3, 0.5 at 0, 1, 3
        assert asf(G, mesh) == pytest.approx(1.8)
        np.testing.assert_array_equal(qsf([0.1, 0.4, 0.6], G, mesh), [0.0, 1.0, 3.0])


@pytest.fixture(scope="module")
def sample():
    return generate(TriangularDesign(), 5000, 4)


class TestLeastSquaresASF:
    def test_exact_linear_outcome(self, small_table):
        table = ObservationTable(y=2 + 3 * small_table.x, x=small_table.x, z2=small_table.z2)
        cf = control_function(table, None, RegressorSpec(), M=19)
        for x in (-1.0, 0.5, 2.0):
            assert asf_least_squares(x, table, None, cf, RegressorSpec()) == pytest.approx(2 + 3 * x)

    @pytest.mark.xfail(strict=True, reason="the DSF route carries an ε(y_1 + y_S - 2μ) "
                       "compression bias of up to 0.07 at ε = 0.01")
    def test_agrees_with_distribution_route(self, sample):
        est = estimate(sample, EstimatorConfig(asf_ls=True))
        np.testing.assert_allclose(est.surfaces["ASF_LS"].estimates,
                                   est.surfaces["ASF"].estimates, atol=0.02)

    def test_agrees_with_distribution_route_small_epsilon(self, sample):
        est = estimate(sample, EstimatorConfig(asf_ls=True, epsilon=0.001))
        np.testing.assert_allclose(est.surfaces["ASF_LS"].estimates,
                                   est.surfaces["ASF"].estimates, atol=0.02)


@pytest.fixture(scope="module")
def z1_table():
    design = TriangularDesign(z1_p=0.4, pi3=0.5, b3=1.0)
    return design, generate(design, 3000, 21)


class TestConditionalSurface:
    def test_without_covariates_matches_unconditional(self, fitted, small_table):
        table, cf, fit = fitted
        setup = prepare(table, EstimatorConfig())
        a = conditional_surface("DSF", None, fit, cf, table, None, setup.regions, setup.mesh)
        b = estimate(table, EstimatorConfig(M=39)).surfaces["DSF"]
        np.testing.assert_array_equal(a.estimates, b.estimates)

    def test_binary_mix_identity(self, z1_table):
        _, table = z1_table
        config = EstimatorConfig(M=59, S=199)
        setup = prepare(table, config)
        est = estimate(table, config, setup=setup)
        args = (est.reduced_form, est.control, table, None, setup.regions, setup.mesh)
        g0 = conditional_surface("DSF", [0.0], *args).estimates
        g1 = conditional_surface("DSF", [1.0], *args).estimates
        share = table.z1[:, 0].mean()
        # exact only when V̂ has the same sample law in both groups; V ⟂ Z1 here
        np.testing.assert_allclose(est.surfaces["DSF"].estimates, (1 - share) * g0 + share * g1,
                                   atol=0.01)

    def test_conditional_asf_oracle(self, z1_table):
        design, table = z1_table
        config = EstimatorConfig(M=99, S=299)
        setup = prepare(table, config)
        est = estimate(table, config, setup=setup)
        args = (est.reduced_form, est.control, table, None, setup.regions, setup.mesh)
        surf = conditional_surface("ASF", [0.0], *args)
        truth = [oracle(design, "ASF", x, z1=0.0) for x in setup.regions.x]
        np.testing.assert_allclose(surf.estimates, truth, atol=0.15)
