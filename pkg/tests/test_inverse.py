"""Misfit, sensitivities, and the Newton estimation loop."""

import numpy as np
import pytest

from exdil.collocation import TENSOR_GL, build_rule
from exdil.experiments import generate_synthetic_curve
from exdil.fd_core import Grid2D, trapezoid_2d
from exdil.forward_mapped import (DeviceConfig, GenerationProfile,
                                  pl_of_sample, solve_mapped_1d,
                                  solve_mapped_2d)
from exdil.interface import InterfaceModel, InterfaceSample, UniformDist, \
    sample
from exdil.inverse import (CENTRAL_FD, SENSITIVITY_PDE, AsymptoticForward,
                           DeviceFamily, EstimationError, EstimationTrace,
                           MappedCollocationForward, NewtonOptions,
                           OneDimensionalForward, PLCurve, derivative_plan,
                           newton_estimate, objective,
                           objective_with_derivatives, pl_sigma_derivatives_mapped,
                           sensitivities_1d, sensitivities_mapped)

FAMILY = DeviceFamily(period=4.0)
THICKNESSES = tuple(10.0 * i for i in range(1, 11))


@pytest.fixture(scope="module")
def curve_1d():
    return generate_synthetic_curve("model_1d", 5.0, THICKNESSES, family=FAMILY)


class TestPLCurve:
    def test_validation(self):
        with pytest.raises(ValueError):
            PLCurve((10.0, 10.0), (1.0, 1.0))
        with pytest.raises(ValueError):
            PLCurve((10.0, 20.0), (1.0, -1.0))
        with pytest.raises(ValueError):
            PLCurve((), ())

    def test_pairs(self):
        c = PLCurve((1.0, 2.0), (3.0, 4.0), provenance="external")
        assert list(c.pairs()) == [(1.0, 3.0), (2.0, 4.0)]
        assert len(c) == 2


class TestObjective:
    def test_self_consistency(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        j = objective(prov, curve_1d, 5.0)
        assert j <= 1e-16 * max(curve_1d.values) ** 2

    def test_unit_offset(self):
        prov = OneDimensionalForward(FAMILY)
        base = prov.pl(5.0, 20.0)
        curve = PLCurve((20.0,), (base + 1.0,))
        assert objective(prov, curve, 5.0) == pytest.approx(1.0, rel=1e-10)

    def test_unimodal_scan(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        sigmas = np.linspace(2.0, 12.0, 21)
        js = [objective(prov, curve_1d, s) for s in sigmas]
        k = int(np.argmin(js))
        assert sigmas[k] == pytest.approx(5.0, abs=0.5)
        assert all(b < a for a, b in zip(js[:k], js[1:k + 1]))
        assert all(b > a for a, b in zip(js[k:], js[k + 1:]))

    def test_nonpositive_sigma(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        with pytest.raises(ValueError):
            objective(prov, curve_1d, 0.0)


class TestSensitivities1D:
    def test_first_derivative_matches_fd(self):
        prov = OneDimensionalForward(FAMILY)
        fd = derivative_plan(prov, CENTRAL_FD)
        for sigma in (3.0, 5.0, 10.0, 20.0):
            _, d_sens, _ = prov.pl_with_derivatives(sigma, 30.0)
            _, d_fd, _ = fd.pl_with_derivatives(sigma, 30.0)
            assert d_sens == pytest.approx(d_fd, rel=1e-6)

    def test_second_derivative_matches_fd(self):
        prov = OneDimensionalForward(FAMILY)
        fd = derivative_plan(prov, CENTRAL_FD)
        for sigma in (3.0, 10.0):
            _, _, d2_sens = prov.pl_with_derivatives(sigma, 30.0)
            _, _, d2_fd = fd.pl_with_derivatives(sigma, 30.0)
            assert d2_sens == pytest.approx(d2_fd, rel=1e-3)

    def test_gradient_consistency(self, curve_1d):
        # analytic J' against central differences across the sigma range
        prov = OneDimensionalForward(FAMILY)
        fd = derivative_plan(prov, CENTRAL_FD)
        for sigma in (3.0, 5.0, 10.0, 20.0):
            _, j1, _ = objective_with_derivatives(prov, curve_1d, sigma)
            _, j1_fd, _ = objective_with_derivatives(fd, curve_1d, sigma)
            assert j1 == pytest.approx(j1_fd, rel=1e-4, abs=1e-12)

    def test_zero_residual_forcing(self):
        # with u == g the sensitivity right-hand side vanishes identically
        dev = FAMILY.device(5.0, 20.0)
        sol = solve_mapped_1d(dev, 0.0, 128)
        sol.values[:] = dev.generation((1.0 - sol.y) * dev.d)
        u1, u2 = sensitivities_1d(dev, 0.0, sol)
        assert np.abs(u1).max() < 1e-14
        assert np.abs(u2).max() < 1e-14


class TestSensitivities2D:
    def setup_method(self):
        self.dev = DeviceConfig(5.0, 20.0, 4.0, GenerationProfile.exponential(10.0))
        self.model = InterfaceModel(0.5, 4.0, 2, (1.0, 0.5), UniformDist(-1, 1))
        self.theta = sample(self.model, 9)
        self.grid = Grid2D.unit(32, 32)

    def test_first_derivative_slope(self):
        _, d_sens, _ = pl_sigma_derivatives_mapped(self.dev, self.model,
                                                   self.theta, self.grid)
        deltas = np.array([0.2, 0.1, 0.05])
        errs = []
        for delta in deltas:
            import dataclasses
            hi = pl_of_sample(dataclasses.replace(self.dev, sigma=5.0 + delta),
                              self.model, self.theta, self.grid)
            lo = pl_of_sample(dataclasses.replace(self.dev, sigma=5.0 - delta),
                              self.model, self.theta, self.grid)
            errs.append(abs((hi - lo) / (2 * delta) - d_sens))
        slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
        assert 1.8 < slope < 2.2

    def test_second_derivative_slope(self):
        import dataclasses
        _, _, d2_sens = pl_sigma_derivatives_mapped(self.dev, self.model,
                                                    self.theta, self.grid)
        deltas = np.array([0.4, 0.2, 0.1])
        errs = []
        base = pl_of_sample(self.dev, self.model, self.theta, self.grid)
        for delta in deltas:
            hi = pl_of_sample(dataclasses.replace(self.dev, sigma=5.0 + delta),
                              self.model, self.theta, self.grid)
            lo = pl_of_sample(dataclasses.replace(self.dev, sigma=5.0 - delta),
                              self.model, self.theta, self.grid)
            errs.append(abs((hi - 2 * base + lo) / delta ** 2 - d2_sens))
        slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
        assert 1.7 < slope < 2.3

    def test_fields_share_boundary_conditions(self):
        sol = solve_mapped_2d(self.dev, self.model, self.theta, self.grid)
        u1, u2 = sensitivities_mapped(self.dev, self.model, self.theta,
                                      self.grid, sol)
        for f in (u1, u2):
            assert np.abs(f.values[0]).max() == 0.0          # Dirichlet
            assert f.values[:, -1] == pytest.approx(f.values[:, 0])


class TestCollocationProvider:
    def test_sensitivity_matches_fd(self):
        model = InterfaceModel(0.3, 4.0, 2, (1.0, 0.5), UniformDist(-1, 1))
        rule = build_rule(TENSOR_GL, 2, 2, (-1.0, 1.0))
        prov = MappedCollocationForward(FAMILY, model, rule, cells=(24, 24))
        fd = derivative_plan(prov, CENTRAL_FD)
        pl_s, d_s, d2_s = prov.pl_with_derivatives(6.0, 30.0)
        pl_f, d_f, d2_f = fd.pl_with_derivatives(6.0, 30.0)
        assert pl_s == pytest.approx(pl_f, rel=1e-12)
        assert d_s == pytest.approx(d_f, rel=1e-5)
        assert d2_s == pytest.approx(d2_f, rel=1e-3)

    def test_fixed_epsilon_scales_amplitude(self):
        model = InterfaceModel(1.0, 4.0, 1, (1.0,), UniformDist(0, 1))
        rule = build_rule(TENSOR_GL, 1, 2, (0.0, 1.0))
        prov = MappedCollocationForward(FAMILY, model, rule, cells=(16, 16),
                                        fixed_epsilon=0.02)
        assert prov._model_for(50.0).hbar == pytest.approx(1.0)
        assert prov._model_for(10.0).hbar == pytest.approx(0.2)


class TestDerivativePlan:
    def test_asymptotic_rejects_sensitivity(self):
        model = InterfaceModel(0.5, 4.0, 1, (1.0,), UniformDist(0, 1))
        prov = AsymptoticForward(FAMILY, model)
        with pytest.raises(ValueError, match="CENTRAL_FD"):
            derivative_plan(prov, SENSITIVITY_PDE)

    def test_unknown_method(self):
        prov = OneDimensionalForward(FAMILY)
        with pytest.raises(ValueError):
            derivative_plan(prov, "complex_step")

    def test_replaces_method(self):
        prov = OneDimensionalForward(FAMILY)
        assert derivative_plan(prov, CENTRAL_FD).deriv == CENTRAL_FD
        assert prov.deriv == SENSITIVITY_PDE


class FakeQuadraticProvider:
    """J is an exact quadratic in sigma: pl(sigma, d) = sigma per device."""

    def pl(self, sigma, d):
        return sigma

    def pl_with_derivatives(self, sigma, d):
        return sigma, 1.0, 0.0


class TestNewton:
    def test_starts_at_optimum(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma0=5.0, sigma_exact=5.0)
        assert trace.iterations <= 1
        assert trace.reason == "step_tolerance"

    def test_self_consistency_run(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma0=25.0, sigma_exact=5.0)
        assert trace.rel_errors[-1] < 1e-3
        assert trace.reason == "step_tolerance"

    def test_descent(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma0=25.0)
        assert all(b <= a for a, b in zip(trace.objectives,
                                          trace.objectives[1:]))

    def test_default_start(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma_exact=5.0)
        assert trace.sigma0 == pytest.approx(25.0)  # quarter of max thickness
        assert trace.rel_errors[-1] < 1e-3

    def test_termination_tolerance_is_strict(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma0=25.0)
        assert abs(trace.sigmas[-1] - trace.sigmas[-2]) < 1e-4

    def test_exact_quadratic_one_step(self):
        curve = PLCurve((10.0, 20.0), (7.0, 7.0))
        trace = newton_estimate(FakeQuadraticProvider(), curve, sigma0=3.0,
                                sigma_exact=7.0)
        # Newton on an exact quadratic lands on the minimizer in one step
        assert trace.sigmas[0] == pytest.approx(7.0)
        assert trace.iterations <= 2

    def test_clamp_warning(self):
        class Diverging:
            def pl(self, sigma, d):
                return sigma

            def pl_with_derivatives(self, sigma, d):
                # strong negative forward curvature deflates J'' so the
                # Newton step overshoots past zero
                return sigma, 100.0, -19990.0

        curve = PLCurve((10.0,), (0.5,))
        with pytest.warns(UserWarning, match="clamped"):
            try:
                newton_estimate(Diverging(), curve, sigma0=1.0,
                                options=NewtonOptions(max_iter=3))
            except EstimationError:
                pass

    def test_max_iterations_raises_with_trace(self):
        class Wobble:
            def pl(self, sigma, d):
                return 1.0 + (np.sin(50 * sigma) + 2) * 0.1

            def pl_with_derivatives(self, sigma, d):
                pl = self.pl(sigma, d)
                return pl, 5 * np.cos(50 * sigma), -250 * np.sin(50 * sigma)

        curve = PLCurve((10.0,), (1.05,))
        with pytest.raises(EstimationError) as err:
            newton_estimate(Wobble(), curve, sigma0=1.0,
                            options=NewtonOptions(max_iter=2, tol=1e-16))
        assert isinstance(err.value.trace, EstimationTrace)
        assert err.value.trace.iterations == 2

    def test_reproducible(self, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        t1 = newton_estimate(prov, curve_1d, sigma0=25.0)
        t2 = newton_estimate(prov, curve_1d, sigma0=25.0)
        assert t1.sigmas == t2.sigmas
        assert t1.objectives == t2.objectives

    def test_trace_csv(self, tmp_path, curve_1d):
        prov = OneDimensionalForward(FAMILY)
        trace = newton_estimate(prov, curve_1d, sigma0=25.0, sigma_exact=5.0)
        path = tmp_path / "trace.csv"
        trace.to_csv(path, config_hash="deadbeef")
        lines = path.read_text().splitlines()
        assert lines[0] == "# config_hash=deadbeef"
        assert lines[1] == "n,sigma,J,alpha,rel_error"
        assert len(lines) == 2 + trace.iterations
