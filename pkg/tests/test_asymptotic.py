"""Expansion basis solves, approximant assembly, and order checks.

The second-order identities are checked against direct solves of the full
random-datum problems assembled straight from the fd core (oracles that do
not share the per-mode code path).
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from exdil import interface as iface
from exdil.asymptotic import (assemble_approximant, base_operator, build_basis,
                              expansion_grid, expected_pl, mode_shape,
                              sampled_pl, solve_w0, solve_w1k, solve_w2jk)
from exdil.fd_core import (Field2D, Grid2D, one_sided_dx_at_boundary,
                           trapezoid_2d)
from exdil.forward_mapped import (DeviceConfig, GenerationProfile,
                                  solve_mapped_2d)
from exdil.interface import InterfaceModel, InterfaceSample, UniformDist, \
    moments, sample


def device(sigma=2.0, d=10.0, L=4.0, gen=None):
    return DeviceConfig(sigma, d, L, gen or GenerationProfile.constant(1.0))


def model_of(dev, K=3, hbar=0.5, a=0.0, b=1.0, lambdas=None):
    return InterfaceModel(hbar, dev.L, K, lambdas or (1.0,) * K,
                          UniformDist(a, b))


class TestLeadingOrder:
    def test_w0_closed_form(self):
        dev = device()
        errs = {}
        for nx in (128, 256):
            grid = expansion_grid(dev, nx=nx, nz=8)
            w0 = solve_w0(dev, grid)
            x = grid.y
            exact = 1 - np.cosh((dev.d - x) / dev.sigma) \
                / math.cosh(dev.d / dev.sigma)
            errs[nx] = np.abs(w0.values - exact[:, None]).max()
        assert errs[256] < 2e-5
        assert errs[128] / errs[256] == pytest.approx(4.0, rel=0.1)

    def test_w0_z_constant(self):
        dev = device(gen=GenerationProfile.exponential(5.0))
        w0 = solve_w0(dev, expansion_grid(dev, 32, 32))
        spread = np.abs(w0.values - w0.values[:, :1]).max()
        assert spread < 1e-11

    def test_strip_integral_closed_form(self):
        dev = device()
        basis = build_basis(dev, model_of(dev, K=1), nx=512, nz=8)
        appr = assemble_approximant(basis, epsilon=0.0)
        exact = dev.d - dev.sigma * math.tanh(dev.d / dev.sigma)
        assert appr.i0 == pytest.approx(exact, rel=1e-5)

    def test_zero_data_zero_solution(self):
        # the homogeneous problem with zero boundary datum is identically
        # zero (the trivial case a vanishing generation profile would hit)
        dev = device()
        grid = expansion_grid(dev, 16, 16)
        op = base_operator(dev, grid)
        assert np.abs(op.solve_field(0.0, 0.0).values).max() == 0.0


class TestFirstOrder:
    def test_zero_boundary_slope_gives_zero_mode(self):
        dev = device()
        grid = expansion_grid(dev, 16, 16)
        flat = Field2D(grid, np.ones(grid.shape))  # one-sided slope is zero
        w1 = solve_w1k(dev, grid, 1, flat)
        assert np.abs(w1.values).max() < 1e-14

    def test_linearity_in_datum(self):
        dev = device()
        grid = expansion_grid(dev, 24, 24)
        op = base_operator(dev, grid)
        w0 = solve_w0(dev, grid, op)
        w1 = solve_w1k(dev, grid, 2, w0, op)
        scaled_w0 = Field2D(grid, 3.0 * w0.values)
        w1_scaled = solve_w1k(dev, grid, 2, scaled_w0, op)
        assert w1_scaled.values == pytest.approx(3.0 * w1.values, abs=1e-12)

    def test_mode_reconstruction_matches_direct_solve(self):
        # superposing the per-mode solves equals solving with the full
        # random boundary datum in one shot
        dev = device(sigma=3.0, gen=GenerationProfile.exponential(5.0))
        model = model_of(dev, K=3, a=-1.0, b=1.0)
        theta = sample(model, 5)
        grid = expansion_grid(dev, 32, 32)
        op = base_operator(dev, grid)
        w0 = solve_w0(dev, grid, op)
        w1k = [solve_w1k(dev, grid, k, w0, op) for k in (1, 2, 3)]
        lam_th = np.array(model.lambdas) * np.array(theta.thetas)
        combo = sum(c * w.values for c, w in zip(lam_th, w1k))

        htilde = sum(lam_th[k] * mode_shape(k + 1, dev.L, grid.z)
                     for k in range(3))
        direct = op.solve_field(
            0.0, -dev.d * htilde * one_sided_dx_at_boundary(w0))
        assert direct.values == pytest.approx(combo, abs=1e-11)


class TestSecondOrder:
    def test_symmetrized_assembly_matches_direct_solve(self):
        # pathwise: the symmetrized per-pair fields contracted with
        # theta_j theta_k equal the direct solve with the full quadratic
        # datum of one coefficient draw
        dev = device(sigma=3.0, gen=GenerationProfile.exponential(4.0))
        model = model_of(dev, K=3, a=-1.0, b=1.0)
        theta = sample(model, 11)
        grid = expansion_grid(dev, 32, 32)
        op = base_operator(dev, grid)
        w0 = solve_w0(dev, grid, op)
        w1k = [solve_w1k(dev, grid, k, w0, op) for k in (1, 2, 3)]
        lam_th = np.array(model.lambdas) * np.array(theta.thetas)

        combo = np.zeros(grid.shape)
        for j in range(3):
            for k in range(3):
                jj, kk = min(j, k), max(j, k)
                w2 = solve_w2jk(dev, grid, jj + 1, kk + 1, w1k[jj], w1k[kk], op)
                combo += lam_th[j] * lam_th[k] * w2.values / (1 if j == k else 1)

        htilde = sum(lam_th[k] * mode_shape(k + 1, dev.L, grid.z)
                     for k in range(3))
        w1_full = sum(lam_th[k] * w1k[k].values for k in range(3))
        dx_w1 = one_sided_dx_at_boundary(Field2D(grid, w1_full))
        datum = (-dev.d * htilde * dx_w1
                 + (dev.d * htilde) ** 2 / (2 * dev.sigma ** 2)
                 * dev.generation(dev.d))
        direct = op.solve_field(0.0, datum)
        assert direct.values == pytest.approx(combo, abs=1e-10)

    def test_boundary_datum_vanishes_at_mode_nodes(self):
        dev = device()
        grid = expansion_grid(dev, 16, 16)
        op = base_operator(dev, grid)
        w0 = solve_w0(dev, grid, op)
        w1 = solve_w1k(dev, grid, 1, w0, op)
        w2 = solve_w2jk(dev, grid, 1, 1, w1, w1, op)
        # phi_1 vanishes at z = 0 and z = L/2, hence so does the datum
        assert w2.values[0, 0] == pytest.approx(0.0, abs=1e-13)
        assert w2.values[0, grid.nz // 2] == pytest.approx(0.0, abs=1e-12)


class TestApproximant:
    def test_epsilon_zero_all_orders_agree(self):
        dev = device()
        basis = build_basis(dev, model_of(dev), nx=16, nz=16)
        appr = assemble_approximant(basis, epsilon=0.0)
        mom = moments(UniformDist(0.0, 1.0))
        assert expected_pl(appr, mom, 0) == expected_pl(appr, mom, 1) \
            == expected_pl(appr, mom, 2) == appr.i0

    def test_symmetric_order1_equals_order0_bitwise(self):
        dev = device(gen=GenerationProfile.exponential(5.0))
        model = model_of(dev, K=4, a=-1.0, b=1.0)
        basis = build_basis(dev, model, nx=32, nz=32)
        appr = assemble_approximant(basis, epsilon=0.05)
        mom = moments(model.dist)
        assert expected_pl(appr, mom, 0) == expected_pl(appr, mom, 1)

    def test_order1_moment_arithmetic(self):
        dev = device()
        model = model_of(dev, K=1, a=0.0, b=1.0)
        basis = build_basis(dev, model, nx=16, nz=16)
        appr = assemble_approximant(basis, epsilon=0.1)
        mom = moments(model.dist)
        want = appr.i0 + 0.1 * 0.5 * appr.lambdas[0] * appr.i1[0]
        assert expected_pl(appr, mom, 1) == pytest.approx(want, rel=1e-15)

    def test_mode_integrals_vanish(self):
        # per-mode strip integrals are sine averages, zero to roundoff
        dev = device(gen=GenerationProfile.exponential(5.0))
        basis = build_basis(dev, model_of(dev, K=3), nx=32, nz=32)
        appr = assemble_approximant(basis)
        assert np.abs(appr.i1).max() < 1e-12

    def test_boundary_coefficients_diagonal(self):
        # dx w0(0, .) is z-constant, so the line integrals hit the discrete
        # sine orthogonality: (L/2) delta_jk times the slope
        dev = device()
        model = model_of(dev, K=3)
        basis = build_basis(dev, model, nx=64, nz=32)
        appr = assemble_approximant(basis)
        slope = basis.dx_w0[0]
        want_diag = dev.d ** 2 / (2 * dev.L) * (dev.L / 2) * slope
        offdiag = appr.boundary - np.diag(np.diag(appr.boundary))
        assert np.abs(offdiag).max() < 1e-10 * abs(want_diag)
        assert np.diag(appr.boundary) == pytest.approx(
            np.full(3, want_diag), rel=1e-10)

    def test_sampled_at_zero_is_i0(self):
        dev = device()
        basis = build_basis(dev, model_of(dev, K=2), nx=16, nz=16)
        appr = assemble_approximant(basis, epsilon=0.2)
        assert sampled_pl(appr, InterfaceSample((0.0, 0.0)), 2) == appr.i0

    def test_unsupported_order(self):
        dev = device()
        basis = build_basis(dev, model_of(dev, K=1), nx=16, nz=16)
        appr = assemble_approximant(basis)
        with pytest.raises(ValueError, match="order"):
            expected_pl(appr, moments(UniformDist(0, 1)), 3)

    def test_solve_count_identity(self):
        dev = device()
        for K in (1, 2, 5):
            basis = build_basis(dev, model_of(dev, K=K), nx=16, nz=16)
            assert basis.solve_count == 1 + K + K * (K + 1) // 2
            assert len(basis.w1) == K
            assert len(basis.w2) == K * (K + 1) // 2


class TestOrders:
    def test_pathwise_second_order_error(self):
        # against the mapped solver on a matched grid; the error of the
        # order-2 approximant is cubic in the roughness size
        L = 64.0
        dev = DeviceConfig(12.0, 10.0, L, GenerationProfile.exponential(10.0))
        model = InterfaceModel(1.0, L, 1, (1.0,), UniformDist(0.0, 1.0))
        th = InterfaceSample((0.8,))
        basis = build_basis(dev, model, nx=128, nz=64)
        gridf = Grid2D.unit(128, 64)
        eps_values = [2.0 ** -k for k in range(2, 6)]
        errs0, errs2 = [], []
        for eps in eps_values:
            m = dataclasses.replace(model, hbar=eps * dev.d)
            pl = solve_mapped_2d(dev, m, th, gridf).pl
            appr = assemble_approximant(basis, epsilon=eps)
            errs0.append(abs(sampled_pl(appr, th, 0) - pl))
            errs2.append(abs(sampled_pl(appr, th, 2) - pl))
        slope0 = np.polyfit(np.log(eps_values), np.log(errs0), 1)[0]
        slope2 = np.polyfit(np.log(eps_values), np.log(errs2), 1)[0]
        assert slope0 > 0.8
        assert slope2 > 2.5

    def test_first_order_field_error(self):
        # pathwise field comparison on the strip: interpolate the mapped
        # solution back to strip nodes, compare with w0 + eps*w1
        L = 64.0
        dev = DeviceConfig(12.0, 10.0, L, GenerationProfile.exponential(10.0))
        model = InterfaceModel(1.0, L, 1, (1.0,), UniformDist(0.0, 1.0))
        th = InterfaceSample((0.8,))
        basis = build_basis(dev, model, nx=128, nz=64)
        gridf = Grid2D.unit(128, 64)
        eps_values = [2.0 ** -k for k in range(2, 6)]
        errs = []
        for eps in eps_values:
            m = dataclasses.replace(model, hbar=eps * dev.d)
            sol = solve_mapped_2d(dev, m, th, gridf)
            h = iface.evaluate(m, th, L * gridf.z)
            v1 = (basis.w0.values
                  + eps * model.lambdas[0] * th.thetas[0] * basis.w1[0].values)
            worst = 0.0
            for j in range(gridf.nz + 1):
                xm = h[j] + gridf.y * (dev.d - h[j])
                spline = CubicSpline(xm, sol.field.values[:, j])
                mask = basis.grid.y >= max(h[j], 0.0)
                worst = max(worst, np.abs(
                    spline(basis.grid.y[mask]) - v1[mask, j]).max())
            errs.append(worst)
        slope = np.polyfit(np.log(eps_values), np.log(errs), 1)[0]
        assert slope > 1.8
