import math
from types import SimpleNamespace

import numpy as np
import pytest

from levycns.dynamics import (
    PotentialField,
    advection_scalar,
    buoyancy,
    chemotaxis_flux,
    consumption,
    crossing_time,
    full_rhs,
    ns_nonlinearity,
    potential_preset,
    taylor_green,
)
from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    TorusGrid,
    divergence_defect,
    forward_transform,
    forward_vector_transform,
    inner,
    leray_project,
)

from conftest import random_scalar, random_velocity


def positive_scalar(grid, rng, base=2.0):
    f = random_scalar(grid, rng, kmax=4)
    vals = f.values
    return forward_transform(base + vals / np.abs(vals).max(), grid)


class TestOperators:
    def test_advection_is_skew(self, grid, rng):
        u = random_velocity(grid, rng)
        f = random_scalar(grid, rng, kmax=grid.m // 2)
        assert abs(inner(advection_scalar(u, f), f)) < 1e-10 * math.sqrt(inner(f, f))

    def test_advection_conserves_mean(self, grid, rng):
        u, f = random_velocity(grid, rng), random_scalar(grid, rng)
        assert abs(advection_scalar(u, f).coeffs[0, 0]) < 1e-15

    def test_chemotaxis_conserves_mean(self, grid, rng):
        n, c = positive_scalar(grid, rng), positive_scalar(grid, rng)
        assert abs(chemotaxis_flux(n, c).coeffs[0, 0]) < 1e-15

    def test_chemotaxis_oracle(self):
        g = TorusGrid(N=32, m=10)
        x, y = g.coords
        n = forward_transform(np.full_like(x, 2.0), g)
        c = forward_transform(np.cos(x), g)
        # -∇·(2 ∇cos x) = 2 cos x
        assert np.allclose(chemotaxis_flux(n, c).values, 2 * np.cos(x), atol=1e-13)

    def test_consumption_sign(self, grid, rng):
        n, c = positive_scalar(grid, rng), positive_scalar(grid, rng)
        assert consumption(n, c).coeffs[0, 0].real < 0

    def test_ns_nonlinearity_orthogonal(self, grid, rng):
        u = random_velocity(grid, rng)
        low = leray_project(forward_vector_transform(u.values, grid))
        lowered = SolenoidalVelocityField(grid, np.where(
            np.maximum(np.abs(grid.kint)[:, None], np.abs(grid.kint)[None, :]) <= grid.m // 2, low.coeffs, 0.0))
        assert abs(inner(ns_nonlinearity(lowered), lowered)) < 1e-10

    def test_taylor_green_is_steady_for_euler(self, grid):
        u = leray_project(forward_vector_transform(taylor_green(grid, 1.3, 2), grid))
        assert np.abs(ns_nonlinearity(u).coeffs).max() < 1e-13

    def test_buoyancy_of_gradient_vanishes(self, grid):
        n = SpectralScalarField.constant(grid, 1.0)
        assert np.abs(buoyancy(n, potential_preset(grid, "sin-x")).coeffs).max() < 1e-15

    def test_buoyancy_is_solenoidal(self, grid, rng):
        n = positive_scalar(grid, rng)
        assert divergence_defect(buoyancy(n, potential_preset(grid, "sin-y"))) < 1e-13

    def test_constant_potential(self, grid):
        assert potential_preset(grid, "constant", 4.0).is_constant
        assert not potential_preset(grid).is_constant

    def test_unknown_potential(self, grid):
        with pytest.raises(ValueError):
            potential_preset(grid, "cos-z")

    def test_nonfinite_potential_rejected(self, grid):
        coeffs = np.zeros((grid.N, grid.N), complex)
        coeffs[1, 0] = np.nan
        with pytest.raises(ValueError):
            PotentialField(SpectralScalarField(grid, coeffs))


class TestFullRhs:
    def test_matches_operator_sum(self, grid, rng):
        n, c = positive_scalar(grid, rng), positive_scalar(grid, rng)
        u = random_velocity(grid, rng)
        phi = potential_preset(grid)
        rhs = full_rhs(SimpleNamespace(n=n, c=c, u=u), phi)
        dn = advection_scalar(u, n).coeffs + chemotaxis_flux(n, c).coeffs - grid.k2 * n.coeffs
        dc = advection_scalar(u, c).coeffs + consumption(n, c).coeffs - grid.k2 * c.coeffs
        du = ns_nonlinearity(u).coeffs + buoyancy(n, phi).coeffs - grid.k2 * u.coeffs
        assert np.allclose(rhs.dn.coeffs, dn, atol=1e-12)
        assert np.allclose(rhs.dc.coeffs, dc, atol=1e-12)
        assert np.allclose(rhs.du.coeffs, du, atol=1e-12)

    def test_split_linear_moves_diffusion_and_mean_flow(self, grid, rng):
        n, c = positive_scalar(grid, rng), positive_scalar(grid, rng)
        x, _ = grid.coords
        u = leray_project(forward_vector_transform(np.stack([np.full_like(x, 0.7), np.zeros_like(x)]), grid))
        rhs = full_rhs(SimpleNamespace(n=n, c=c, u=u), potential_preset(grid, "constant"), split_linear=True)
        assert rhs.linear.mean_velocity == pytest.approx((0.7, 0.0))
        assert np.allclose(rhs.dn.coeffs, chemotaxis_flux(n, c).coeffs, atol=1e-12)

    def test_crossing_time(self, grid):
        assert crossing_time(grid, (3.0, 4.0)) == pytest.approx(2 * math.pi / 5)
        with pytest.raises(ValueError):
            crossing_time(grid, (0.0, 0.0))


class TestReductions:
    def test_consumption_is_nonpositive(self, grid, rng):
        n, c = positive_scalar(grid, rng), positive_scalar(grid, rng)
        assert consumption(n, c).values.max() <= 0.0

    def test_unit_density_consumption(self, grid):
        n = forward_transform(np.ones((grid.N, grid.N)), grid)
        c = forward_transform(np.full((grid.N, grid.N), 0.8), grid)
        assert np.allclose(consumption(n, c).values, -0.8, atol=1e-15)

    def test_constant_state(self, grid):
        ones = np.ones((grid.N, grid.N))
        state = SimpleNamespace(
            n=forward_transform(1.5 * ones, grid),
            c=forward_transform(0.4 * ones, grid),
            u=SolenoidalVelocityField(grid, np.zeros((2, grid.N, grid.N), complex)),
        )
        rhs = full_rhs(state, potential_preset(grid, "constant"))
        assert np.abs(rhs.dn.coeffs).max() == 0.0
        assert np.allclose(rhs.dc.values, -0.6, atol=1e-15)
        assert np.abs(rhs.du.coeffs).max() == 0.0

    def test_density_tendency_has_zero_mean(self, grid, rng):
        state = SimpleNamespace(n=positive_scalar(grid, rng), c=positive_scalar(grid, rng), u=random_velocity(grid, rng))
        rhs = full_rhs(state, potential_preset(grid, "sin-y"))
        assert abs(rhs.dn.coeffs[0, 0]) <= 1e-14
