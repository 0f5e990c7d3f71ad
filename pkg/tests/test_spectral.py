import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    TorusGrid,
    conjugate_symmetry_defect,
    divergence,
    divergence_defect,
    entropy_integrals,
    forward_transform,
    forward_vector_transform,
    galerkin_project,
    grad_norm_sq,
    gradient,
    imaginary_residue,
    inner,
    inverse_transform,
    lap_norm_sq,
    laplacian,
    leray_project,
    norms,
    restrict_modes,
)

from conftest import random_scalar, random_velocity


class TestTorusGrid:
    def test_defaults(self):
        g = TorusGrid()
        assert g.N == 64 and g.m == 21
        assert g.area == pytest.approx(4 * math.pi**2)
        assert g.kappa == pytest.approx(1.0)

    @pytest.mark.parametrize("N", [3, 6, 48, 100])
    def test_rejects_non_power_of_two(self, N):
        with pytest.raises(ValueError):
            TorusGrid(N=N, m=1)

    def test_rejects_cutoff_above_dealias_limit(self):
        with pytest.raises(ValueError):
            TorusGrid(N=32, m=11)
        TorusGrid(N=32, m=15, dealias_rule=None)

    def test_mask_counts_retained_modes(self, grid):
        assert int(grid.mask.sum()) == (2 * grid.m + 1) ** 2
        assert int(grid.mask_for(3).sum()) == 49

    def test_with_cutoff(self, grid):
        g2 = grid.with_cutoff(5)
        assert g2.m == 5 and g2.N == grid.N


class TestTransforms:
    def test_cosine_has_two_modes(self, grid):
        x, y = grid.coords
        f = forward_transform(np.cos(x), grid)
        assert np.count_nonzero(np.abs(f.coeffs) > 1e-12) == 2
        assert norms(f)["l2"] ** 2 == pytest.approx(2 * math.pi**2, rel=1e-12)

    def test_constant_mean_and_mass(self, grid):
        f = forward_transform(np.full((grid.N, grid.N), 3.0), grid)
        assert f.mean == pytest.approx(3.0)
        assert norms(f)["mass"] == pytest.approx(3.0 * grid.area)

    def test_rejects_wrong_shape(self, grid):
        with pytest.raises(ValueError):
            forward_transform(np.zeros((grid.N, grid.N + 1)), grid)

    def test_rejects_complex_input(self, grid):
        with pytest.raises(ValueError):
            forward_transform(np.full((grid.N, grid.N), 1j), grid)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_round_trip_band_limited(self, seed):
        g = TorusGrid(N=32, m=10)
        f = random_scalar(g, np.random.default_rng(seed))
        back = forward_transform(inverse_transform(f), g)
        assert np.allclose(back.coeffs, f.coeffs, atol=1e-13)
        assert imaginary_residue(f) < 1e-13
        assert conjugate_symmetry_defect(f.coeffs) < 1e-13

    def test_projection_drops_high_modes(self, grid):
        x, y = grid.coords
        f = forward_transform(np.cos(3 * x) + np.cos(9 * y), grid)
        p = galerkin_project(f, 5)
        assert np.allclose(p.values, np.cos(3 * x), atol=1e-13)

    def test_restrict_modes_matches_coarse_grid(self):
        fine, coarse = TorusGrid(N=64, m=21), TorusGrid(N=32, m=10)
        xf, yf = fine.coords
        xc, yc = coarse.coords
        f = forward_transform(np.sin(2 * xf) * np.cos(7 * yf) + np.cos(15 * xf), fine)
        c = forward_transform(np.sin(2 * xc) * np.cos(7 * yc), coarse)
        assert np.allclose(restrict_modes(f.coeffs, fine.N, coarse.m), restrict_modes(c.coeffs, coarse.N, coarse.m), atol=1e-14)


class TestCalculus:
    def test_gradient_of_sine(self, grid):
        x, y = grid.coords
        f = forward_transform(np.sin(2 * x) * np.cos(3 * y), grid)
        g = gradient(f).values
        assert np.allclose(g[0], 2 * np.cos(2 * x) * np.cos(3 * y), atol=1e-12)
        assert np.allclose(g[1], -3 * np.sin(2 * x) * np.sin(3 * y), atol=1e-12)

    def test_laplacian_eigenfunction(self, grid):
        x, y = grid.coords
        f = forward_transform(np.cos(2 * x + 3 * y), grid)
        assert np.allclose(laplacian(f).values, -13 * np.cos(2 * x + 3 * y), atol=1e-11)

    def test_div_grad_is_laplacian(self, grid, rng):
        f = random_scalar(grid, rng)
        assert np.allclose(divergence(gradient(f)).coeffs, laplacian(f).coeffs, atol=1e-12)

    def test_norm_identities(self, grid, rng):
        f = random_scalar(grid, rng)
        assert grad_norm_sq(f) == pytest.approx(inner(gradient(f), gradient(f)), rel=1e-12)
        assert lap_norm_sq(f) == pytest.approx(inner(laplacian(f), laplacian(f)), rel=1e-12)

    def test_inner_matches_quadrature(self, grid, rng):
        a, b = random_scalar(grid, rng), random_scalar(grid, rng)
        quad = grid.cell_area * float(np.sum(a.values * b.values))
        assert inner(a, b) == pytest.approx(quad, rel=1e-12)


class TestLeray:
    def test_projection_is_divergence_free(self, grid, rng):
        u = random_velocity(grid, rng)
        assert isinstance(u, SolenoidalVelocityField)
        assert divergence_defect(u) < 1e-13

    def test_idempotent(self, grid, rng):
        u = random_velocity(grid, rng)
        assert np.allclose(leray_project(u).coeffs, u.coeffs, atol=1e-15)

    def test_removes_gradients(self, grid, rng):
        f = random_scalar(grid, rng)
        assert np.abs(leray_project(gradient(f)).coeffs).max() < 1e-13

    def test_keeps_mean_flow(self, grid):
        v = forward_vector_transform(np.stack([np.full((grid.N, grid.N), 1.5), np.zeros((grid.N, grid.N))]), grid)
        assert leray_project(v).mean == pytest.approx((1.5, 0.0))


class TestEntropy:
    def test_unit_density(self, grid):
        one = SpectralScalarField.constant(grid, 1.0)
        ent = entropy_integrals(one, one)
        # (n + 1) ln(n + 1) = 2 ln 2 on area 4 pi^2
        assert ent["phi_n"] == pytest.approx(8 * math.pi**2 * math.log(2), rel=1e-12)
        assert ent["grad_sqrt_c_sq"] == pytest.approx(0.0, abs=1e-20)
        assert all(v == 0 for v in ent["violations"].values())

    def test_counts_violations(self, grid):
        x, y = grid.coords
        n = forward_transform(np.cos(x) - 0.5, grid)
        c = forward_transform(np.cos(y), grid)
        v = entropy_integrals(n, c)["violations"]
        assert v["n_negative"] > 0 and v["c_negative"] > 0 and v["c_floored"] >= v["c_negative"]

    def test_grad_sqrt_c_oracle(self):
        g = TorusGrid(N=128, m=42)
        x, y = g.coords
        # sqrt(c) = 2 + cos x  =>  ||grad sqrt c||^2 = ∫ sin^2 x = 2 pi^2
        c = forward_transform((2 + np.cos(x)) ** 2, g)
        assert entropy_integrals(c, c)["grad_sqrt_c_sq"] == pytest.approx(2 * math.pi**2, rel=1e-10)
