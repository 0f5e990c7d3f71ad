"""Deterministic right-hand side of the chemotaxis-fluid system.

    dn = [Δn - ∇·(u n) - ∇·(n ∇c)] dt
    dc = [Δc - ∇·(u c) - n c] dt
    du = P[Δu - (u·∇)u + n ∇φ] dt

All transport terms are evaluated in divergence form so that the mean of
every n tendency is exactly zero. Products are formed on the N-point grid and
truncated to the Galerkin band, which is alias-free because m <= N/3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    SpectralVectorField,
    TorusGrid,
    _check_grid,
    _fwd,
    _inv,
    _leray_coeffs,
    forward_transform,
)

__all__ = [
    "PotentialField",
    "RhsBundle",
    "LinearPart",
    "advection_scalar",
    "chemotaxis_flux",
    "consumption",
    "ns_nonlinearity",
    "buoyancy",
    "full_rhs",
    "nonlinear_tendencies",
    "potential_preset",
    "taylor_green",
    "crossing_time",
]


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Gravitational potential φ with cached gradient on the grid."""

    phi: SpectralScalarField

    def __post_init__(self):
        if not np.isfinite(self.grad_phi).all() or not np.isfinite(self.phi.values).all():
            raise ValueError("potential and its gradient must be finite on the grid")

    @property
    def grid(self) -> TorusGrid:
        return self.phi.grid

    @cached_property
    def grad_phi(self) -> np.ndarray:
        g = self.grid
        return _inv(np.stack([1j * g.kx_odd * self.phi.coeffs, 1j * g.ky_odd * self.phi.coeffs]), g.N)

    @cached_property
    def grad_phi_linf(self) -> float:
        return float(np.sqrt(self.grad_phi[0] ** 2 + self.grad_phi[1] ** 2).max())

    @property
    def is_constant(self) -> bool:
        return self.grad_phi_linf == 0.0 or not np.any(self.phi.coeffs.ravel()[1:])


def potential_preset(grid: TorusGrid, name: str = "sin-y", amplitude: float = 1.0) -> PotentialField:
    """Named potentials: ``sin-y`` (default), ``sin-x``, ``constant``."""
    x, y = grid.coords
    if name == "sin-y":
        vals = amplitude * np.sin(grid.kappa * y)
    elif name == "sin-x":
        vals = amplitude * np.sin(grid.kappa * x)
    elif name == "constant":
        vals = np.full_like(x, amplitude)
    else:
        raise ValueError(f"unknown potential preset {name!r}")
    return PotentialField(forward_transform(vals, grid))


@dataclass(frozen=True, eq=False)
class LinearPart:
    """Linear operator treated exactly in time: diffusion symbol and mean-flow advection."""

    k2: np.ndarray
    mean_velocity: tuple[float, float]


@dataclass(frozen=True, eq=False)
class RhsBundle:
    dn: SpectralScalarField
    dc: SpectralScalarField
    du: SolenoidalVelocityField
    linear: LinearPart | None = field(default=None)


def _div(grid: TorusGrid, flux_hat: np.ndarray) -> np.ndarray:
    return 1j * grid.kx_odd * flux_hat[0] + 1j * grid.ky_odd * flux_hat[1]


def _truncate(grid: TorusGrid, arr: np.ndarray) -> np.ndarray:
    arr[..., ~grid.mask] = 0.0
    return arr


def advection_scalar(u: SpectralVectorField, f: SpectralScalarField) -> SpectralScalarField:
    """Tendency -∇·(u f)."""
    g = _check_grid(u, f)
    flux = _fwd(u.values * f.values[None], g.N)
    return SpectralScalarField(g, _truncate(g, -_div(g, flux)))


def chemotaxis_flux(n: SpectralScalarField, c: SpectralScalarField) -> SpectralScalarField:
    """Tendency -∇·(n ∇c)."""
    g = _check_grid(n, c)
    grad_c = _inv(np.stack([1j * g.kx_odd * c.coeffs, 1j * g.ky_odd * c.coeffs]), g.N)
    flux = _fwd(n.values[None] * grad_c, g.N)
    return SpectralScalarField(g, _truncate(g, -_div(g, flux)))


def consumption(n: SpectralScalarField, c: SpectralScalarField) -> SpectralScalarField:
    """Tendency -n c."""
    g = _check_grid(n, c)
    return SpectralScalarField(g, _truncate(g, -_fwd(n.values * c.values, g.N)))


def _momentum_flux_div(g: TorusGrid, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    # ∇·(u ⊗ u), component-wise, from the three independent products.
    uxx = _fwd(ux * ux, g.N)
    uxy = _fwd(ux * uy, g.N)
    uyy = _fwd(uy * uy, g.N)
    return np.stack([
        1j * g.kx_odd * uxx + 1j * g.ky_odd * uxy,
        1j * g.kx_odd * uxy + 1j * g.ky_odd * uyy,
    ])


def ns_nonlinearity(u: SpectralVectorField) -> SolenoidalVelocityField:
    """P[-(u·∇)u], evaluated as -P ∇·(u ⊗ u) (equal for divergence-free u)."""
    g = u.grid
    ux, uy = u.values
    out = _truncate(g, -_momentum_flux_div(g, ux, uy))
    return SolenoidalVelocityField(g, _leray_coeffs(g, out))


def buoyancy(n: SpectralScalarField, phi: PotentialField) -> SolenoidalVelocityField:
    """P[n ∇φ]."""
    g = _check_grid(n, phi.phi)
    out = _truncate(g, _fwd(n.values[None] * phi.grad_phi, g.N))
    return SolenoidalVelocityField(g, _leray_coeffs(g, out))


def nonlinear_tendencies(
    grid: TorusGrid,
    n_hat: np.ndarray,
    c_hat: np.ndarray,
    u_hat: np.ndarray,
    phi: PotentialField,
    subtract_mean_flow: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fused evaluation of all non-diffusive tendencies on raw coefficient arrays.

    With ``subtract_mean_flow`` the transport terms use u - ū; the mean flow
    is then part of the exactly integrated linear operator. Returns
    ``(dn, dc, du)`` with ``du`` Leray-projected.
    """
    g = grid
    N = g.N
    ikx, iky = 1j * g.kx_odd, 1j * g.ky_odd
    phys = _inv(np.stack([n_hat, c_hat, u_hat[0], u_hat[1], ikx * c_hat, iky * c_hat]), N)
    n, c, ux, uy, cx, cy = phys
    if subtract_mean_flow:
        ux = ux - u_hat[0, 0, 0].real
        uy = uy - u_hat[1, 0, 0].real

    prods = _fwd(np.stack([
        n * (ux + cx), n * (uy + cy),   # advective + chemotactic flux of n
        c * ux, c * uy,                  # advective flux of c
        n * c,                           # consumption
        ux * ux, ux * uy, uy * uy,       # momentum flux
    ]), N)
    dn = -(ikx * prods[0] + iky * prods[1])
    dc = -(ikx * prods[2] + iky * prods[3]) - prods[4]
    du = -np.stack([ikx * prods[5] + iky * prods[6], ikx * prods[6] + iky * prods[7]])
    if not phi.is_constant:
        du = du + _fwd(n[None] * phi.grad_phi, N)
    _truncate(g, dn)
    _truncate(g, dc)
    _truncate(g, du)
    return dn, dc, _leray_coeffs(g, du)


def full_rhs(state, phi: PotentialField, split_linear: bool = False) -> RhsBundle:
    """Assemble all tendencies for a state exposing ``n``, ``c``, ``u``.

    ``split_linear=False`` returns the complete right-hand side. With
    ``split_linear=True`` diffusion and mean-flow advection are left out of
    the tendencies and returned as ``RhsBundle.linear`` for exact treatment.
    """
    n, c, u = state.n, state.c, state.u
    g = _check_grid(n, c, u, phi.phi)
    dn, dc, du = nonlinear_tendencies(g, n.coeffs, c.coeffs, u.coeffs, phi, subtract_mean_flow=split_linear)
    linear = None
    if split_linear:
        linear = LinearPart(g.k2, u.mean)
    else:
        dn = dn - g.k2 * n.coeffs
        dc = dc - g.k2 * c.coeffs
        du = du - g.k2 * u.coeffs
    return RhsBundle(SpectralScalarField(g, dn), SpectralScalarField(g, dc), SolenoidalVelocityField(g, du), linear)


def taylor_green(grid: TorusGrid, amplitude: float = 1.0, mode: int = 1) -> np.ndarray:
    """(A sin kx cos ky, -A cos kx sin ky) on the grid; divergence-free."""
    x, y = grid.coords
    k = grid.kappa * mode
    return amplitude * np.stack([np.sin(k * x) * np.cos(k * y), -np.cos(k * x) * np.sin(k * y)])


def crossing_time(grid: TorusGrid, velocity: tuple[float, float]) -> float:
    speed = math.hypot(*velocity)
    if speed == 0:
        raise ValueError("zero velocity has no crossing time")
    return grid.L / speed
