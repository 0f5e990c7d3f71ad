"""Fourier representation of real fields on the periodic square [0, L)^2.

Coefficients use the mean-preserving convention ``coeff = fft2(values) / N**2``
so that ``coeff[0, 0]`` is the spatial mean and ``mass = L**2 * coeff[0, 0]``.
Arrays are indexed ``[ix, iy]`` with wavenumbers in ``numpy.fft.fftfreq``
order along both axes.

Galerkin membership: every field built here has zero coefficients for
``max(|kx|, |ky|) > m`` (integer wavenumbers). With ``m <= N/3`` the product
of two member fields, evaluated on the N-point grid and truncated back to
``m``, is free of aliasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi

__all__ = [
    "TorusGrid",
    "SpectralScalarField",
    "SpectralVectorField",
    "SolenoidalVelocityField",
    "forward_transform",
    "forward_vector_transform",
    "inverse_transform",
    "imaginary_residue",
    "conjugate_symmetry_defect",
    "galerkin_project",
    "gradient",
    "divergence",
    "laplacian",
    "leray_project",
    "divergence_defect",
    "inner",
    "norms",
    "grad_norm_sq",
    "lap_norm_sq",
    "entropy_integrals",
    "restrict_modes",
]


@dataclass(frozen=True)
class TorusGrid:
    """Periodic square of side ``L`` sampled on ``N x N`` points.

    ``m`` is the Galerkin cutoff in the max-norm of the integer wavenumber.
    ``dealias_rule`` is the retained fraction of the resolvable band (2/3 by
    default); ``None`` turns the dealiasing constraint off.
    """

    L: float = TWO_PI
    N: int = 64
    m: int = 21
    dealias_rule: float | None = 2.0 / 3.0

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive and finite, got {self.L!r}")
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 4, got {self.N!r}")
        if self.m < 0 or self.m > self.N // 2 - 1:
            raise ValueError(f"m must lie in [0, N/2 - 1] = [0, {self.N // 2 - 1}], got {self.m}")
        if self.dealias_rule is not None:
            if not 0 < self.dealias_rule <= 1:
                raise ValueError(f"dealias_rule must lie in (0, 1], got {self.dealias_rule}")
            if self.m > self.dealias_cutoff:
                raise ValueError(
                    f"m={self.m} exceeds the dealiasing cutoff {self.dealias_cutoff} "
                    f"for N={self.N} (rule {self.dealias_rule:.4g})"
                )

    @property
    def dealias_cutoff(self) -> int:
        if self.dealias_rule is None:
            return self.N // 2 - 1
        return min(self.N // 2 - 1, math.floor(self.dealias_rule * self.N / 2 + 1e-12))

    @property
    def area(self) -> float:
        return self.L * self.L

    @property
    def cell_area(self) -> float:
        return (self.L / self.N) ** 2

    @property
    def kappa(self) -> float:
        """Fundamental wavenumber 2*pi/L."""
        return TWO_PI / self.L

    def with_cutoff(self, m: int) -> "TorusGrid":
        return TorusGrid(self.L, self.N, m, self.dealias_rule)

    @cached_property
    def kint(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, 1.0 / self.N).astype(np.int64)

    @cached_property
    def kx(self) -> np.ndarray:
        return (self.kappa * self.kint)[:, None] * np.ones((1, self.N))

    @cached_property
    def ky(self) -> np.ndarray:
        return np.ones((self.N, 1)) * (self.kappa * self.kint)[None, :]

    @cached_property
    def kx_odd(self) -> np.ndarray:
        # Nyquist column zeroed: odd derivatives of the Nyquist mode are not real.
        k = self.kx.copy()
        k[self.N // 2, :] = 0.0
        return k

    @cached_property
    def ky_odd(self) -> np.ndarray:
        k = self.ky.copy()
        k[:, self.N // 2] = 0.0
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def mask(self) -> np.ndarray:
        a = np.abs(self.kint)
        return (a[:, None] <= self.m) & (a[None, :] <= self.m)

    def mask_for(self, m: int) -> np.ndarray:
        a = np.abs(self.kint)
        return (a[:, None] <= m) & (a[None, :] <= m)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.N) * (self.L / self.N)
        return np.meshgrid(x, x, indexing="ij")


# -- transforms on raw arrays -------------------------------------------------


def _fwd(values: np.ndarray, N: int) -> np.ndarray:
    return sfft.fft2(values) / (N * N)


def _inv(coeffs: np.ndarray, N: int) -> np.ndarray:
    # irfft2 reads only the non-negative ky half, so the result is real by construction.
    return sfft.irfft2(coeffs[..., : N // 2 + 1], s=(N, N)) * (N * N)


def _check_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError(f"grid mismatch: {g} vs {f.grid}")
    return g


@dataclass(frozen=True, eq=False)
class SpectralScalarField:
    """Real scalar field stored as truncated Fourier coefficients (N x N)."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.grid.N, self.grid.N):
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match grid N={self.grid.N}")

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralScalarField":
        return cls(grid, np.zeros((grid.N, grid.N), dtype=complex))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "SpectralScalarField":
        c = np.zeros((grid.N, grid.N), dtype=complex)
        c[0, 0] = value
        return cls(grid, c)

    @cached_property
    def values(self) -> np.ndarray:
        return _inv(self.coeffs, self.grid.N)

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    @property
    def is_real(self) -> bool:
        """Conjugate-symmetry flag: coeff(-k) == conj(coeff(k)) to roundoff."""
        scale = max(np.abs(self.coeffs).max(), 1e-300)
        return conjugate_symmetry_defect(self.coeffs) <= 1e-13 * scale

    def __add__(self, other):
        _check_grid(self, other)
        return SpectralScalarField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        return SpectralScalarField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return SpectralScalarField(self.grid, self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralScalarField(self.grid, -self.coeffs)


@dataclass(frozen=True, eq=False)
class SpectralVectorField:
    """Two-component real vector field, coefficients of shape (2, N, N)."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (2, self.grid.N, self.grid.N):
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match (2, {self.grid.N}, {self.grid.N})")

    @classmethod
    def zeros(cls, grid: TorusGrid):
        return cls(grid, np.zeros((2, grid.N, grid.N), dtype=complex))

    @cached_property
    def values(self) -> np.ndarray:
        return _inv(self.coeffs, self.grid.N)

    @property
    def mean(self) -> tuple[float, float]:
        return float(self.coeffs[0, 0, 0].real), float(self.coeffs[1, 0, 0].real)

    def component(self, i: int) -> SpectralScalarField:
        return SpectralScalarField(self.grid, self.coeffs[i])

    def _wrap(self, coeffs):
        return SpectralVectorField(self.grid, coeffs)

    def __add__(self, other):
        _check_grid(self, other)
        return self._wrap(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        return self._wrap(self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return self._wrap(self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.coeffs)


class SolenoidalVelocityField(SpectralVectorField):
    """Vector field with k . u(k) = 0 for every mode.

    Only ``leray_project`` and operations that preserve the constraint
    (sums, scalar multiples) should construct one.
    """

    def _wrap(self, coeffs):
        return SolenoidalVelocityField(self.grid, coeffs)

    def __add__(self, other):
        _check_grid(self, other)
        cls = SolenoidalVelocityField if isinstance(other, SolenoidalVelocityField) else SpectralVectorField
        return cls(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        cls = SolenoidalVelocityField if isinstance(other, SolenoidalVelocityField) else SpectralVectorField
        return cls(self.grid, self.coeffs - other.coeffs)

    @classmethod
    def zeros(cls, grid: TorusGrid):
        return cls(grid, np.zeros((2, grid.N, grid.N), dtype=complex))


# -- operations ---------------------------------------------------------------


def forward_transform(values: np.ndarray, grid: TorusGrid) -> SpectralScalarField:
    """Transform real grid values and apply the Galerkin projection P_m."""
    values = np.asarray(values)
    if values.shape != (grid.N, grid.N):
        raise ValueError(f"expected a {grid.N}x{grid.N} array, got shape {values.shape}")
    if np.iscomplexobj(values):
        if np.abs(values.imag).max() > 0:
            raise ValueError("forward_transform expects real-valued input")
        values = values.real
    coeffs = _fwd(values.astype(float, copy=False), grid.N)
    coeffs[~grid.mask] = 0.0
    return SpectralScalarField(grid, coeffs)


def forward_vector_transform(values: np.ndarray, grid: TorusGrid) -> SpectralVectorField:
    values = np.asarray(values, dtype=float)
    if values.shape != (2, grid.N, grid.N):
        raise ValueError(f"expected a (2, {grid.N}, {grid.N}) array, got shape {values.shape}")
    coeffs = _fwd(values, grid.N)
    coeffs[:, ~grid.mask] = 0.0
    return SpectralVectorField(grid, coeffs)


def inverse_transform(field) -> np.ndarray:
    return field.values


def imaginary_residue(field) -> float:
    """Largest imaginary part of the full complex inverse, relative to the field size."""
    N = field.grid.N
    full = sfft.ifft2(field.coeffs) * (N * N)
    scale = max(np.abs(full.real).max(), 1e-300)
    return float(np.abs(full.imag).max() / scale)


def conjugate_symmetry_defect(coeffs: np.ndarray) -> float:
    flipped = np.roll(np.flip(coeffs, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))
    return float(np.abs(coeffs - np.conj(flipped)).max())


def galerkin_project(field, m_new: int):
    """Truncate to modes with max(|kx|, |ky|) <= m_new.

    The result lives on the same N-point grid with cutoff ``m_new``.
    """
    g = field.grid
    if m_new > g.m or m_new < 0:
        raise ValueError(f"m_new={m_new} must lie in [0, stored cutoff {g.m}]")
    g_new = g.with_cutoff(m_new)
    coeffs = field.coeffs * g_new.mask
    return type(field)(g_new, coeffs)


def gradient(f: SpectralScalarField) -> SpectralVectorField:
    g = f.grid
    return SpectralVectorField(g, np.stack([1j * g.kx_odd * f.coeffs, 1j * g.ky_odd * f.coeffs]))


def divergence(v: SpectralVectorField) -> SpectralScalarField:
    g = v.grid
    return SpectralScalarField(g, 1j * g.kx_odd * v.coeffs[0] + 1j * g.ky_odd * v.coeffs[1])


def laplacian(f):
    g = f.grid
    return type(f)(g, -g.k2 * f.coeffs)


def _leray_coeffs(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    kdotu = grid.kx * u[0] + grid.ky * u[1]
    w = kdotu * grid.inv_k2
    return np.stack([u[0] - grid.kx * w, u[1] - grid.ky * w])


def leray_project(raw) -> SolenoidalVelocityField:
    """Orthogonal projection onto divergence-free fields; the mean passes through."""
    return SolenoidalVelocityField(raw.grid, _leray_coeffs(raw.grid, raw.coeffs))


def divergence_defect(v: SpectralVectorField) -> float:
    """max_k |k . u(k)| over all stored modes."""
    g = v.grid
    return float(np.abs(g.kx * v.coeffs[0] + g.ky * v.coeffs[1]).max())


def inner(a, b) -> float:
    """L^2 inner product computed by Parseval."""
    _check_grid(a, b)
    return float(a.grid.area * np.vdot(b.coeffs, a.coeffs).real)


def _sq(coeffs: np.ndarray) -> float:
    return float(np.vdot(coeffs, coeffs).real)


def grad_norm_sq(f) -> float:
    """||grad f||^2 (summed over components for vector fields)."""
    g = f.grid
    return g.area * float(np.sum(g.k2 * np.abs(f.coeffs) ** 2))


def lap_norm_sq(f) -> float:
    g = f.grid
    return g.area * float(np.sum(g.k2**2 * np.abs(f.coeffs) ** 2))


def norms(field) -> dict:
    """l2, h1 (spectral) and l1, linf, mass (physical grid) of a scalar or vector field."""
    g = field.grid
    l2sq = g.area * _sq(field.coeffs)
    h1sq = l2sq + grad_norm_sq(field)
    vals = field.values
    if vals.ndim == 3:
        pointwise = np.sqrt(vals[0] ** 2 + vals[1] ** 2)
        mass = (g.area * float(field.coeffs[0, 0, 0].real), g.area * float(field.coeffs[1, 0, 0].real))
    else:
        pointwise = np.abs(vals)
        mass = g.area * float(field.coeffs[0, 0].real)
    return {
        "l2": math.sqrt(l2sq),
        "h1": math.sqrt(h1sq),
        "l1": g.cell_area * float(pointwise.sum()),
        "linf": float(pointwise.max()),
        "mass": mass,
    }


def restrict_modes(coeffs: np.ndarray, N: int, m: int) -> np.ndarray:
    """Centered (2m+1) x (2m+1) block of modes |k|_inf <= m (leading axes kept)."""
    idx = np.r_[np.arange(N - m, N), np.arange(0, m + 1)]
    return coeffs[..., idx[:, None], idx[None, :]]


def _grid_spectrum(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    # Full-resolution spectrum of non-band-limited grid data (no Galerkin truncation).
    return _fwd(values, grid.N)


def entropy_integrals(n: SpectralScalarField, c: SpectralScalarField, eps_c: float = 1e-12) -> dict:
    """Grid quadratures of the entropy functional and its dissipation pieces.

    ``phi_n`` integrates (n+1) ln(n+1) over cells with n > -1; cells outside
    are counted, not integrated. Square roots of c use ``max(c, eps_c)``.
    """
    grid = _check_grid(n, c)
    dA = grid.cell_area
    nv = n.values
    cv = c.values

    ok = nv > -1.0
    n1 = nv[ok] + 1.0
    phi_n = dA * float(np.sum(n1 * np.log(n1)))

    s = np.sqrt(np.maximum(cv, eps_c))
    s_hat = _grid_spectrum(s, grid)
    sx = _inv(1j * grid.kx_odd * s_hat, grid.N)
    sy = _inv(1j * grid.ky_odd * s_hat, grid.N)
    grad_s_sq = sx**2 + sy**2
    grad_sqrt_c_sq = grid.area * float(np.sum((grid.kx_odd**2 + grid.ky_odd**2) * np.abs(s_hat) ** 2))
    lap_sqrt_c_sq = grid.area * float(np.sum(grid.k2**2 * np.abs(s_hat) ** 2))

    q_hat = _grid_spectrum(np.sqrt(np.maximum(nv + 1.0, 0.0)), grid)
    grad_sqrt_n1_sq = grid.area * float(np.sum((grid.kx_odd**2 + grid.ky_odd**2) * np.abs(q_hat) ** 2))

    return {
        "phi_n": phi_n,
        "grad_sqrt_c_sq": grad_sqrt_c_sq,
        "cross_terms": {
            "grad_sqrt_n1_sq": grad_sqrt_n1_sq,
            "lap_sqrt_c_sq": lap_sqrt_c_sq,
            "quartic_sqrt_c": dA * float(np.sum(grad_s_sq**2 / s**2)),
            "n_grad_sqrt_c_sq": dA * float(np.sum(np.abs(nv) * grad_s_sq)),
        },
        "violations": {
            "n_log_domain": int(np.count_nonzero(~ok)),
            "n_negative": int(np.count_nonzero(nv < 0)),
            "c_negative": int(np.count_nonzero(cv < 0)),
            "c_floored": int(np.count_nonzero(cv < eps_c)),
        },
        "min_n": float(nv.min()),
        "min_c": float(cv.min()),
    }
