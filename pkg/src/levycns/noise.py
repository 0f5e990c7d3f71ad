"""Stochastic forcing of the velocity equation.

Gaussian part: truncated cylindrical Wiener noise acting through

    G(u) dW = sum_i (b_i · ∇u + c_i u) dW_i

projected onto divergence-free fields. Jump part: compound Poisson process
with finite intensity ``rate`` and radius law on (0, 1), acting through
F(u; z) = |z| u, compensated by -mu_1 u dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralVectorField,
    TorusGrid,
    _fwd,
    _inv,
    _leray_coeffs,
    grad_norm_sq,
)

__all__ = [
    "RadiusLaw",
    "JumpDriverConfig",
    "WienerDriverConfig",
    "NoiseIncrement",
    "HypothesisReport",
    "wiener_wavevectors",
    "wiener_mode_functions",
    "hs_norm_sq",
    "work_rates",
    "sample_increment",
    "apply_gaussian",
    "gaussian_modes",
    "apply_jump",
    "compensator_drift",
    "lambda0_threshold",
    "lambda_constants",
    "margin_check",
    "verify_hypotheses",
    "default_sample_states",
]


# -- jumps --------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusLaw:
    """Beta(a, b) law for the jump radius |z| on (0, 1)."""

    a: float = 2.0
    b: float = 2.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta parameters must be positive, got a={self.a}, b={self.b}")

    def moment(self, p: float) -> float:
        """E[r^p]; exact product form for integer p."""
        if float(p).is_integer():
            out = 1.0
            for j in range(int(p)):
                out *= (self.a + j) / (self.a + self.b + j)
            return out
        return math.exp(
            math.lgamma(self.a + p) + math.lgamma(self.a + self.b)
            - math.lgamma(self.a) - math.lgamma(self.a + self.b + p)
        )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.beta(self.a, self.b, size)


@dataclass(frozen=True)
class JumpDriverConfig:
    """Finite intensity measure: ``rate`` = nu(Z), radius distribution ``radius_law``."""

    rate: float = 0.0
    radius_law: RadiusLaw = field(default_factory=RadiusLaw)

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"jump rate must be finite and non-negative, got {self.rate}")

    def mu(self, p: float) -> float:
        """mu_p = ∫ |z|^p nu(dz) = rate E[r^p]."""
        return self.rate * self.radius_law.moment(p)

    @cached_property
    def moments(self) -> dict[int, float]:
        return {p: self.mu(p) for p in (1, 2, 4)}

    @property
    def active(self) -> bool:
        return self.rate > 0


# -- Wiener modes ---------------------------------------------------------------


def wiener_wavevectors(count: int) -> list[tuple[int, int]]:
    """First ``count`` integer wavevectors of the upper half-plane, ordered by (|q|^2, -qx, -qy).

    The enumeration covers complete discs, so a shorter list is always a prefix of a longer one.
    """
    R = 1
    while True:
        disc = [
            (qx, qy)
            for qx in range(0, R + 1)
            for qy in range(-R, R + 1)
            if 0 < qx * qx + qy * qy <= R * R and (qx > 0 or qy > 0)
        ]
        if len(disc) >= count:
            disc.sort(key=lambda q: (q[0] ** 2 + q[1] ** 2, -q[0], -q[1]))
            return disc[:count]
        R += 1


_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True, eq=False)
class WienerDriverConfig:
    """M_W scalar Wiener modes with coefficient fields sampled on the grid.

    ``b_values`` has shape (M_W, 2, N, N) and ``c_values`` (M_W, N, N);
    ``amplitude`` multiplies every mode.
    """

    grid: TorusGrid
    b_values: np.ndarray
    c_values: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        N = self.grid.N
        M = self.b_values.shape[0]
        if self.b_values.shape != (M, 2, N, N) or self.c_values.shape != (M, N, N):
            raise ValueError(
                f"coefficient shapes {self.b_values.shape}, {self.c_values.shape} do not match M_W={M}, N={N}"
            )
        if not (np.isfinite(self.b_values).all() and np.isfinite(self.c_values).all()):
            raise ValueError("Wiener coefficient fields must be finite")

    @property
    def M_W(self) -> int:
        return self.b_values.shape[0]

    @property
    def active(self) -> bool:
        return self.M_W > 0 and self.amplitude != 0

    @cached_property
    def summability(self) -> float:
        """sum_i ||b_i||_inf^2 + ||c_i||_inf^2 on the grid."""
        b_inf = np.sqrt(self.b_values[:, 0] ** 2 + self.b_values[:, 1] ** 2).max(axis=(1, 2)) if self.M_W else np.zeros(0)
        c_inf = np.abs(self.c_values).max(axis=(1, 2)) if self.M_W else np.zeros(0)
        return float(np.sum(b_inf**2 + c_inf**2))

    @cached_property
    def c_sup_sq(self) -> float:
        if not self.M_W:
            return 0.0
        return float(np.sum(np.abs(self.c_values).max(axis=(1, 2)) ** 2))

    @property
    def pure_c(self) -> bool:
        return not np.any(self.b_values)

    @classmethod
    def empty(cls, grid: TorusGrid) -> "WienerDriverConfig":
        N = grid.N
        return cls(grid, np.zeros((0, 2, N, N)), np.zeros((0, N, N)), 0.0)

    @classmethod
    def from_fields(cls, grid: TorusGrid, b_list: Sequence, c_list: Sequence, amplitude: float = 1.0):
        if len(b_list) != len(c_list):
            raise ValueError("b_fields and c_fields must have the same length")
        N = grid.N
        b = np.stack([np.asarray(v, dtype=float) for v in b_list]) if b_list else np.zeros((0, 2, N, N))
        c = np.stack([np.asarray(v, dtype=float) for v in c_list]) if c_list else np.zeros((0, N, N))
        return cls(grid, b, c, amplitude)

    @classmethod
    def parametric(
        cls,
        grid: TorusGrid,
        modes: int,
        amplitude: float,
        b_scale: float = 0.0,
        c_scale: float = 1.0,
    ) -> "WienerDriverConfig":
        """Deterministic family independent of N and m (see ``wiener_mode_functions``)."""
        x, y = grid.coords
        bs, cs = [], []
        for i in range(modes):
            b, c = wiener_mode_functions(i, b_scale, c_scale, grid.kappa)
            bs.append(np.stack(b(x, y)))
            cs.append(c(x, y))
        return cls.from_fields(grid, bs, cs, amplitude)


def wiener_mode_functions(i: int, b_scale: float, c_scale: float, kappa: float):
    """Analytic coefficient fields of mode i of the parametric family.

    Mode i uses wavevector q_i from ``wiener_wavevectors``, weight 1/(i+1)
    and phase i times the golden angle:

        theta_i = kappa q_i · x + phase_i
        c_i = c_scale w_i cos(theta_i)
        b_i = b_scale w_i q_i^perp / |q_i| sin(theta_i)      (divergence-free)

    Returns callables ``b(x, y) -> (bx, by)`` and ``c(x, y)``.
    """
    qx, qy = wiener_wavevectors(i + 1)[i]
    w = 1.0 / (i + 1)
    phase = i * _GOLDEN_ANGLE
    qn = math.hypot(qx, qy)

    def theta(x, y):
        return kappa * (qx * x + qy * y) + phase

    def b(x, y):
        s = b_scale * w * np.sin(theta(x, y))
        return -qy / qn * s, qx / qn * s

    def c(x, y):
        return c_scale * w * np.cos(theta(x, y))

    return b, c


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    dt: float
    dW: np.ndarray
    jump_times: np.ndarray
    jump_radii: np.ndarray
    compensator_scale: float

    @property
    def n_jumps(self) -> int:
        return int(self.jump_radii.size)

    @property
    def jumps(self) -> list[tuple[float, float]]:
        return list(zip(self.jump_times.tolist(), self.jump_radii.tolist()))


def sample_increment(
    wiener: WienerDriverConfig | None,
    jump: JumpDriverConfig | None,
    dt: float,
    rng: np.random.Generator,
) -> NoiseIncrement:
    """Draw one step of noise. Draw order is fixed: dW, jump count, times, radii.

    The stream consumed per step depends only on M_W and the jump law, never
    on the grid, so runs at different cutoffs see identical noise.
    """
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    M = wiener.M_W if wiener is not None else 0
    dW = rng.standard_normal(M) * math.sqrt(dt)
    if jump is not None and jump.active and dt > 0:
        k = int(rng.poisson(jump.rate * dt))
        times = np.sort(rng.uniform(0.0, dt, k))
        radii = jump.radius_law.sample(rng, k)
        comp = jump.mu(1) * dt
    else:
        times = radii = np.zeros(0)
        comp = 0.0
    return NoiseIncrement(dt, dW, times, radii, comp)


# -- application ----------------------------------------------------------------


def _check_wiener(u: SpectralVectorField, cfg: WienerDriverConfig):
    if u.grid != cfg.grid:
        raise ValueError(f"grid mismatch between velocity {u.grid} and Wiener config {cfg.grid}")


def _velocity_and_gradient(u: SpectralVectorField) -> np.ndarray:
    g = u.grid
    ikx, iky = 1j * g.kx_odd, 1j * g.ky_odd
    uh = u.coeffs
    # rows: ux, uy, d_x ux, d_y ux, d_x uy, d_y uy
    return _inv(np.stack([uh[0], uh[1], ikx * uh[0], iky * uh[0], ikx * uh[1], iky * uh[1]]), g.N)


def _project(g: TorusGrid, vals: np.ndarray) -> np.ndarray:
    out = _fwd(vals, g.N)
    out[..., ~g.mask] = 0.0
    return _leray_coeffs(g, out) if out.ndim == 3 else np.stack([_leray_coeffs(g, o) for o in out])


def _operator_on(phys: np.ndarray, bx, by, cc) -> np.ndarray:
    ux, uy, uxx, uxy, uyx, uyy = phys
    return np.stack([bx * uxx + by * uxy + cc * ux, bx * uyx + by * uyy + cc * uy])


def apply_gaussian(u: SpectralVectorField, inc: NoiseIncrement, cfg: WienerDriverConfig) -> SolenoidalVelocityField:
    """P[ sigma sum_i dW_i (b_i · ∇u + c_i u) ]."""
    _check_wiener(u, cfg)
    g = u.grid
    if inc.dW.shape != (cfg.M_W,):
        raise ValueError(f"increment has {inc.dW.size} Wiener draws, config has M_W={cfg.M_W}")
    if not cfg.active:
        return SolenoidalVelocityField.zeros(g)
    w = cfg.amplitude * inc.dW
    B = np.tensordot(w, cfg.b_values, axes=1)
    C = np.tensordot(w, cfg.c_values, axes=1)
    phys = _velocity_and_gradient(u)
    return SolenoidalVelocityField(g, _project(g, _operator_on(phys, B[0], B[1], C)))


def gaussian_modes(u: SpectralVectorField, cfg: WienerDriverConfig) -> np.ndarray:
    """Coefficients of G_i(u) = sigma P(b_i · ∇u + c_i u), shape (M_W, 2, N, N)."""
    _check_wiener(u, cfg)
    g = u.grid
    if cfg.M_W == 0:
        return np.zeros((0, 2, g.N, g.N), dtype=complex)
    phys = _velocity_and_gradient(u)
    vals = np.stack([
        _operator_on(phys, cfg.b_values[i, 0], cfg.b_values[i, 1], cfg.c_values[i]) for i in range(cfg.M_W)
    ])
    return cfg.amplitude * _project(g, vals)


def work_rates(u: SpectralVectorField, cfg: WienerDriverConfig) -> np.ndarray:
    """<G_i(u), u> for every retained mode, by grid quadrature.

    Exact for band-limited u: the projection in G_i drops out against a
    solenoidal field inside the Galerkin band.
    """
    _check_wiener(u, cfg)
    g = u.grid
    phys = _velocity_and_gradient(u)
    out = np.empty(cfg.M_W)
    for i in range(cfg.M_W):
        h = _operator_on(phys, cfg.b_values[i, 0], cfg.b_values[i, 1], cfg.c_values[i])
        out[i] = float(np.sum(h[0] * phys[0] + h[1] * phys[1]))
    return cfg.amplitude * g.cell_area * out


def hs_norm_sq(u: SpectralVectorField, cfg: WienerDriverConfig) -> float:
    """||G(u)||^2 in the Hilbert-Schmidt norm over the M_W retained modes."""
    modes = gaussian_modes(u, cfg)
    return u.grid.area * float(np.sum(np.abs(modes) ** 2))


def apply_jump(u: SpectralVectorField, radius: float) -> SolenoidalVelocityField:
    """Jump map F(u; z) = |z| u for |z| = radius in (0, 1)."""
    if not 0.0 < radius < 1.0:
        raise ValueError(f"jump radius must lie in (0, 1), got {radius}")
    return SolenoidalVelocityField(u.grid, radius * u.coeffs)


def compensator_drift(u: SpectralVectorField, cfg: JumpDriverConfig | None, dt: float) -> SolenoidalVelocityField:
    """-mu_1 u dt."""
    mu1 = cfg.mu(1) if cfg is not None else 0.0
    return SolenoidalVelocityField(u.grid, (-mu1 * dt) * u.coeffs)


# -- hypotheses -------------------------------------------------------------------


def lambda0_threshold(c0_linf: float) -> float:
    """Upper bound on the gradient-growth constant: 1/(3^7 (2 + 16·24 ||c0||_inf)^2)."""
    return 1.0 / (3**7 * (2.0 + 16.0 * 24.0 * c0_linf) ** 2)


def lambda_constants(lambda0: float, c0_linf: float) -> tuple[float, float]:
    """(lambda_1, lambda_2) = (min(1/24, 2 - lambda0), 2 + 16 ||c0||_inf / (2 - lambda0))."""
    lam1 = min(1.0 / 24.0, 2.0 - lambda0)
    lam2 = 2.0 + 16.0 * c0_linf / (2.0 - lambda0)
    return lam1, lam2


def margin_check(lambda0: float, c0_linf: float, p: float) -> dict:
    """Compare lambda_3^2 and its bound against lambda_1^p for one exponent p."""
    lam1, lam2 = lambda_constants(lambda0, c0_linf)
    lam3_sq = 3**6 * 2 ** (2 * p - 2) * lam2 ** (2 * p) * lambda0**p / 8.0
    bound = 3**6 * 2 ** (2 * p - 2) * (2.0 + 16.0 * 24.0 * c0_linf) ** (2 * p) * lambda0**p / 8.0
    return {
        "p": p,
        "lambda3_sq": lam3_sq,
        "bound": bound,
        "lambda1_p": lam1**p,
        "ok": bool(lam3_sq < lam1**p),
    }


@dataclass
class HypothesisReport:
    M_W: int
    amplitude: float
    c0_linf: float
    C0: float
    lambda0_estimate: float | None
    lambda0_threshold: float
    lambda0_status: str
    L_G_estimate: float | None
    L_G_status: str
    jump_lipschitz: float
    jump_fourth: float
    jump_status: str
    margins: list[dict]
    margin_status: str
    n_samples: int
    note: str = (
        "empirical suprema over the sampled states only, not a proof; "
        "Hilbert-Schmidt norms are truncated at M_W modes"
    )

    @property
    def passed(self) -> bool:
        statuses = (self.lambda0_status, self.L_G_status, self.jump_status, self.margin_status)
        return all(s == "PASS" for s in statuses)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def default_sample_states(grid: TorusGrid, count: int = 12, seed: int = 0) -> list[SolenoidalVelocityField]:
    """Taylor-Green vortices at several wavenumbers plus random band-limited solenoidal fields."""
    from levycns.dynamics import taylor_green  # local import keeps module order simple

    rng = np.random.default_rng(seed)
    out = []
    for mode in range(1, max(2, min(grid.m, 6)) + 1):
        out.append(SolenoidalVelocityField(grid, _project(grid, taylor_green(grid, 1.0, mode))))
    while len(out) < count:
        shell = rng.integers(1, max(2, grid.m) + 1)
        raw = rng.standard_normal((2, grid.N, grid.N)) + 1j * rng.standard_normal((2, grid.N, grid.N))
        kmax = np.maximum(np.abs(grid.kint)[:, None], np.abs(grid.kint)[None, :])
        raw[:, kmax > shell] = 0.0
        vals = _inv(raw, grid.N)  # real part of a random spectrum, band-limited to the shell
        out.append(SolenoidalVelocityField(grid, _project(grid, vals)))
    return out[:count] if len(out) > count else out


def verify_hypotheses(
    wiener: WienerDriverConfig,
    jump: JumpDriverConfig | None,
    sample_states: Sequence[SpectralVectorField],
    c0_linf: float,
    C0: float | None = None,
    p_list: Sequence[float] = (1.0, 1.5, 2.0, 2.5, 3.0),
) -> HypothesisReport:
    """Empirical check of the growth, Lipschitz and jump-moment hypotheses.

    lambda0 estimate: max over samples of (||G(u)||_HS^2 - C0 (1 + ||u||^2)) / ||∇u||^2,
    with C0 defaulting to sigma^2 sum_i ||c_i||_inf^2 (the gradient-free bound).
    L_G estimate: max over sample differences w of ||G(w)||_HS^2 / ||w||_V^2, V = H^1.
    """
    if C0 is None:
        C0 = wiener.amplitude**2 * wiener.c_sup_sq
    states = list(sample_states)
    if not states:
        raise ValueError("verify_hypotheses needs at least one sample state")
    area = states[0].grid.area

    lam_vals, hs = [], []
    for u in states:
        g2 = grad_norm_sq(u)
        h = hs_norm_sq(u, wiener)
        hs.append(h)
        if g2 > 0:
            u2 = area * float(np.sum(np.abs(u.coeffs) ** 2))
            lam_vals.append((h - C0 * (1.0 + u2)) / g2)
    threshold = lambda0_threshold(c0_linf)
    if lam_vals:
        lam0 = max(lam_vals)
        lam_status = "PASS" if lam0 < threshold else "FAIL"
    else:
        lam0, lam_status = None, "INCONCLUSIVE"

    ratios = []
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            w = SpectralVectorField(states[i].grid, states[i].coeffs - states[j].coeffs)
            v2 = area * float(np.sum(np.abs(w.coeffs) ** 2)) + grad_norm_sq(w)
            if v2 > 0:
                ratios.append(hs_norm_sq(w, wiener) / v2)
    if len(states) == 1 and lam_vals:
        u = states[0]
        ratios.append(hs[0] / (area * float(np.sum(np.abs(u.coeffs) ** 2)) + grad_norm_sq(u)))
    if ratios:
        lg = max(ratios)
        lg_status = "PASS" if lg < 2.0 else "FAIL"
    else:
        lg, lg_status = None, "INCONCLUSIVE"

    jump = jump if jump is not None else JumpDriverConfig(0.0)
    mu2, mu4 = jump.mu(2), jump.mu(4)
    jump_status = "PASS" if math.isfinite(mu2) and math.isfinite(mu4) else "FAIL"

    lam_for_margin = max(lam0, 0.0) if lam0 is not None else threshold
    margins = [margin_check(lam_for_margin, c0_linf, p) for p in p_list]
    margin_status = "PASS" if all(m["ok"] for m in margins) else "FAIL"

    return HypothesisReport(
        M_W=wiener.M_W,
        amplitude=wiener.amplitude,
        c0_linf=c0_linf,
        C0=C0,
        lambda0_estimate=lam0,
        lambda0_threshold=threshold,
        lambda0_status=lam_status,
        L_G_estimate=lg,
        L_G_status=lg_status,
        jump_lipschitz=mu2,
        jump_fourth=mu4,
        jump_status=jump_status,
        margins=margins,
        margin_status=margin_status,
        n_samples=len(states),
    )
