"""Jump-adapted semi-implicit Euler-Maruyama time stepping.

One step from t to t + dt:

1. explicit nonlinear, buoyancy and jump-compensator tendencies at t
2. Gaussian increment G(u(t)) dW
3. jumps in arrival order, each u <- u + r u
4. exact linear part: diffusion e^{-|k|^2 dt} and mean-flow advection e^{-i k·ū dt}
   (or the backward-Euler factor 1/(1 + |k|^2 dt) in ``implicit`` mode)
5. Galerkin truncation and Leray projection
6. stopping test on sqrt(||n||^2 + ||c||_{H^1}^2 + ||u||^2) >= D or t >= D

Because every jump acts linearly on u, applying the jumps before the linear
propagator gives the same result as interleaving them at their arrival times.
"""

from __future__ import annotations

import copy
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from levycns.dynamics import PotentialField, nonlinear_tendencies
from levycns.noise import (
    apply_gaussian,
    JumpDriverConfig,
    NoiseIncrement,
    WienerDriverConfig,
    work_rates,
    lambda0_threshold,
    sample_increment,
)
from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    TorusGrid,
    _leray_coeffs,
    forward_transform,
    forward_vector_transform,
    leray_project,
)

__all__ = [
    "SimulationState",
    "StepScheme",
    "Drivers",
    "StepInfo",
    "TrajectoryRecord",
    "SimulationFault",
    "CheckpointError",
    "initialize",
    "state_radius",
    "advance",
    "step",
    "trajectory",
    "run",
    "checkpoint",
    "restore",
    "load_checkpoint",
    "states_identical",
    "initial_report",
]


class SimulationFault(RuntimeError):
    """Non-finite value produced by a step; ``last_state`` is the last valid state."""

    def __init__(self, message: str, last_state: "SimulationState"):
        super().__init__(message)
        self.last_state = last_state


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimulationState:
    n: SpectralScalarField
    c: SpectralScalarField
    u: SolenoidalVelocityField
    t: float
    rng: np.random.Generator
    stopped_at: float | None = None
    step: int = 0

    def __post_init__(self):
        g = self.n.grid
        if self.c.grid != g or self.u.grid != g:
            raise ValueError("n, c and u must share one grid")

    @property
    def grid(self) -> TorusGrid:
        return self.n.grid

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state


def states_identical(a: SimulationState, b: SimulationState) -> bool:
    """Bitwise equality of fields, time, step, stopping status and RNG state."""
    return (
        a.grid == b.grid
        and np.array_equal(a.n.coeffs, b.n.coeffs)
        and np.array_equal(a.c.coeffs, b.c.coeffs)
        and np.array_equal(a.u.coeffs, b.u.coeffs)
        and a.t == b.t
        and a.step == b.step
        and a.stopped_at == b.stopped_at
        and a.rng.bit_generator.state == b.rng.bit_generator.state
    )


@dataclass(frozen=True)
class StepScheme:
    dt: float
    T: float
    D: float = math.inf
    diffusion_mode: str = "integrating-factor"
    diffusion: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.T < 0:
            raise ValueError(f"T must be non-negative, got {self.T}")
        if self.diffusion_mode not in ("integrating-factor", "implicit"):
            raise ValueError(f"unknown diffusion_mode {self.diffusion_mode!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True, eq=False)
class Drivers:
    phi: PotentialField
    wiener: WienerDriverConfig | None = None
    jump: JumpDriverConfig | None = None

    @property
    def wiener_active(self) -> bool:
        return self.wiener is not None and self.wiener.active

    @property
    def jump_active(self) -> bool:
        return self.jump is not None and self.jump.active


@dataclass(frozen=True)
class StepInfo:
    """Noise bookkeeping of one step (energy terms use the L^2 inner product)."""

    increment: NoiseIncrement | None = None
    noise_work: float = 0.0       # <G(u) dW, u>
    noise_qv: float = 0.0         # sum_i <G_i(u), u>^2 dt, quadratic variation of noise_work
    jump_work: float = 0.0        # sum of jump energy changes minus 2 mu_1 ||u||^2 dt
    jump_martingale: float = 0.0  # sum of jump energy changes minus (2 mu_1 + mu_2) ||u||^2 dt
    jump_increment_sq: float = 0.0  # sum_j ||r_j u_j-||^2
    n_jumps: int = 0


@dataclass
class TrajectoryRecord:
    initial_state: SimulationState
    final_state: SimulationState
    rows: list = field(default_factory=list)
    infos: list = field(default_factory=list)

    @property
    def stopped_at(self) -> float | None:
        return self.final_state.stopped_at


def state_radius(n: SpectralScalarField, c: SpectralScalarField, u: SolenoidalVelocityField) -> float:
    g = n.grid
    a = g.area
    total = a * float(
        np.sum(np.abs(n.coeffs) ** 2) + np.sum((1.0 + g.k2) * np.abs(c.coeffs) ** 2) + np.sum(np.abs(u.coeffs) ** 2)
    )
    return math.sqrt(total)


def initialize(
    grid: TorusGrid,
    n0: np.ndarray,
    c0: np.ndarray,
    u0: np.ndarray,
    rng: np.random.Generator | int,
    t0: float = 0.0,
    enforce_positivity: bool = True,
    D: float = math.inf,
) -> SimulationState:
    """Project initial data onto the Galerkin space and Leray-project u0.

    With ``enforce_positivity`` the grid values of n0 and c0 must be strictly
    positive; the violating minimum is reported otherwise. If the initial
    radius already reaches ``D`` the state is created stopped at ``t0``.
    """
    n0 = np.asarray(n0, dtype=float)
    c0 = np.asarray(c0, dtype=float)
    if enforce_positivity:
        for name, arr in (("n0", n0), ("c0", c0)):
            lo = float(arr.min())
            if not lo > 0:
                raise ValueError(f"initial {name} must be positive on the grid; minimum is {lo:.6g}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    n = forward_transform(n0, grid)
    c = forward_transform(c0, grid)
    u = leray_project(forward_vector_transform(np.asarray(u0, dtype=float), grid))
    stopped = t0 if (state_radius(n, c, u) >= D or t0 >= D) else None
    return SimulationState(n, c, u, t0, rng, stopped_at=stopped)


def initial_report(state: SimulationState) -> dict:
    """||c0||_inf and the growth threshold it implies."""
    c_inf = float(np.abs(state.c.values).max())
    return {"c0_linf": c_inf, "lambda0_threshold": lambda0_threshold(c_inf)}


def _linear_factor(grid: TorusGrid, scheme: StepScheme, ubar: tuple[float, float]) -> np.ndarray:
    dt = scheme.dt
    phase_x = np.exp(-1j * grid.kappa * grid.kint * ubar[0] * dt)
    phase_y = np.exp(-1j * grid.kappa * grid.kint * ubar[1] * dt)
    phase = phase_x[:, None] * phase_y[None, :]
    if not scheme.diffusion:
        return phase
    if scheme.diffusion_mode == "implicit":
        return phase / (1.0 + grid.k2 * dt)
    return phase * _diffusion_factor(grid, dt)


_DIFFUSION_CACHE: dict = {}


def _diffusion_factor(grid: TorusGrid, dt: float) -> np.ndarray:
    key = (grid, dt)
    out = _DIFFUSION_CACHE.get(key)
    if out is None:
        if len(_DIFFUSION_CACHE) > 32:
            _DIFFUSION_CACHE.clear()
        out = np.exp(-grid.k2 * dt)
        _DIFFUSION_CACHE[key] = out
    return out


def advance(
    state: SimulationState, scheme: StepScheme, drivers: Drivers, track_qv: bool = False
) -> tuple[SimulationState, StepInfo]:
    """One step; returns the new state and its noise bookkeeping.

    A stopped state is returned unchanged. The input state and its RNG are
    never mutated. ``track_qv`` also evaluates sum_i <G_i(u), u>^2 dt, the
    quadratic variation of the noise work; it is NaN otherwise.
    """
    if state.stopped:
        return state, StepInfo()
    g = state.grid
    dt = scheme.dt
    rng = copy.deepcopy(state.rng)

    n_hat, c_hat, u_hat = state.n.coeffs, state.c.coeffs, state.u.coeffs
    ubar = state.u.mean

    dn, dc, du = nonlinear_tendencies(g, n_hat, c_hat, u_hat, drivers.phi, subtract_mean_flow=True)
    mu1 = drivers.jump.mu(1) if drivers.jump is not None else 0.0
    n_new = n_hat + dt * dn
    c_new = c_hat + dt * dc
    u_new = u_hat + dt * du
    if mu1:
        u_new = u_new - (mu1 * dt) * u_hat

    inc = sample_increment(drivers.wiener, drivers.jump, dt, rng)
    area = g.area
    u_sq = area * float(np.sum(np.abs(u_hat) ** 2))
    noise_work = noise_qv = 0.0
    if drivers.wiener_active:
        G = apply_gaussian(state.u, inc, drivers.wiener).coeffs
        u_new = u_new + G
        noise_work = area * float(np.vdot(u_hat, G).real)
        if track_qv:
            noise_qv = float(np.sum(work_rates(state.u, drivers.wiener) ** 2)) * dt
        else:
            noise_qv = math.nan

    jump_energy = 0.0
    jump_sq = 0.0
    for r in inc.jump_radii:
        before = area * float(np.sum(np.abs(u_new) ** 2))
        jump_sq += r * r * before
        u_new = u_new * (1.0 + r)
        jump_energy += ((1.0 + r) ** 2 - 1.0) * before
    mu2 = drivers.jump.mu(2) if drivers.jump is not None else 0.0
    jump_work = jump_energy - 2.0 * mu1 * u_sq * dt
    jump_mart = jump_energy - (2.0 * mu1 + mu2) * u_sq * dt

    E = _linear_factor(g, scheme, ubar)
    mask = g.mask
    n_new = np.where(mask, E * n_new, 0.0)
    c_new = np.where(mask, E * c_new, 0.0)
    u_new = _leray_coeffs(g, np.where(mask, E * u_new, 0.0))

    if not (np.isfinite(n_new).all() and np.isfinite(c_new).all() and np.isfinite(u_new).all()):
        raise SimulationFault(f"non-finite value at step {state.step + 1} (t={state.t + dt:.6g})", state)

    n_f = SpectralScalarField(g, n_new)
    c_f = SpectralScalarField(g, c_new)
    u_f = SolenoidalVelocityField(g, u_new)
    t_new = state.t + dt
    with np.errstate(over="ignore"):
        radius = state_radius(n_f, c_f, u_f)
    if not math.isfinite(radius):
        raise SimulationFault(f"solution norm overflowed at step {state.step + 1} (t={t_new:.6g})", state)
    stopped = None
    if radius >= scheme.D or t_new >= scheme.D:
        stopped = t_new
    new = SimulationState(n_f, c_f, u_f, t_new, rng, stopped_at=stopped, step=state.step + 1)
    info = StepInfo(inc, noise_work, noise_qv, jump_work, jump_mart, jump_sq, inc.n_jumps)
    return new, info


def step(state: SimulationState, scheme: StepScheme, drivers: Drivers) -> SimulationState:
    return advance(state, scheme, drivers)[0]


def trajectory(
    state: SimulationState, scheme: StepScheme, drivers: Drivers, track_qv: bool = False
) -> Iterator[tuple[SimulationState, StepInfo]]:
    """Yield (state, info) after every step until the horizon or the stopping time."""
    n_total = scheme.n_steps
    while state.step < n_total and not state.stopped:
        state, info = advance(state, scheme, drivers, track_qv)
        yield state, info


def run(
    state: SimulationState,
    scheme: StepScheme,
    drivers: Drivers,
    ledger=None,
    callback: Callable[[SimulationState, StepInfo], None] | None = None,
    track_qv: bool = False,
) -> TrajectoryRecord:
    """Step to horizon T or the stopping time.

    ``ledger`` is an optional ``diagnostics.LedgerBuilder``; when given, row 0
    is written for the initial state (if not already present) and one row per
    step after that. Step count is measured from ``state.step`` so a resumed
    state continues on the same time grid.
    """
    record = TrajectoryRecord(initial_state=state, final_state=state)
    if ledger is not None:
        if not ledger.rows:
            ledger.append(state, None)
        record.rows = ledger.rows
    for new, info in trajectory(state, scheme, drivers, track_qv):
        if ledger is not None:
            ledger.append(new, info)
        if callback is not None:
            callback(new, info)
        record.infos.append(info)
        record.final_state = new
    return record


# -- checkpoints ------------------------------------------------------------------

_MAGIC = b"LCNSCKPT"
_VERSION = 1
_HEADER = struct.Struct("<8sI d I I d d B d q")


def checkpoint(state: SimulationState, aux: dict | None = None) -> bytes:
    """Serialize a state: header, n/c/u coefficients ('<c16', row-major), RNG JSON, aux JSON, CRC32."""
    g = state.grid
    rule = g.dealias_rule if g.dealias_rule is not None else 0.0
    stopped = state.stopped_at if state.stopped else 0.0
    head = _HEADER.pack(
        _MAGIC, _VERSION, g.L, g.N, g.m, rule, state.t, int(state.stopped), stopped, state.step
    )
    arrays = b"".join(
        np.ascontiguousarray(a, dtype="<c16").tobytes() for a in (state.n.coeffs, state.c.coeffs, state.u.coeffs)
    )
    rng_blob = json.dumps(state.rng.bit_generator.state, sort_keys=True).encode()
    aux_blob = json.dumps(aux or {}, sort_keys=True).encode()
    body = head + arrays + struct.pack("<Q", len(rng_blob)) + rng_blob + struct.pack("<Q", len(aux_blob)) + aux_blob
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def load_checkpoint(payload: bytes) -> tuple[SimulationState, dict]:
    """Inverse of ``checkpoint``; returns (state, aux)."""
    if len(payload) < _HEADER.size + 4:
        raise CheckpointError("corrupt payload: too short for a checkpoint header")
    body, crc = payload[:-4], struct.unpack("<I", payload[-4:])[0]
    magic, version, L, N, m, rule, t, stopped_flag, stopped_at, nstep = _HEADER.unpack_from(payload, 0)
    if magic != _MAGIC:
        raise CheckpointError("corrupt payload: bad magic bytes")
    if version != _VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {_VERSION})")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("corrupt payload: checksum mismatch")
    grid = TorusGrid(L, N, m, rule if rule > 0 else None)
    off = _HEADER.size
    size = N * N * 16
    arrs = []
    for shape in ((N, N), (N, N), (2, N, N)):
        nbytes = size * (2 if len(shape) == 3 else 1)
        arrs.append(np.frombuffer(body, dtype="<c16", count=nbytes // 16, offset=off).reshape(shape).astype(complex))
        off += nbytes
    (rng_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    rng_state = json.loads(body[off : off + rng_len])
    off += rng_len
    (aux_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    aux = json.loads(body[off : off + aux_len])
    bitgen = getattr(np.random, rng_state["bit_generator"])()
    bitgen.state = rng_state
    state = SimulationState(
        SpectralScalarField(grid, arrs[0]),
        SpectralScalarField(grid, arrs[1]),
        SolenoidalVelocityField(grid, arrs[2]),
        t,
        np.random.Generator(bitgen),
        stopped_at=stopped_at if stopped_flag else None,
        step=nstep,
    )
    return state, aux


def restore(payload: bytes) -> SimulationState:
    return load_checkpoint(payload)[0]


def with_rng(state: SimulationState, rng: np.random.Generator) -> SimulationState:
    return replace(state, rng=rng)
