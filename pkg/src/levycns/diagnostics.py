"""Entropy-energy ledger, invariant checks, moment and escape statistics, uniqueness functionals.

Entropy functional and dissipation:

    F = ∫(n+1) ln(n+1) + ||∇√c||^2 + ||u||^2
    G = ||∇√(n+1)||^2 + ||Δ√c||^2 + || |∇√c|^2 / √c ||^2 + ||n |∇√c|^2||_{L^1} + ||∇u||^2

Discrete budget per step (row k, left-point dissipation):

    residual_k = (F_k - F_{k-1}) + lambda_1 G_{k-1} dt - C_budget (1 + F_{k-1}) dt
                 - lambda_2 noise_work_k - jump_work_k
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from levycns.noise import lambda0_threshold, lambda_constants
from levycns.spectral import (
    SpectralScalarField,
    _check_grid,
    entropy_integrals,
    grad_norm_sq,
    lap_norm_sq,
)

__all__ = [
    "EntropyLedgerRow",
    "LEDGER_COLUMNS",
    "G_TERMS",
    "BudgetConstants",
    "LedgerBuilder",
    "entropy_row",
    "budget_report",
    "calibrate_budget",
    "InvariantReport",
    "lemma31_check",
    "BoundReport",
    "cor32_bound",
    "calibrate_cor32",
    "EscapeReport",
    "escape_probability",
    "MomentReport",
    "path_functionals",
    "moment_estimates",
    "compare_moments",
    "UniquenessMetrics",
    "uniqueness_metrics",
]

G_TERMS = ("G_grad_sqrt_n1", "G_lap_sqrt_c", "G_quartic_sqrt_c", "G_n_grad_sqrt_c", "G_grad_u")


@dataclass
class EntropyLedgerRow:
    step: int
    t: float
    F_val: float
    G_val: float
    phi_n: float
    grad_sqrt_c_sq: float
    energy_u: float
    G_grad_sqrt_n1: float
    G_lap_sqrt_c: float
    G_quartic_sqrt_c: float
    G_n_grad_sqrt_c: float
    G_grad_u: float
    mass_n: float
    min_n: float
    min_c: float
    linf_c: float
    l2_n: float
    h1_c: float
    grad_n_sq: float
    lap_c_sq: float
    h2_c_sq: float
    h2_c_running: float
    G_running: float
    radius: float
    noise_work: float
    noise_qv: float
    jump_work: float
    jump_martingale: float
    n_jumps: int
    neg_n_cells: int
    neg_c_cells: int
    budget_residual: float

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def flagged(self) -> bool:
        """Row has negative n or c on the grid."""
        return self.neg_n_cells > 0 or self.neg_c_cells > 0


LEDGER_COLUMNS = tuple(f.name for f in fields(EntropyLedgerRow))


@dataclass(frozen=True)
class BudgetConstants:
    """lambda_0 (growth constant of the Gaussian noise), ||c0||_inf and the calibrated C_budget."""

    lambda0: float
    c0_linf: float
    C_budget: float = 0.0

    @property
    def lambda1(self) -> float:
        return lambda_constants(self.lambda0, self.c0_linf)[0]

    @property
    def lambda2(self) -> float:
        return lambda_constants(self.lambda0, self.c0_linf)[1]

    @property
    def lambda0_threshold(self) -> float:
        return lambda0_threshold(self.c0_linf)


def _state_terms(state, eps_c: float) -> dict:
    n, c, u = state.n, state.c, state.u
    g = n.grid
    a = g.area
    ent = entropy_integrals(n, c, eps_c)
    ct = ent["cross_terms"]
    energy_u = a * float(np.sum(np.abs(u.coeffs) ** 2))
    G_terms = {
        "G_grad_sqrt_n1": ct["grad_sqrt_n1_sq"],
        "G_lap_sqrt_c": ct["lap_sqrt_c_sq"],
        "G_quartic_sqrt_c": ct["quartic_sqrt_c"],
        "G_n_grad_sqrt_c": ct["n_grad_sqrt_c_sq"],
        "G_grad_u": grad_norm_sq(u),
    }
    l2_n_sq = a * float(np.sum(np.abs(n.coeffs) ** 2))
    l2_c_sq = a * float(np.sum(np.abs(c.coeffs) ** 2))
    grad_c_sq = grad_norm_sq(c)
    lap_c_sq = lap_norm_sq(c)
    return {
        "F_val": ent["phi_n"] + ent["grad_sqrt_c_sq"] + energy_u,
        "G_val": sum(G_terms.values()),
        "phi_n": ent["phi_n"],
        "grad_sqrt_c_sq": ent["grad_sqrt_c_sq"],
        "energy_u": energy_u,
        **G_terms,
        "mass_n": a * float(n.coeffs[0, 0].real),
        "min_n": ent["min_n"],
        "min_c": ent["min_c"],
        "linf_c": float(np.abs(c.values).max()),
        "l2_n": math.sqrt(l2_n_sq),
        "h1_c": math.sqrt(l2_c_sq + grad_c_sq),
        "grad_n_sq": grad_norm_sq(n),
        "lap_c_sq": lap_c_sq,
        "h2_c_sq": l2_c_sq + grad_c_sq + lap_c_sq,
        "radius": math.sqrt(l2_n_sq + l2_c_sq + grad_c_sq + energy_u),
        "neg_n_cells": ent["violations"]["n_negative"],
        "neg_c_cells": ent["violations"]["c_negative"],
    }


def entropy_row(
    state,
    prev_row: EntropyLedgerRow | None,
    info=None,
    constants: BudgetConstants | None = None,
    dt: float | None = None,
    eps_c: float = 1e-12,
) -> EntropyLedgerRow:
    """Ledger row for ``state``; ``info`` carries the step's noise bookkeeping (``integrator.StepInfo``)."""
    terms = _state_terms(state, eps_c)
    noise_work = getattr(info, "noise_work", 0.0) if info is not None else 0.0
    noise_qv = getattr(info, "noise_qv", 0.0) if info is not None else 0.0
    jump_work = getattr(info, "jump_work", 0.0) if info is not None else 0.0
    jump_mart = getattr(info, "jump_martingale", 0.0) if info is not None else 0.0
    n_jumps = getattr(info, "n_jumps", 0) if info is not None else 0

    if prev_row is None:
        h2_run = G_run = 0.0
        residual = 0.0
    else:
        if dt is None:
            dt = state.t - prev_row.t
        h2_run = prev_row.h2_c_running + dt * prev_row.h2_c_sq
        G_run = prev_row.G_running + dt * prev_row.G_val
        consts = constants if constants is not None else BudgetConstants(0.0, 0.0, 0.0)
        residual = (
            (terms["F_val"] - prev_row.F_val)
            + consts.lambda1 * prev_row.G_val * dt
            - consts.C_budget * (1.0 + prev_row.F_val) * dt
            - consts.lambda2 * noise_work
            - jump_work
        )
    return EntropyLedgerRow(
        step=int(state.step),
        t=float(state.t),
        h2_c_running=h2_run,
        G_running=G_run,
        noise_work=noise_work,
        noise_qv=noise_qv,
        jump_work=jump_work,
        jump_martingale=jump_mart,
        n_jumps=int(n_jumps),
        budget_residual=residual,
        **terms,
    )


@dataclass
class LedgerBuilder:
    """Accumulates rows for one trajectory."""

    constants: BudgetConstants
    dt: float
    eps_c: float = 1e-12
    rows: list = field(default_factory=list)

    def append(self, state, info) -> EntropyLedgerRow:
        prev = self.rows[-1] if self.rows else None
        row = entropy_row(state, prev, info, self.constants, self.dt if prev is not None else None, self.eps_c)
        self.rows.append(row)
        return row


# -- budget -----------------------------------------------------------------------


def _raw_budget(rows: Sequence[EntropyLedgerRow], constants: BudgetConstants, dt: float) -> np.ndarray:
    # Per-step value of residual + C_budget (1 + F_prev) dt, divided by (1 + F_prev) dt.
    out = []
    for prev, row in zip(rows[:-1], rows[1:]):
        r = (
            (row.F_val - prev.F_val)
            + constants.lambda1 * prev.G_val * dt
            - constants.lambda2 * row.noise_work
            - row.jump_work
        )
        out.append(r / ((1.0 + prev.F_val) * dt))
    return np.asarray(out)


def calibrate_budget(rows: Sequence[EntropyLedgerRow], constants: BudgetConstants, dt: float, margin: float = 1.5) -> float:
    """Smallest C_budget >= 0 making every residual of ``rows`` non-positive, times ``margin``."""
    raw = _raw_budget(rows, constants, dt)
    return max(float(raw.max()) if raw.size else 0.0, 0.0) * margin


@dataclass
class BudgetReport:
    passed: bool
    max_residual: float
    n_checked: int
    n_excluded: int
    first_violation_t: float | None
    C_budget: float

    def as_dict(self) -> dict:
        return asdict(self)


def budget_report(rows: Sequence[EntropyLedgerRow], C_budget: float) -> BudgetReport:
    """residual <= 0 on every step row; rows flagged for negativity are excluded and counted."""
    checked = [r for r in rows[1:] if not r.flagged]
    excluded = len(rows[1:]) - len(checked)
    bad = [r for r in checked if r.budget_residual > 0]
    return BudgetReport(
        passed=not bad,
        max_residual=max((r.budget_residual for r in checked), default=0.0),
        n_checked=len(checked),
        n_excluded=excluded,
        first_violation_t=bad[0].t if bad else None,
        C_budget=C_budget,
    )


# -- invariants -------------------------------------------------------------------


@dataclass
class InvariantReport:
    mass_drift: float
    mass_drift_t: float | None
    linf_overshoot: float
    overshoot_t: float | None
    min_n: float
    min_c: float
    mass_tol: float
    linf_tol: float
    mass_ok: bool
    linf_ok: bool

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.linf_ok

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def lemma31_check(
    rows: Sequence[EntropyLedgerRow],
    c0_linf: float | None = None,
    mass_tol: float = 1e-10,
    linf_tol: float = 1e-6,
) -> InvariantReport:
    """Mass conservation of n and the bound ||c(t)||_inf <= ||c0||_inf along a ledger."""
    if not rows:
        raise ValueError("lemma31_check needs a non-empty ledger")
    m0 = rows[0].mass_n
    scale = abs(m0) if m0 != 0 else 1.0
    drifts = np.array([abs(r.mass_n - m0) / scale for r in rows])
    c0 = rows[0].linf_c if c0_linf is None else c0_linf
    over = np.array([r.linf_c - c0 for r in rows])
    i_d = int(drifts.argmax())
    i_o = int(over.argmax())
    return InvariantReport(
        mass_drift=float(drifts[i_d]),
        mass_drift_t=rows[i_d].t if drifts[i_d] > mass_tol else None,
        linf_overshoot=float(max(over[i_o], 0.0)),
        overshoot_t=rows[i_o].t if over[i_o] > linf_tol else None,
        min_n=min(r.min_n for r in rows),
        min_c=min(r.min_c for r in rows),
        mass_tol=mass_tol,
        linf_tol=linf_tol,
        mass_ok=bool(drifts[i_d] <= mass_tol),
        linf_ok=bool(over[i_o] <= linf_tol),
    )


@dataclass
class BoundReport:
    """sup ||n||^2 + ∫||∇n||^2 against (1 + ||n0||^2) exp(C2 ∫||Δc||^2)."""

    t: np.ndarray
    lhs: np.ndarray
    envelope: np.ndarray
    C1: float
    C2: float
    violations: list
    note: str = "C2 is calibrated on a reference run; the torus interpolation constant differs from the whole-plane one"

    @property
    def passed(self) -> bool:
        return not self.violations and bool(np.isfinite(self.envelope).all())

    def summary(self) -> dict:
        return {
            "C1": self.C1,
            "C2": self.C2,
            "final_lhs": float(self.lhs[-1]),
            "final_envelope": float(self.envelope[-1]),
            "max_ratio": float(np.max(self.lhs / self.envelope)),
            "violations": self.violations[:10],
            "n_violations": len(self.violations),
            "passed": self.passed,
            "note": self.note,
        }


def _running_integral(rows, attr: str) -> np.ndarray:
    t = np.array([r.t for r in rows])
    v = np.array([getattr(r, attr) for r in rows])
    out = np.zeros_like(v)
    out[1:] = np.cumsum(v[:-1] * np.diff(t))
    return out


def _cor32_lhs(rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    for col in ("l2_n", "grad_n_sq", "lap_c_sq"):
        if not hasattr(rows[0], col):
            raise ValueError(f"ledger is missing column {col!r}")
    t = np.array([r.t for r in rows])
    l2 = np.array([r.l2_n for r in rows]) ** 2
    lhs = np.maximum.accumulate(l2) + _running_integral(rows, "grad_n_sq")
    return t, lhs, _running_integral(rows, "lap_c_sq")


def cor32_bound(rows: Sequence[EntropyLedgerRow], C2: float, rtol: float = 1e-12) -> BoundReport:
    if not rows:
        raise ValueError("cor32_bound needs a non-empty ledger")
    t, lhs, lap_int = _cor32_lhs(rows)
    C1 = 1.0 + rows[0].l2_n ** 2
    env = C1 * np.exp(C2 * lap_int)
    bad = [float(tt) for tt, a, b in zip(t, lhs, env) if a > b * (1.0 + rtol)]
    return BoundReport(t, lhs, env, C1, C2, bad)


def calibrate_cor32(rows: Sequence[EntropyLedgerRow], margin: float = 1.5) -> float:
    """Smallest C2 >= 0 for which ``rows`` satisfy the exponential bound, times ``margin``."""
    t, lhs, lap_int = _cor32_lhs(rows)
    C1 = 1.0 + rows[0].l2_n ** 2
    need = 0.0
    for a, li in zip(lhs, lap_int):
        if a > C1:
            need = max(need, math.log(a / C1) / li) if li > 0 else math.inf
    return need * margin


# -- ensembles --------------------------------------------------------------------


@dataclass
class EscapeReport:
    D_list: list
    fractions: list
    counts: list
    K: int
    monotone: bool
    markov_bounds: list
    max_radius: float
    min_initial_radius: float

    def as_dict(self) -> dict:
        return asdict(self)


def escape_probability(max_radii: Sequence[float], D_list: Sequence[float], initial_radii: Sequence[float] | None = None) -> EscapeReport:
    """Fraction of trajectories whose radius reaches each D before the horizon.

    ``max_radii[j]`` is sup_t radius of trajectory j over [0, T].
    """
    r = np.asarray(max_radii, dtype=float)
    if r.size < 2:
        raise ValueError(f"degenerate ensemble: {r.size} trajectories")
    D = [float(d) for d in D_list]
    if any(b <= a for a, b in zip(D[:-1], D[1:])):
        raise ValueError("D_list must be strictly increasing")
    counts = [int(np.count_nonzero(r >= d)) for d in D]
    fr = [c / r.size for c in counts]
    markov = [float(np.mean(r**2) / d**2) for d in D]
    init = np.asarray(initial_radii, dtype=float) if initial_radii is not None else r
    return EscapeReport(
        D_list=D,
        fractions=fr,
        counts=counts,
        K=int(r.size),
        monotone=all(b <= a for a, b in zip(fr[:-1], fr[1:])),
        markov_bounds=markov,
        max_radius=float(r.max()),
        min_initial_radius=float(init.min()),
    )


PATH_FUNCTIONALS = ("sup_F", "int_G", "sup_c_h1_sq", "sup_u_sq")


def path_functionals(rows: Sequence[EntropyLedgerRow]) -> dict:
    """sup F, ∫G dt (left-point), sup ||c||_{H^1}^2 and sup ||u||^2 over one trajectory."""
    t = np.array([r.t for r in rows])
    G = np.array([r.G_val for r in rows])
    return {
        "sup_F": max(r.F_val for r in rows),
        "int_G": float(np.sum(G[:-1] * np.diff(t))),
        "sup_c_h1_sq": max(r.h1_c**2 for r in rows),
        "sup_u_sq": max(r.energy_u for r in rows),
    }


@dataclass
class MomentReport:
    K: int
    p_list: list
    estimates: dict   # name -> {p: (mean, standard error)}
    finite: bool
    power_mean_ok: bool

    def as_dict(self) -> dict:
        return {
            "K": self.K,
            "p_list": self.p_list,
            "estimates": {k: {str(p): list(v) for p, v in d.items()} for k, d in self.estimates.items()},
            "finite": self.finite,
            "power_mean_ok": self.power_mean_ok,
        }


def moment_estimates(samples: Iterable[dict], p_list: Sequence[float] = (1, 2, 3), min_K: int = 2) -> MomentReport:
    """Monte-Carlo E[X^p] with standard errors for each path functional X.

    ``samples`` are per-trajectory dicts from ``path_functionals``.
    """
    samples = list(samples)
    if len(samples) < min_K:
        raise ValueError(f"ensemble too small: {len(samples)} < {min_K} trajectories")
    for p in p_list:
        if not 1 <= p <= 3:
            raise ValueError(f"moment exponent {p} outside [1, 3]")
    K = len(samples)
    est: dict = {}
    finite = True
    power_ok = True
    for name in PATH_FUNCTIONALS:
        x = np.array([s[name] for s in samples], dtype=float)
        est[name] = {}
        for p in p_list:
            xp = np.abs(x) ** p
            mean = float(xp.mean())
            se = float(xp.std(ddof=1) / math.sqrt(K)) if K > 1 else 0.0
            est[name][p] = (mean, se)
            finite &= math.isfinite(mean) and math.isfinite(se)
        # Power-mean inequality on the same sample: E|X|^(1/p) moments increase in p.
        roots = [est[name][p][0] ** (1.0 / p) for p in sorted(p_list)]
        power_ok &= all(a <= b * (1 + 1e-12) for a, b in zip(roots[:-1], roots[1:]))
    return MomentReport(K, list(p_list), est, bool(finite), bool(power_ok))


def compare_moments(a: MomentReport, b: MomentReport, n_sigma: float = 3.0, names=("sup_F", "int_G")) -> dict:
    """Overlap of n_sigma intervals: |mean_a - mean_b| <= n_sigma (se_a + se_b)."""
    out = {}
    for name in names:
        for p in a.p_list:
            (ma, sa), (mb, sb) = a.estimates[name][p], b.estimates[name][p]
            out[f"{name}^{p}"] = {
                "a": ma, "se_a": sa, "b": mb, "se_b": sb,
                "overlap": bool(abs(ma - mb) <= n_sigma * (sa + sb)),
            }
    return out


# -- uniqueness -------------------------------------------------------------------


@dataclass
class UniquenessMetrics:
    A_t: float
    B_t: float
    C_t: float
    C_terms: tuple

    def as_dict(self) -> dict:
        return {"A_t": self.A_t, "B_t": self.B_t, "C_t": self.C_t}


def _l2sq(f) -> float:
    return f.grid.area * float(np.sum(np.abs(f.coeffs) ** 2))


def uniqueness_metrics(a, b) -> UniquenessMetrics:
    """A and B of the difference state; C from the two solutions (nine terms plus one)."""
    g = _check_grid(a.n, b.n, a.u, b.u)
    ns = SpectralScalarField(g, a.n.coeffs - b.n.coeffs)
    cs = SpectralScalarField(g, a.c.coeffs - b.c.coeffs)
    us = type(a.u)(g, a.u.coeffs - b.u.coeffs)
    A = _l2sq(ns) + _l2sq(cs) + grad_norm_sq(cs) + _l2sq(us)
    B = grad_norm_sq(ns) + grad_norm_sq(cs) + lap_norm_sq(cs) + grad_norm_sq(us)

    n1, n2 = _l2sq(a.n), _l2sq(b.n)
    gn1, gn2 = grad_norm_sq(a.n), grad_norm_sq(b.n)
    gc1, lc1 = grad_norm_sq(a.c), lap_norm_sq(a.c)
    u1, gu1 = _l2sq(a.u), grad_norm_sq(a.u)
    gu2 = grad_norm_sq(b.u)
    terms = (
        n1 * gn1,
        gc1 * lc1,
        n2 * gn2,
        gc1 * lc1,
        n2,
        gc1 * lc1,
        gu2,
        n2 * gn2,
        u1 * gu1,
        1.0,
    )
    return UniquenessMetrics(A, B, float(sum(terms)), terms)
