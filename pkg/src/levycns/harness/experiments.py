"""Experiment runners for every config kind.

Each runner returns an ``ExperimentResult`` holding named checks (gates),
reports and constants; files go through an ``ArtifactWriter``. Nothing that
depends on wall-clock time or the host enters an artifact.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from levycns.diagnostics import (
    BudgetConstants,
    EntropyLedgerRow,
    LedgerBuilder,
    budget_report,
    calibrate_budget,
    calibrate_cor32,
    compare_moments,
    cor32_bound,
    escape_probability,
    lemma31_check,
    moment_estimates,
    path_functionals,
    uniqueness_metrics,
)
from levycns.harness.config import (
    ConfigError,
    ExperimentConfig,
    _spectral_table,
    _table_to_grid,
    scalar_preset,
)
from levycns.harness.reports import ArtifactWriter, ledger_csv, read_ledger_csv, table_csv
from levycns.harness.seeds import trajectory_rng
from levycns.integrator import (
    SimulationFault,
    SimulationState,
    initial_report,
    initialize,
    load_checkpoint,
    run,
    state_radius,
    trajectory,
)
from levycns.noise import (
    apply_gaussian,
    apply_jump,
    compensator_drift,
    default_sample_states,
    sample_increment,
    verify_hypotheses,
    wiener_mode_functions,
)
from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    _leray_coeffs,
    forward_transform,
    forward_vector_transform,
    inner,
)

OUTPUT_ROOT_ENV = "CNS_OUTPUT_ROOT"


@dataclass
class ExperimentResult:
    name: str
    kind: str
    checks: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    selected: list | None = None
    fault: str | None = None

    def check(self, name: str, passed: bool, **detail):
        self.checks[name] = {"passed": bool(passed), "detail": detail}

    @property
    def gates(self) -> dict:
        if self.selected is None:
            return dict(self.checks)
        return {k: v for k, v in self.checks.items() if k in self.selected}

    @property
    def passed(self) -> bool:
        return all(g["passed"] for g in self.gates.values())

    @property
    def status(self) -> str:
        if self.fault:
            return "FAULT"
        return "PASS" if self.passed else "FAIL"

    @property
    def exit_code(self) -> int:
        if self.fault:
            return 3
        return 0 if self.passed else 1

    def summary(self, config_raw: dict) -> dict:
        ungated = {k: v for k, v in self.checks.items() if k not in self.gates}
        reports = dict(self.reports)
        if ungated:
            reports["ungated_checks"] = ungated
        return {
            "schema_version": 1,
            "name": self.name,
            "kind": self.kind,
            "status": self.status,
            "gates": self.gates,
            "reports": reports,
            "constants": self.constants,
            "artifacts": [],
            "fault": self.fault,
            "config": config_raw,
        }


def output_dir(cfg: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    return root / cfg.output.get("dir", f"runs/{cfg.name}")


# -- setup ------------------------------------------------------------------------


@dataclass
class Setup:
    grid: object
    scheme: object
    drivers: object
    state: SimulationState
    constants: BudgetConstants


def build_setup(cfg: ExperimentConfig, m: int | None = None, rng=None, scheme=None) -> Setup:
    grid = cfg.grid(m)
    scheme = scheme or cfg.scheme()
    n0, c0, u0 = cfg.initial_fields(grid)
    try:
        state = initialize(
            grid, n0, c0, u0, rng if rng is not None else cfg.seed,
            enforce_positivity=cfg.enforce_positivity, D=scheme.D,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "initial") from exc
    c0_linf = initial_report(state)["c0_linf"]
    cal = cfg.calibration
    C_budget = cal.get("C_budget", 0.0)
    constants = BudgetConstants(
        lambda0=float(cal.get("lambda0", 0.0)),
        c0_linf=c0_linf,
        C_budget=0.0 if C_budget == "calibrate" else float(C_budget),
    )
    return Setup(grid, scheme, cfg.drivers(grid), state, constants)


def _constants_dict(c: BudgetConstants) -> dict:
    return {
        "lambda0": c.lambda0,
        "c0_linf": c.c0_linf,
        "C_budget": c.C_budget,
        "lambda1": c.lambda1,
        "lambda2": c.lambda2,
        "lambda0_threshold": c.lambda0_threshold,
    }


def _aux(ledger: LedgerBuilder | None, constants: BudgetConstants) -> dict:
    aux = {"constants": _constants_dict(constants)}
    if ledger is not None and ledger.rows:
        aux["row"] = ledger.rows[-1].as_dict()
    return aux


def simulate(
    setup: Setup,
    writer: ArtifactWriter | None = None,
    prefix: str = "",
    snapshot_stride: int = 0,
    ledger: LedgerBuilder | bool = True,
    track_qv: bool = False,
    on_step=None,
    state: SimulationState | None = None,
):
    """Run one trajectory with an optional ledger, snapshots and a per-step hook.

    On a non-finite value the partial ledger and the last valid state are
    written (when a writer is given) before the fault propagates.
    """
    if ledger is True:
        ledger = LedgerBuilder(setup.constants, setup.scheme.dt)
    elif ledger is False:
        ledger = None

    def hook(st, info):
        if snapshot_stride and writer is not None and st.step % snapshot_stride == 0:
            writer.snapshot(f"{prefix}snapshots/step_{st.step:06d}.ckpt", st, _aux(ledger, setup.constants))
        if on_step is not None:
            on_step(st, info)

    try:
        return run(state or setup.state, setup.scheme, setup.drivers, ledger, hook, track_qv)
    except SimulationFault as fault:
        if writer is not None:
            if ledger is not None:
                writer.ledger(f"{prefix}ledger.csv", ledger.rows)
            writer.snapshot(f"{prefix}fault.ckpt", fault.last_state, _aux(ledger, setup.constants))
        raise


# -- single -----------------------------------------------------------------------


def _finish_single(cfg, setup, rows, final_state, writer, result):
    cal = cfg.calibration
    margin = float(cal.get("margin", 1.5))
    constants = setup.constants
    dt = setup.scheme.dt
    calibrated = {}
    if cal.get("C_budget") == "calibrate":
        C = calibrate_budget(rows, replace(constants, C_budget=0.0), dt, margin)
        for prev, row in zip(rows[:-1], rows[1:]):
            row.budget_residual -= (C - constants.C_budget) * (1.0 + prev.F_val) * dt
        constants = replace(constants, C_budget=C)
        calibrated["C_budget"] = C
    C2 = cal.get("C2", 0.0)
    if C2 == "calibrate":
        C2 = calibrate_cor32(rows, margin)
        calibrated["C2"] = C2

    writer.ledger("ledger.csv", rows)
    if cfg.output.get("checkpoint_final", True):
        writer.snapshot("final.ckpt", final_state, {"constants": _constants_dict(constants), "row": rows[-1].as_dict()})

    inv = lemma31_check(rows, constants.c0_linf, cfg.tol("mass_rel", 1e-10), cfg.tol("linf_overshoot", 1e-6))
    bud = budget_report(rows, constants.C_budget)
    cor = cor32_bound(rows, float(C2))
    result.reports.update({
        "initial": {
            "c0_linf": constants.c0_linf,
            "lambda0_threshold": constants.lambda0_threshold,
            "radius": rows[0].radius,
            "mass_n": rows[0].mass_n,
        },
        "final": {"t": final_state.t, "steps": final_state.step, "stopped_at": final_state.stopped_at},
        "lemma31": inv.as_dict(),
        "budget": bud.as_dict(),
        "cor32": cor.summary(),
    })
    result.constants = {**_constants_dict(constants), "C2": float(C2), "calibrated": calibrated}
    result.check("mass", inv.mass_ok, drift=inv.mass_drift, tol=inv.mass_tol, t=inv.mass_drift_t)
    result.check("max_principle", inv.linf_ok, overshoot=inv.linf_overshoot, tol=inv.linf_tol, t=inv.overshoot_t)
    result.check("budget", bud.passed, max_residual=bud.max_residual, excluded=bud.n_excluded,
                 first_violation_t=bud.first_violation_t)
    result.check("cor32", cor.passed, n_violations=len(cor.violations), C2=float(C2))
    if result.selected is None:
        noisy = setup.drivers.wiener_active or setup.drivers.jump_active
        result.selected = ["mass"] if noisy else ["mass", "max_principle", "budget"]
    return result


def run_single(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    setup = build_setup(cfg)
    noisy = setup.drivers.wiener_active or setup.drivers.jump_active
    rec = simulate(setup, writer, "", int(cfg.output.get("snapshot_stride", 0)), track_qv=noisy)
    return _finish_single(cfg, setup, rec.rows, rec.final_state, writer, result)


def resume_single(cfg: ExperimentConfig, payload: bytes, writer: ArtifactWriter, result: ExperimentResult):
    """Continue a single-trajectory run from a checkpoint written by that run."""
    state, aux = load_checkpoint(payload)
    grid = cfg.grid()
    if state.grid != grid:
        raise ConfigError(f"checkpoint grid {state.grid} does not match config grid {grid}", "grid")
    setup = build_setup(cfg)
    if "constants" in aux:
        k = aux["constants"]
        setup.constants = BudgetConstants(k["lambda0"], k["c0_linf"], k["C_budget"])
    ledger_path = writer.root / "ledger.csv"
    rows = []
    if ledger_path.exists():
        rows = [r for r in read_ledger_csv(ledger_path) if r.step <= state.step]
    if not rows or rows[-1].step != state.step:
        if "row" not in aux:
            raise ConfigError("checkpoint carries no ledger row and no matching ledger.csv exists")
        rows = rows + [EntropyLedgerRow(**aux["row"])]
    lb = LedgerBuilder(setup.constants, setup.scheme.dt, rows=list(rows))
    noisy = setup.drivers.wiener_active or setup.drivers.jump_active
    rec = simulate(setup, writer, "", int(cfg.output.get("snapshot_stride", 0)), lb, track_qv=noisy, state=state)
    return _finish_single(cfg, setup, lb.rows, rec.final_state, writer, result)


# -- ensembles --------------------------------------------------------------------


def _member(raw: dict, source, m, index: int, keep_rows: bool) -> dict:
    cfg = ExperimentConfig(raw, Path(source) if source else None)
    master = int(cfg.experiment.get("master_seed", cfg.seed))
    setup = build_setup(cfg, m, rng=trajectory_rng(master, index))
    noisy = setup.drivers.wiener_active
    rec = simulate(setup, track_qv=noisy)
    rows = rec.rows
    return {
        "index": index,
        "functionals": path_functionals(rows),
        "max_radius": max(r.radius for r in rows),
        "initial_radius": rows[0].radius,
        "noise_work": float(sum(r.noise_work for r in rows)),
        "noise_qv": float(sum(r.noise_qv for r in rows[1:])) if noisy else 0.0,
        "jump_martingale": float(sum(r.jump_martingale for r in rows)),
        "stopped_at": rec.final_state.stopped_at,
        "rows": rows if keep_rows else None,
    }


def _map_members(cfg: ExperimentConfig, m, K: int, keep_rows: bool) -> list[dict]:
    workers = int(cfg.experiment.get("workers", 1))
    fn = partial(_member, cfg.raw, str(cfg.source) if cfg.source else None, m, keep_rows=keep_rows)
    if workers <= 1:
        return [fn(i) for i in range(K)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(K)))


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def run_ensemble(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    exp = cfg.experiment
    K = int(exp.get("K", 30))
    p_list = exp.get("p_list", [1, 2, 3])
    m_list = exp.get("m_list") or [None]
    keep = bool(cfg.output.get("write_trajectories", True))
    n_sigma = cfg.tol("n_sigma", 3.0)
    reports = {}
    moment_reports = []
    for m in m_list:
        members = _map_members(cfg, m, K, keep)
        tag = f"m{m}" if m is not None else f"m{cfg.grid().m}"
        if keep:
            for mem in members:
                writer.ledger(f"trajectories/{tag}/traj_{mem['index']:04d}.csv", mem["rows"])
        mr = moment_estimates([mem["functionals"] for mem in members], p_list)
        moment_reports.append((tag, mr))
        nw_mean, nw_se = _mean_se([mem["noise_work"] for mem in members])
        jm_mean, jm_se = _mean_se([mem["jump_martingale"] for mem in members])
        iso = [mem["noise_work"] ** 2 - mem["noise_qv"] for mem in members]
        iso_mean, iso_se = _mean_se(iso)
        reports[tag] = {
            "moments": mr.as_dict(),
            "noise_work_mean": [nw_mean, nw_se],
            "jump_martingale_mean": [jm_mean, jm_se],
            "isometry_defect_mean": [iso_mean, iso_se],
            "stopped": sum(mem["stopped_at"] is not None for mem in members),
        }
        result.check(f"moments[{tag}]", mr.finite and mr.power_mean_ok, finite=mr.finite, power_mean=mr.power_mean_ok)
        result.check(f"martingale[{tag}]",
                     abs(nw_mean) <= n_sigma * nw_se + 1e-300 and abs(jm_mean) <= n_sigma * jm_se + 1e-300,
                     noise_work=[nw_mean, nw_se], jump=[jm_mean, jm_se])
        result.check(f"isometry[{tag}]", abs(iso_mean) <= n_sigma * iso_se + 1e-300, defect=[iso_mean, iso_se])
    if len(moment_reports) > 1:
        comps = {}
        ok = True
        for (ta, a), (tb, b) in zip(moment_reports[:-1], moment_reports[1:]):
            c = compare_moments(a, b, n_sigma)
            comps[f"{ta}-{tb}"] = c
            ok &= all(v["overlap"] for v in c.values())
        reports["across_m"] = comps
        result.check("moments_across_m", ok)
    result.reports.update(reports)
    if result.selected is None:
        result.selected = [k for k in result.checks if k.startswith("moments")]
    return result


def run_escape(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    exp = cfg.experiment
    K = int(exp.get("K", 100))
    master = int(exp.get("master_seed", cfg.seed))
    D_list = [float(d) for d in exp["D_list"]]
    rows_out = []
    max_r, init_r = [], []
    for i in range(K):
        setup = build_setup(cfg, rng=trajectory_rng(master, i), scheme=cfg.scheme(D="inf"))
        r0 = state_radius(setup.state.n, setup.state.c, setup.state.u)
        peak = [r0]
        simulate(setup, ledger=False, on_step=lambda st, info: peak.append(state_radius(st.n, st.c, st.u)))
        max_r.append(max(peak))
        init_r.append(r0)
        rows_out.append((i, r0, max(peak)))
    writer.text("escape_radii.csv", table_csv(["index", "initial_radius", "max_radius"], rows_out))
    rep = escape_probability(max_r, D_list, init_r)
    result.reports["escape"] = rep.as_dict()
    limit = cfg.tol("escape_max_fraction", 0.05)
    result.check("escape", rep.monotone and rep.fractions[-1] <= limit,
                 fractions=rep.fractions, D_list=D_list, limit=limit, monotone=rep.monotone)
    if result.selected is None:
        result.selected = ["escape"]
    return result


# -- convergence ------------------------------------------------------------------


def _velocity_difference_sq(coarse, fine) -> float:
    """||u_fine - u_coarse||^2 for cutoffs m_c < m_f on possibly different grids."""
    gc, gf = coarse.grid, fine.grid
    mc = gc.m
    idx_c = np.r_[np.arange(0, mc + 1), np.arange(gc.N - mc, gc.N)]
    idx_f = np.r_[np.arange(0, mc + 1), np.arange(gf.N - mc, gf.N)]
    low_c = coarse.coeffs[:, idx_c[:, None], idx_c[None, :]]
    low_f = fine.coeffs[:, idx_f[:, None], idx_f[None, :]]
    high = fine.coeffs[:, ~gf.mask_for(mc)]
    return gf.area * float(np.sum(np.abs(low_f - low_c) ** 2) + np.sum(np.abs(high) ** 2))


def run_convergence(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    m_list = [int(m) for m in cfg.experiment["m_list"]]
    setups = [build_setup(cfg, m, rng=cfg.seed) for m in m_list]
    scheme = setups[0].scheme
    gens = [trajectory(s.state, s.scheme, s.drivers) for s in setups]
    states = [s.state for s in setups]
    pairs = list(zip(range(len(m_list) - 1), range(1, len(m_list))))
    acc = [0.0] * len(pairs)
    table = []
    for k in range(scheme.n_steps):
        d = [_velocity_difference_sq(states[i].u, states[j].u) for i, j in pairs]
        table.append([states[0].t] + d)
        acc = [a + scheme.dt * v for a, v in zip(acc, d)]
        try:
            states = [next(g)[0] for g in gens]
        except StopIteration:
            break
    norms = [math.sqrt(a) for a in acc]
    cols = ["t"] + [f"diff_sq_m{m_list[i]}_m{m_list[j]}" for i, j in pairs]
    writer.text("convergence_series.csv", table_csv(cols, table))
    writer.text("convergence.csv", table_csv(
        ["m_coarse", "m_fine", "l2_time_h"], [(m_list[i], m_list[j], v) for (i, j), v in zip(pairs, norms)]
    ))
    decreasing = all(b < a for a, b in zip(norms[:-1], norms[1:]))
    result.reports["convergence"] = {
        "m_list": m_list,
        "N_list": [s.grid.N for s in setups],
        "pairs": [[m_list[i], m_list[j], v] for (i, j), v in zip(pairs, norms)],
        "T": states[0].t,
    }
    result.check("convergence", decreasing, norms=norms)
    if result.selected is None:
        result.selected = ["convergence"]
    return result


# -- uniqueness -------------------------------------------------------------------


def unit_perturbation(state: SimulationState, seed: int, kmax: int = 8, decay: float = 2.0) -> tuple:
    """Band-limited random (n, c, u) perturbation with A-norm one."""
    g = state.grid
    K = min(kmax, g.m)
    n = _table_to_grid(g, _spectral_table(K, seed, decay))[0]
    c = _table_to_grid(g, _spectral_table(K, seed + 1, decay))[0]
    u = _leray_coeffs(g, _table_to_grid(g, _spectral_table(K, seed + 2, decay, components=2)))
    zero = SimpleNamespace(n=SpectralScalarField(g, 0 * n), c=SpectralScalarField(g, 0 * c),
                           u=SolenoidalVelocityField(g, 0 * u))
    pert = SimpleNamespace(n=SpectralScalarField(g, n), c=SpectralScalarField(g, c), u=SolenoidalVelocityField(g, u))
    s = 1.0 / math.sqrt(uniqueness_metrics(pert, zero).A_t)
    return n * s, c * s, u * s


def run_uniqueness(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    exp = cfg.experiment
    delta = float(exp["delta"])
    a = build_setup(cfg, rng=cfg.seed)
    twin = build_setup(cfg, rng=cfg.seed)
    b = build_setup(cfg, rng=cfg.seed)
    pn, pc, pu = unit_perturbation(a.state, int(exp.get("perturbation_seed", 1)))
    s0 = b.state
    b.state = SimulationState(
        SpectralScalarField(s0.grid, s0.n.coeffs + delta * pn),
        SpectralScalarField(s0.grid, s0.c.coeffs + delta * pc),
        SolenoidalVelocityField(s0.grid, s0.u.coeffs + delta * pu),
        s0.t, s0.rng,
    )
    la = LedgerBuilder(a.constants, a.scheme.dt)
    lt = LedgerBuilder(twin.constants, twin.scheme.dt)
    sa, st, sb = a.state, twin.state, b.state
    la.append(sa, None)
    lt.append(st, None)
    gens = [trajectory(s.state, s.scheme, s.drivers) for s in (a, twin, b)]
    dt = a.scheme.dt
    table = []
    int_C = 0.0
    A_twin_max = 0.0
    A0 = None
    while True:
        um = uniqueness_metrics(sa, sb)
        A_tw = uniqueness_metrics(sa, st).A_t
        A_twin_max = max(A_twin_max, A_tw)
        if A0 is None:
            A0 = um.A_t
        table.append([sa.t, A_tw, um.A_t, um.B_t, um.C_t, int_C, math.exp(int_C)])
        try:
            (sa, ia), (st, it), (sb, _) = [next(g) for g in gens]
        except StopIteration:
            break
        la.append(sa, ia)
        lt.append(st, it)
        int_C += dt * um.C_t
    writer.ledger("ledger.csv", la.rows)
    writer.ledger("ledger_twin.csv", lt.rows)
    writer.text("uniqueness.csv", table_csv(["t", "A_twin", "A", "B", "C", "int_C", "growth_bound"], table))
    identical = ledger_csv(la.rows) == ledger_csv(lt.rows)
    A_T = table[-1][2]
    ratio = A_T / A0
    bound = math.exp(table[-1][5])
    rel0 = abs(A0 / delta**2 - 1.0)
    result.reports["uniqueness"] = {
        "delta": delta, "A0": A0, "A0_over_delta_sq": A0 / delta**2, "A_T": A_T,
        "ratio": ratio, "growth_bound": bound, "int_C": table[-1][5], "T": sa.t, "A_twin_max": A_twin_max,
    }
    result.check("twin", identical and A_twin_max == 0.0, ledgers_identical=identical, A_twin_max=A_twin_max)
    result.check("perturbation", rel0 <= cfg.tol("A0_rel", 1e-3) and ratio <= bound,
                 A0_rel_error=rel0, ratio=ratio, growth_bound=bound)
    if result.selected is None:
        result.selected = ["twin", "perturbation"]
    return result


# -- exact solutions --------------------------------------------------------------


def _run_consumption(cfg, writer, result):
    exp = cfg.experiment
    dt_list = [float(d) for d in exp.get("dt_list", [cfg.scheme().dt])]
    errs, rows = [], []
    for dt in dt_list:
        setup = build_setup(cfg, scheme=cfg.scheme(dt=dt))
        n0, c0 = setup.state.n, setup.state.c
        if np.any(n0.coeffs.ravel()[1:]) or np.any(c0.coeffs.ravel()[1:]):
            raise ConfigError("the consumption oracle needs spatially constant n0 and c0", "initial")
        nbar, cbar = n0.mean, c0.mean
        rec = simulate(setup, ledger=False)
        T = rec.final_state.t
        exact = cbar * math.exp(-nbar * T)
        err = float(np.abs(rec.final_state.c.values - exact).max())
        errs.append(err)
        rows.append((dt, T, exact, err))
    writer.text("consumption.csv", table_csv(["dt", "T", "exact", "linf_error"], rows))
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    lo, hi = cfg.tol("ratio_min", 1.8), cfg.tol("ratio_max", 2.2)
    tol = cfg.tol("consumption_linf", 1e-6)
    result.reports["consumption"] = {"dt_list": dt_list, "errors": errs, "ratios": ratios}
    result.check("exact", errs[0] <= tol and all(lo <= r <= hi for r in ratios),
                 errors=errs, ratios=ratios, tol=tol)


def _run_transport(cfg, writer, result):
    exp = cfg.experiment
    U, V = (float(v) for v in exp.get("velocity", [1.0, 0.0]))
    grid = cfg.grid()
    T = float(exp.get("crossings", 1.0)) * grid.L / math.hypot(U, V)
    n_steps = max(1, math.ceil(T / cfg.scheme().dt - 1e-9))
    scheme = cfg.scheme(dt=T / n_steps, T=T)
    raw = dict(cfg.raw)
    raw["initial"] = {**raw.get("initial", {}), "u": {"preset": "constant", "value": [U, V]}}
    tcfg = ExperimentConfig(raw, cfg.source)
    setup = build_setup(tcfg, scheme=scheme)
    spec_n = raw["initial"]["n"]
    worst = [0.0, 0.0]
    series = []

    def check(st, info):
        exact = scalar_preset(grid, spec_n, cfg.resolve_path, shift=(U * st.t, V * st.t))
        err = float(np.linalg.norm(st.n.values - exact) / np.linalg.norm(exact))
        series.append((st.step, st.t, err))
        if err > worst[0]:
            worst[:] = [err, st.t]

    simulate(setup, ledger=False, on_step=check)
    writer.text("transport.csv", table_csv(["step", "t", "rel_l2_error"], series))
    tol = cfg.tol("transport_rel_l2", 1e-8)
    result.reports["transport"] = {"T": T, "steps": n_steps, "dt": scheme.dt, "max_rel_error": worst[0], "at_t": worst[1]}
    result.check("exact", worst[0] <= tol, max_rel_error=worst[0], tol=tol)


def run_exact(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    problem = cfg.experiment["problem"]
    if problem == "consumption":
        _run_consumption(cfg, writer, result)
    else:
        _run_transport(cfg, writer, result)
    if result.selected is None:
        result.selected = ["exact"]
    return result


# -- frozen-velocity noise statistics ---------------------------------------------


def _frozen_velocity(cfg: ExperimentConfig, grid) -> tuple[SolenoidalVelocityField, float]:
    """Configured initial velocity, Leray-projected and rescaled to ``frozen_u_norm``; returns (u, scale)."""
    _, _, u0 = cfg.initial_fields(grid)
    u = SolenoidalVelocityField(grid, _leray_coeffs(grid, forward_vector_transform(u0, grid).coeffs))
    target = cfg.experiment.get("frozen_u_norm")
    if target is None:
        return u, 1.0
    norm = math.sqrt(inner(u, u))
    if norm == 0:
        raise ConfigError("frozen velocity is zero; cannot normalize", "initial.u")
    scale = float(target) / norm
    return SolenoidalVelocityField(grid, u.coeffs * scale), scale


def isometry_coefficients(cfg: ExperimentConfig, grid, u_scale: float, g_vals_fn, refine: int = 4) -> np.ndarray:
    """a_i = sigma ∫ (b_i · ∇u + c_i u) · g dx by direct quadrature with analytic derivatives.

    Valid for a Taylor-Green frozen velocity ``u_scale (sin kx cos ky, -cos kx sin ky)``
    and a divergence-free, band-limited test field ``g``; quadrature on a
    ``refine`` times finer grid is exact for these trigonometric polynomials.
    """
    spec = cfg.raw["noise"]["wiener"]
    sigma = float(spec["amplitude"])
    Nq = grid.N * refine
    xq = np.arange(Nq) * (grid.L / Nq)
    x, y = np.meshgrid(xq, xq, indexing="ij")
    k = grid.kappa * int(cfg.raw["initial"]["u"].get("mode", 1))
    A = u_scale
    ux, uy = A * np.sin(k * x) * np.cos(k * y), -A * np.cos(k * x) * np.sin(k * y)
    ux_x, ux_y = A * k * np.cos(k * x) * np.cos(k * y), -A * k * np.sin(k * x) * np.sin(k * y)
    uy_x, uy_y = A * k * np.sin(k * x) * np.sin(k * y), -A * k * np.cos(k * x) * np.cos(k * y)
    gx, gy = g_vals_fn(x, y)
    dA = (grid.L / Nq) ** 2
    out = []
    for i in range(int(spec["modes"])):
        b, c = wiener_mode_functions(i, float(spec.get("b_scale", 0.0)), float(spec.get("c_scale", 1.0)), grid.kappa)
        bx, by = b(x, y)
        cc = c(x, y)
        hx = bx * ux_x + by * ux_y + cc * ux
        hy = bx * uy_x + by * uy_y + cc * uy
        out.append(sigma * dA * float(np.sum(hx * gx + hy * gy)))
    return np.asarray(out)


def run_noise(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    exp = cfg.experiment
    stat = exp.get("statistic", "all")
    grid = cfg.grid()
    dt = cfg.scheme().dt
    u, u_scale = _frozen_velocity(cfg, grid)
    u_sq = inner(u, u)
    n_sigma = cfg.tol("n_sigma", 3.0)
    master = int(exp.get("master_seed", cfg.seed))
    n_paths = int(exp.get("n_paths", 10_000))
    path_steps = int(exp.get("path_steps", 10))
    wiener, jump = cfg.wiener(grid), cfg.jump()

    if stat in ("jumps", "all"):
        if jump is None:
            raise ConfigError("jump statistics need a jump block", "noise.jump")
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        n_steps = int(exp.get("n_steps", 10_000))
        X = np.empty(n_steps)
        for k in range(n_steps):
            inc = sample_increment(wiener, jump, dt, rng)
            X[k] = sum(inner(F, F) for F in (apply_jump(u, r) for r in inc.jump_radii)) / dt
        target = jump.mu(2) * u_sq
        mean, se = _mean_se(X)
        result.reports["jump_second_moment"] = {"mean": mean, "se": se, "target": target, "mu2": jump.mu(2),
                                                "u_norm": math.sqrt(u_sq), "n_steps": n_steps, "dt": dt}
        result.check("jump_moment", abs(mean - target) <= n_sigma * se, mean=mean, se=se, target=target)

        e = SolenoidalVelocityField(grid, u.coeffs / math.sqrt(u_sq))
        Y = np.empty(n_paths)
        for i in range(n_paths):
            prng = trajectory_rng(master, i)
            total = 0.0
            for _ in range(path_steps):
                inc = sample_increment(wiener, jump, dt, prng)
                total += sum(inner(apply_jump(u, r), e) for r in inc.jump_radii)
                total += inner(compensator_drift(u, jump, dt), e)
            Y[i] = total
        ym, yse = _mean_se(Y)
        result.reports["compensated_jumps"] = {"mean": ym, "se": yse, "n_paths": n_paths, "horizon": path_steps * dt}
        result.check("martingale", abs(ym) <= n_sigma * yse, mean=ym, se=yse)

    if stat in ("isometry", "all"):
        if wiener is None:
            raise ConfigError("isometry statistics need a wiener block", "noise.wiener")
        if cfg.raw["initial"]["u"]["preset"] != "taylor-green":
            raise ConfigError("the isometry oracle needs a taylor-green frozen velocity", "initial.u.preset")
        k = grid.kappa
        x, y = grid.coords
        g_fn = lambda X, Y_: (np.sin(k * Y_) + np.cos(k * (X + Y_)), -np.cos(k * (X + Y_)))
        gx, gy = g_fn(x, y)
        g_field = SolenoidalVelocityField(grid, forward_vector_transform(np.stack([gx, gy]), grid).coeffs)
        tg_amp = float(cfg.raw["initial"]["u"].get("amplitude", 1.0))
        a = isometry_coefficients(cfg, grid, tg_amp * u_scale, g_fn)
        qv = path_steps * dt * float(np.sum(a**2))
        Z = np.empty(n_paths)
        for i in range(n_paths):
            prng = trajectory_rng(master, i)
            total = 0.0
            for _ in range(path_steps):
                inc = sample_increment(wiener, None, dt, prng)
                total += inner(apply_gaussian(u, inc, wiener), g_field)
            Z[i] = total
        var = float(Z.var(ddof=1))
        se = qv * math.sqrt(2.0 / (n_paths - 1))
        result.reports["isometry"] = {"variance": var, "quadratic_variation": qv, "se": se, "n_paths": n_paths,
                                      "coefficients": a.tolist(), "mean": float(Z.mean())}
        result.check("isometry", abs(var - qv) <= n_sigma * se, variance=var, qv=qv, se=se)
    if result.selected is None:
        result.selected = list(result.checks)
    return result


# -- hypotheses -------------------------------------------------------------------


def hypothesis_report(cfg: ExperimentConfig):
    grid = cfg.grid()
    _, c0, _ = cfg.initial_fields(grid)
    c0_linf = float(np.abs(forward_transform(c0, grid).values).max())
    wiener = cfg.wiener(grid)
    if wiener is None:
        raise ConfigError("hypothesis checks need an enabled wiener block", "noise.wiener")
    samples = default_sample_states(grid, int(cfg.experiment.get("samples", 12)), cfg.seed)
    return verify_hypotheses(wiener, cfg.jump(), samples, c0_linf)


def run_hypotheses(cfg: ExperimentConfig, writer: ArtifactWriter, result: ExperimentResult) -> ExperimentResult:
    rep = hypothesis_report(cfg)
    result.reports["hypotheses"] = rep.as_dict()
    result.check("hypotheses", rep.passed, lambda0=rep.lambda0_status, L_G=rep.L_G_status,
                 jump=rep.jump_status, margin=rep.margin_status)
    if result.selected is None:
        result.selected = ["hypotheses"]
    return result


RUNNERS = {
    "single": run_single,
    "ensemble": run_ensemble,
    "escape": run_escape,
    "convergence": run_convergence,
    "uniqueness": run_uniqueness,
    "exact": run_exact,
    "noise": run_noise,
    "hypotheses": run_hypotheses,
}


def _select(cfg: ExperimentConfig, result: ExperimentResult):
    if cfg.gates is not None:
        wanted = set(cfg.gates)
        result.selected = [k for k in result.checks if k.split("[")[0] in wanted]


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None, resume_payload: bytes | None = None) -> ExperimentResult:
    """Run one experiment and write its artifacts and summary.json; never raises SimulationFault."""
    writer = ArtifactWriter(out_dir if out_dir is not None else output_dir(cfg))
    result = ExperimentResult(cfg.name, cfg.kind)
    try:
        if resume_payload is not None:
            if cfg.kind != "single":
                raise ConfigError("resume is supported for single-trajectory configs only", "kind")
            resume_single(cfg, resume_payload, writer, result)
        else:
            RUNNERS[cfg.kind](cfg, writer, result)
        _select(cfg, result)
    except SimulationFault as fault:
        result.fault = str(fault)
    writer.summary(result.summary(cfg.raw))
    return result
