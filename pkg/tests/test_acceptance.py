"""Acceptance suite: one class per criterion, each driven by a shipped config.

Every test records a PASS/FAIL line before asserting so the terminal summary lists all twelve.
"""

import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from levycns.harness.config import load_config
from levycns.harness.experiments import hypothesis_report, run_experiment
from levycns.harness.reports import read_ledger_csv
from levycns.noise import lambda0_threshold

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(name, out):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    start = time.perf_counter()
    result = run_experiment(cfg, out / name)
    return cfg, result, time.perf_counter() - start


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    cfg, result, seconds = run("small-data", out)
    rows = read_ledger_csv(out / "small-data" / "ledger.csv")
    return cfg, result, seconds, rows


class TestMassConservation:
    def test_criterion_01(self, small_data):
        cfg, result, seconds, rows = small_data
        grid, scheme = cfg.grid(), cfg.scheme()
        mass = np.array([r.mass_n for r in rows])
        drift = float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))
        setup_ok = (grid.N, grid.m, scheme.dt, scheme.T) == (128, 42, 1e-3, 1.0) and not cfg.noise_enabled
        passed = setup_ok and result.fault is None and drift <= 1e-10 and seconds <= 60.0
        record_criterion(1, passed, f"relative mass drift {drift:.2e} (tol 1e-10), runtime {seconds:.1f}s (limit 60s)")
        assert setup_ok
        assert drift <= 1e-10
        assert seconds <= 60.0


class TestMaximumPrinciple:
    def test_criterion_02(self, small_data):
        cfg, result, _, rows = small_data
        c0 = result.constants["c0_linf"]
        peak = max(r.linf_c for r in rows)
        passed = result.fault is None and peak <= c0 + 1e-6
        record_criterion(2, passed, f"max ||c||_inf {peak:.12g} vs ||c0||_inf {c0:.12g} + 1e-6")
        assert peak <= c0 + 1e-6


class TestConsumptionDecay:
    def test_criterion_03(self, tmp_path):
        cfg, result, _ = run("consumption-decay", tmp_path)
        rep = result.reports["consumption"]
        err0 = rep["errors"][0]
        ratio = rep["ratios"][0]
        passed = rep["dt_list"][:2] == [1e-3, 5e-4] and err0 <= 1e-6 and 1.8 <= ratio <= 2.2
        record_criterion(3, passed, f"L-inf error {err0:.3e} at dt=1e-3 (tol 1e-6), halving ratio {ratio:.4f} in [1.8, 2.2]")
        assert rep["dt_list"][:2] == [1e-3, 5e-4]
        assert err0 <= 1e-6
        assert 1.8 <= ratio <= 2.2


class TestExactTransport:
    def test_criterion_04(self, tmp_path):
        cfg, result, _ = run("transport", tmp_path)
        rep = result.reports["transport"]
        U, V = cfg.experiment["velocity"]
        crossing = cfg.grid().L / math.hypot(U, V)
        passed = rep["T"] >= crossing * (1 - 1e-12) and rep["max_rel_error"] <= 1e-8
        record_criterion(4, passed, f"max relative L2 error {rep['max_rel_error']:.3e} over T={rep['T']:.4f} (tol 1e-8)")
        assert not cfg.scheme().diffusion
        assert rep["T"] >= crossing * (1 - 1e-12)
        assert rep["max_rel_error"] <= 1e-8


class TestEntropyBudget:
    def test_criterion_05(self, small_data):
        cfg, result, _, rows = small_data
        const = result.constants
        frozen = cfg.calibration["C_budget"]
        lam0, c0 = const["lambda0"], const["c0_linf"]
        lam1 = min(1.0 / 24.0, 2.0 - lam0)
        lam2 = 2.0 + 16.0 * c0 / (2.0 - lam0)
        residual = max(r.budget_residual for r in rows[1:])
        constants_ok = const["C_budget"] == frozen and const["lambda1"] == lam1 and const["lambda2"] == lam2
        passed = constants_ok and residual <= 0.0
        record_criterion(5, passed, f"max budget residual {residual:.3e} (<= 0) with frozen C_budget={frozen}, "
                                    f"lambda1={lam1:.6g}, lambda2={lam2:.6g}")
        assert constants_ok
        assert residual <= 0.0


class TestLambdaZeroGate:
    def test_criterion_06(self):
        exact = Fraction(1, 3**7 * 386**2)
        got = lambda0_threshold(1.0)
        digits_ok = f"{got:.11e}" == f"{float(exact):.11e}"
        pure = hypothesis_report(load_config(CONFIGS / "hypotheses-pure-c.yaml"))
        grad = hypothesis_report(load_config(CONFIGS / "hypotheses-gradient.yaml"))
        gate_ok = (
            pure.c0_linf == 1.0 and grad.c0_linf == 1.0
            and pure.lambda0_status == "PASS"
            and grad.lambda0_status == "FAIL"
            and grad.lambda0_estimate > grad.lambda0_threshold
        )
        record_criterion(6, digits_ok and gate_ok,
                         f"threshold {got:.12g} vs 1/(3^7*386^2)={float(exact):.12g}; "
                         f"pure-c lambda0 {pure.lambda0_status}, gradient lambda0 {grad.lambda0_status} "
                         f"(estimate {grad.lambda0_estimate:.3g})")
        assert digits_ok
        assert gate_ok


class TestPathwiseUniqueness:
    def test_criterion_07(self, tmp_path):
        cfg, result, _ = run("uniqueness", tmp_path)
        rep = result.reports["uniqueness"]
        out = tmp_path / "uniqueness"
        same = (out / "ledger.csv").read_bytes() == (out / "ledger_twin.csv").read_bytes()
        rel0 = abs(rep["A0_over_delta_sq"] - 1.0)
        passed = (
            cfg.experiment["delta"] == 1e-6 and abs(rep["T"] - 0.5) < 1e-9
            and same and rep["A_twin_max"] == 0.0 and rel0 <= 1e-3 and rep["ratio"] <= rep["growth_bound"]
        )
        record_criterion(7, passed, f"twin ledgers identical={same}, A0/delta^2-1={rel0:.2e}, "
                                    f"A(T)/A(0)={rep['ratio']:.4g} <= exp(int C)={rep['growth_bound']:.4g}")
        assert same and rep["A_twin_max"] == 0.0
        assert rel0 <= 1e-3
        assert rep["ratio"] <= rep["growth_bound"]


class TestJumpStatistics:
    def test_criterion_08(self, tmp_path):
        cfg, result, seconds = run("noise-jumps", tmp_path)
        mom = result.reports["jump_second_moment"]
        comp = result.reports["compensated_jumps"]
        exp = cfg.experiment
        setup_ok = (exp["frozen_u_norm"] == 2.0 and abs(mom["mu2"] - 0.5) < 1e-12
                    and exp["n_steps"] >= 10_000 and comp["n_paths"] >= 10_000 and abs(mom["target"] - 2.0) < 1e-9)
        moment_ok = abs(mom["mean"] - 2.0) <= 3 * mom["se"]
        mart_ok = abs(comp["mean"]) <= 3 * comp["se"]
        passed = setup_ok and moment_ok and mart_ok and seconds <= 120.0
        record_criterion(8, passed, f"second moment {mom['mean']:.4f}+-{mom['se']:.4f} vs 2.0, "
                                    f"compensated mean {comp['mean']:.2e}+-{comp['se']:.2e}, runtime {seconds:.1f}s")
        assert setup_ok
        assert moment_ok and mart_ok
        assert seconds <= 120.0


class TestItoIsometry:
    def test_criterion_09(self, tmp_path):
        cfg, result, _ = run("noise-isometry", tmp_path)
        rep = result.reports["isometry"]
        ok = rep["n_paths"] >= 10_000 and abs(rep["variance"] - rep["quadratic_variation"]) <= 3 * rep["se"]
        record_criterion(9, ok, f"variance {rep['variance']:.5g} vs quadratic variation "
                                f"{rep['quadratic_variation']:.5g} (3 sigma = {3 * rep['se']:.2g})")
        assert ok


class TestGalerkinConvergence:
    def test_criterion_10(self, tmp_path):
        cfg, result, seconds = run("convergence", tmp_path)
        rep = result.reports["convergence"]
        norms = [p[2] for p in rep["pairs"]]
        decreasing = all(b < a for a, b in zip(norms[:-1], norms[1:]))
        passed = rep["m_list"] == [16, 32, 64] and cfg.noise_enabled and decreasing and seconds <= 300.0
        record_criterion(10, passed, f"||u^2m - u^m|| = {', '.join(f'{v:.4g}' for v in norms)}, runtime {seconds:.1f}s")
        assert rep["m_list"] == [16, 32, 64]
        assert decreasing
        assert seconds <= 300.0


class TestEscapeProbability:
    def test_criterion_11(self, tmp_path):
        cfg, result, _ = run("escape", tmp_path)
        rep = result.reports["escape"]
        fr = rep["fractions"]
        monotone = all(b <= a for a, b in zip(fr[:-1], fr[1:]))
        passed = cfg.experiment["K"] == 100 and len(fr) == 3 and monotone and fr[-1] <= 0.05
        record_criterion(11, passed, f"fractions {fr} at D={rep['D_list']}")
        assert cfg.experiment["K"] == 100 and len(fr) == 3
        assert monotone
        assert fr[-1] <= 0.05


class TestMomentFiniteness:
    def test_criterion_12(self, tmp_path):
        cfg, result, _ = run("moments", tmp_path)
        finite = all(result.checks[f"moments[m{m}]"]["detail"]["finite"] for m in (32, 64))
        comps = result.reports["across_m"]["m32-m64"]
        overlap = all(v["overlap"] for v in comps.values())
        passed = cfg.experiment["p_list"] == [1, 2, 3] and finite and overlap
        worst = max(abs(v["a"] - v["b"]) / ((v["se_a"] + v["se_b"]) or 1.0) for v in comps.values()) if comps else math.nan
        record_criterion(12, passed, f"{len(comps)} moment estimates finite={finite}, all overlap within 3 sigma={overlap} "
                                     f"(largest gap {worst:.2f} sigma)")
        assert finite
        assert overlap
