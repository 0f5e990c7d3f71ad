import math

import numpy as np
import pytest

from levycns.diagnostics import BudgetConstants, LedgerBuilder
from levycns.dynamics import potential_preset, taylor_green
from levycns.integrator import (
    CheckpointError,
    Drivers,
    SimulationFault,
    SimulationState,
    StepScheme,
    advance,
    checkpoint,
    initial_report,
    initialize,
    load_checkpoint,
    run,
    state_radius,
    states_identical,
    trajectory,
)
from levycns.noise import JumpDriverConfig, WienerDriverConfig
from levycns.spectral import TorusGrid, divergence_defect


def smooth_data(grid):
    x, y = grid.coords
    n0 = 0.5 + 0.1 * np.cos(x) * np.cos(y)
    c0 = 0.5 + 0.2 * np.sin(x) * np.sin(y)
    return n0, c0, taylor_green(grid, 0.1)


def noisy_drivers(grid, rate=2.0):
    return Drivers(
        potential_preset(grid),
        WienerDriverConfig.parametric(grid, 3, 0.3, b_scale=0.2),
        JumpDriverConfig(rate),
    )


class TestInitialize:
    def test_rejects_negative_with_minimum(self, grid):
        n0, c0, u0 = smooth_data(grid)
        with pytest.raises(ValueError, match="minimum is -0.4"):
            initialize(grid, n0 - 0.8, c0, u0, 0)

    def test_positivity_can_be_disabled(self, grid):
        z = np.zeros((grid.N, grid.N))
        s = initialize(grid, z, z, np.zeros((2, grid.N, grid.N)), 0, enforce_positivity=False)
        assert state_radius(s.n, s.c, s.u) == 0.0

    def test_stopped_when_radius_exceeds_D(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = initialize(grid, n0, c0, u0, 0, t0=0.3, D=1.0)
        assert s.stopped and s.stopped_at == 0.3
        nxt, info = advance(s, StepScheme(0.01, 1.0, D=1.0), Drivers(potential_preset(grid)))
        assert nxt is s and info.n_jumps == 0

    def test_velocity_is_projected(self, grid, rng):
        n0, c0, _ = smooth_data(grid)
        s = initialize(grid, n0, c0, rng.standard_normal((2, grid.N, grid.N)), 0)
        assert divergence_defect(s.u) < 1e-13

    def test_initial_report(self, grid):
        n0, c0, u0 = smooth_data(grid)
        rep = initial_report(initialize(grid, n0, c0, u0, 0))
        assert rep["c0_linf"] == pytest.approx(0.7, rel=1e-3)


class TestScheme:
    def test_step_count(self):
        assert StepScheme(1e-3, 1.0).n_steps == 1000

    @pytest.mark.parametrize("kw", [{"dt": 0.0, "T": 1.0}, {"dt": 0.1, "T": -1.0}, {"dt": 0.1, "T": 1.0, "D": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            StepScheme(**kw)


class TestAdvance:
    def test_does_not_mutate_input(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = initialize(grid, n0, c0, u0, 3)
        before = s.rng.bit_generator.state
        coeffs = s.u.coeffs.copy()
        advance(s, StepScheme(1e-2, 1.0), noisy_drivers(grid))
        assert s.rng.bit_generator.state == before
        assert np.array_equal(s.u.coeffs, coeffs)

    def test_deterministic_given_seed(self, grid):
        n0, c0, u0 = smooth_data(grid)
        a = run(initialize(grid, n0, c0, u0, 9), StepScheme(1e-2, 0.2), noisy_drivers(grid)).final_state
        b = run(initialize(grid, n0, c0, u0, 9), StepScheme(1e-2, 0.2), noisy_drivers(grid)).final_state
        assert states_identical(a, b)

    def test_mass_conserved_under_noise(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s0 = initialize(grid, n0, c0, u0, 1)
        rec = run(s0, StepScheme(1e-2, 0.5), noisy_drivers(grid, rate=20.0))
        assert sum(i.n_jumps for i in rec.infos) > 0
        assert abs(rec.final_state.n.coeffs[0, 0] - s0.n.coeffs[0, 0]) < 1e-14
        assert divergence_defect(rec.final_state.u) < 1e-12

    def test_zero_noise_equals_deterministic(self, grid):
        n0, c0, u0 = smooth_data(grid)
        off = Drivers(potential_preset(grid), WienerDriverConfig.parametric(grid, 3, 0.0), JumpDriverConfig(0.0))
        a = run(initialize(grid, n0, c0, u0, 1), StepScheme(1e-2, 0.1), off).final_state
        b = run(initialize(grid, n0, c0, u0, 1), StepScheme(1e-2, 0.1), Drivers(potential_preset(grid))).final_state
        assert np.array_equal(a.n.coeffs, b.n.coeffs) and np.array_equal(a.u.coeffs, b.u.coeffs)

    def test_jump_bookkeeping(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = initialize(grid, n0, c0, u0, 4)
        d = Drivers(potential_preset(grid), None, JumpDriverConfig(200.0))
        _, info = advance(s, StepScheme(1e-2, 1.0), d)
        assert info.n_jumps > 0
        assert math.isclose(info.jump_martingale, info.jump_work - d.jump.mu(2) * 0.01 * (
            grid.area * float(np.sum(np.abs(s.u.coeffs) ** 2))), rel_tol=1e-12)

    def test_implicit_mode_close_to_integrating_factor(self, grid):
        n0, c0, u0 = smooth_data(grid)
        d = Drivers(potential_preset(grid))
        a = run(initialize(grid, n0, c0, u0, 0), StepScheme(1e-3, 0.05), d).final_state
        b = run(initialize(grid, n0, c0, u0, 0), StepScheme(1e-3, 0.05, diffusion_mode="implicit"), d).final_state
        assert np.abs(a.c.values - b.c.values).max() < 1e-3

    def test_stops_at_radius(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = initialize(grid, n0, c0, u0, 5)
        r0 = state_radius(s.n, s.c, s.u)
        # jumps only grow u, so a threshold just above r0 is reached
        d = Drivers(potential_preset(grid, "constant"), None, JumpDriverConfig(100.0))
        rec = run(s, StepScheme(1e-2, 5.0, D=r0 * 1.0001), d)
        fin = rec.final_state
        assert fin.stopped and fin.stopped_at == fin.t < 5.0
        assert state_radius(fin.n, fin.c, fin.u) >= r0 * 1.0001

    def test_fault_on_non_finite(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = initialize(grid, n0, c0, u0, 0)
        coeffs = s.n.coeffs.copy()
        coeffs[1, 0] = np.nan
        bad = SimulationState(type(s.n)(grid, coeffs), s.c, s.u, 0.0, s.rng)
        with pytest.raises(SimulationFault) as err:
            advance(bad, StepScheme(1e-2, 1.0), Drivers(potential_preset(grid)))
        assert err.value.last_state is bad


class TestCheckpoint:
    def test_round_trip(self, grid):
        n0, c0, u0 = smooth_data(grid)
        s = run(initialize(grid, n0, c0, u0, 2), StepScheme(1e-2, 0.05), noisy_drivers(grid)).final_state
        back, aux = load_checkpoint(checkpoint(s, {"note": "x"}))
        assert states_identical(s, back) and aux == {"note": "x"}

    def test_detects_corruption(self, grid):
        n0, c0, u0 = smooth_data(grid)
        blob = bytearray(checkpoint(initialize(grid, n0, c0, u0, 2)))
        blob[100] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(b"short")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(b"X" * 200)

    def test_resume_matches_uninterrupted(self, grid):
        n0, c0, u0 = smooth_data(grid)
        scheme, d = StepScheme(1e-2, 0.3), noisy_drivers(grid)
        full = run(initialize(grid, n0, c0, u0, 8), scheme, d).final_state
        gen = trajectory(initialize(grid, n0, c0, u0, 8), scheme, d)
        for _ in range(13):
            mid, _ = next(gen)
        resumed = run(load_checkpoint(checkpoint(mid))[0], scheme, d).final_state
        assert states_identical(full, resumed)

    def test_resumed_ledger_matches(self, grid):
        n0, c0, u0 = smooth_data(grid)
        scheme, d = StepScheme(1e-2, 0.2), noisy_drivers(grid)
        k = BudgetConstants(0.0, 0.7)
        full = LedgerBuilder(k, scheme.dt)
        run(initialize(grid, n0, c0, u0, 8), scheme, d, full)
        part = LedgerBuilder(k, scheme.dt)
        gen = trajectory(initialize(grid, n0, c0, u0, 8), scheme, d)
        part.append(initialize(grid, n0, c0, u0, 8), None)
        for _ in range(7):
            st, info = next(gen)
            part.append(st, info)
        run(load_checkpoint(checkpoint(st))[0], scheme, d, part)
        assert [r.as_dict() for r in part.rows] == [r.as_dict() for r in full.rows]


class TestNoiseCoupling:
    def test_same_stream_across_cutoffs(self):
        infos = []
        for N, m in ((32, 10), (64, 21)):
            g = TorusGrid(N=N, m=m)
            n0, c0, u0 = smooth_data(g)
            rec = run(initialize(g, n0, c0, u0, 11), StepScheme(1e-2, 0.1), noisy_drivers(g))
            infos.append(rec.infos)
        for a, b in zip(*infos):
            assert np.array_equal(a.increment.dW, b.increment.dW)
            assert np.array_equal(a.increment.jump_radii, b.increment.jump_radii)
