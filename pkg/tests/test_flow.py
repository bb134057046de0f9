import math

import numpy as np
import pytest

from crflow.analysis import BLOWUP, CONVERGED, TIMEOUT
from crflow.checks import CFL_ANCHOR_M1_N16
from crflow.config import InitialDataSpec
from crflow.flow import (
    SEMI_IMPLICIT,
    BlowUpError,
    FlowConfig,
    FlowState,
    TargetManifold,
    cfl_timestep,
    flat_torus,
    run_flow,
    stencil_coefficient_sums,
    step,
    step_semi_implicit,
    sup_norm,
    tension_field,
    unit_sphere,
)
from crflow.geometry import build_grid
from crflow.initial import make_initial_map
from crflow.operators import MapField
from tests.parameters import FLOAT_TOL, MEDIUM_N, SEED, SMALL_N, are_equal


def sphere_mode(N=SMALL_N, lam=0.05):
    return make_initial_map(build_grid(1, N), unit_sphere(2), InitialDataSpec("torus_mode", lam=lam))


def torus_mode(N=MEDIUM_N, lam=1.0, modes=None):
    return make_initial_map(build_grid(1, N), flat_torus(1), InitialDataSpec("torus_mode", lam=lam, modes=modes))


class TestTargetManifold:

    @staticmethod
    def test_sphere():
        s = unit_sphere(2)
        assert s.n_amb == 3 and s.kappa == 1.0
        assert are_equal(s.base_point(), [0.0, 0.0, 1.0])

    @staticmethod
    def test_torus():
        t = flat_torus(3)
        assert t.n_amb == 3 and t.kappa == 0.0
        v = np.ones((2, 3)) * 4.0
        assert np.array_equal(t.project(v), v)

    @staticmethod
    @pytest.mark.parametrize("kind, n", [("cylinder", 1), ("sphere", 0)])
    def test_invalid(kind, n):
        with pytest.raises(ValueError):
            TargetManifold(kind, n)

    @staticmethod
    def test_tangent_part_is_orthogonal():
        rng = np.random.default_rng(SEED)
        u = unit_sphere(2).project(rng.standard_normal((10, 3)))
        v = unit_sphere(2).tangent_part(u, rng.standard_normal((10, 3)))
        assert np.max(np.abs(np.sum(u * v, axis=-1))) < 1e-14


class TestTension:

    @staticmethod
    @pytest.mark.parametrize("target", [unit_sphere(2), flat_torus(2)])
    def test_constant_map(target):
        u = make_initial_map(build_grid(1, SMALL_N), target, InitialDataSpec("constant"))
        assert sup_norm(tension_field(u)) == 0.0

    @staticmethod
    def test_equator_is_discrete_fixed_point():
        u = make_initial_map(build_grid(1, MEDIUM_N), unit_sphere(2), InitialDataSpec("equator"))
        assert sup_norm(tension_field(u)) < 1e-9

    @staticmethod
    def test_torus_tension_is_sub_laplacian():
        u = torus_mode(N=32)
        expected = -2.0 * np.pi ** 2 * u.values
        assert np.max(np.abs(tension_field(u) - expected)) < 2e-2 * 2.0 * np.pi ** 2


class TestTimeStep:

    @staticmethod
    def test_halving_h_quarters_dt():
        ratio = cfl_timestep(build_grid(1, 16)) / cfl_timestep(build_grid(1, 32))
        assert 3.5 < ratio < 4.5

    @staticmethod
    def test_anchor_value_m1_n16():
        grid = build_grid(1, 16)
        sums = stencil_coefficient_sums(grid)
        assert np.max(sums) == pytest.approx(9.390625, rel=FLOAT_TOL)
        assert np.argmax(sums) == grid.n_points - 16
        assert cfl_timestep(grid, 0.5) == pytest.approx(0.5 * grid.h ** 2 / np.max(sums), rel=FLOAT_TOL)
        assert cfl_timestep(grid, 0.5) == pytest.approx(CFL_ANCHOR_M1_N16, rel=FLOAT_TOL)

    @staticmethod
    def test_linear_factor():
        grid = build_grid(1, SMALL_N)
        assert cfl_timestep(grid, 0.5) == pytest.approx(2.0 * cfl_timestep(grid, 0.25), rel=FLOAT_TOL)

    @staticmethod
    def test_m2_bound_is_tighter():
        assert cfl_timestep(build_grid(2, SMALL_N)) < cfl_timestep(build_grid(1, SMALL_N))

    @staticmethod
    def test_step_rejects_unstable_dt():
        u = torus_mode(N=SMALL_N)
        with pytest.raises(ValueError, match="stability bound"):
            step(FlowState(u), 1.01 * cfl_timestep(u.grid, 1.0))

    @staticmethod
    @pytest.mark.parametrize("kwargs", [{"cfl_factor": 0.0}, {"cfl_factor": 1.5}, {"t_max": 0.0},
                                        {"cadence": 0}, {"scheme": "leapfrog"}, {"rho_max": -1.0}])
    def test_invalid_flow_config(kwargs):
        with pytest.raises(ValueError):
            FlowConfig(**kwargs)


class TestStep:

    @staticmethod
    def test_constant_map_unchanged():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("constant"))
        state = step(FlowState(u), cfl_timestep(u.grid))
        assert np.array_equal(state.u.values, u.values)
        assert state.step_count == 1

    @staticmethod
    def test_sphere_constraint_kept():
        u = sphere_mode(lam=0.8)
        state = FlowState(u)
        dt = cfl_timestep(u.grid)
        for _ in range(50):
            state = step(state, dt)
        assert state.u.sphere_defect() <= 1e-12

    @staticmethod
    def test_nonfinite_values_raise():
        grid = build_grid(1, SMALL_N)
        values = np.zeros(grid.shape + (1,))
        values[0, 0, 0, 0] = np.nan
        with pytest.raises(BlowUpError):
            step(FlowState(MapField(grid, flat_torus(1), values)), cfl_timestep(grid))

    @staticmethod
    def test_torus_flow_is_linear():
        u1 = torus_mode(N=SMALL_N, modes=(1, 0))
        u2 = torus_mode(N=SMALL_N, modes=(1, 2))
        combo = u1.with_values(2.0 * u1.values - 3.0 * u2.values)
        dt = cfl_timestep(u1.grid)
        states = [FlowState(u) for u in (u1, u2, combo)]
        for _ in range(40):
            states = [step(s, dt) for s in states]
        expected = 2.0 * states[0].u.values - 3.0 * states[1].u.values
        assert are_equal(states[2].u.values, expected, tol=1e-12)

    @staticmethod
    def test_mode_amplitude_decays_monotonically():
        u = torus_mode(N=MEDIUM_N)
        state = FlowState(u)
        dt = cfl_timestep(u.grid, 0.5)
        amplitudes = []
        for _ in range(200):
            state = step(state, dt)
            amplitudes.append(state.u.values[MEDIUM_N // 4, 0, 0, 0])
        assert amplitudes[-1] > 0.0
        assert all(b < a for a, b in zip(amplitudes[:-1], amplitudes[1:]))

    @staticmethod
    def test_semi_implicit_constant_map_unchanged():
        u = make_initial_map(build_grid(1, SMALL_N), flat_torus(2), InitialDataSpec("constant"))
        state = step_semi_implicit(FlowState(u), 10 * cfl_timestep(u.grid))
        assert are_equal(state.u.values, u.values)


class TestRunFlow:

    @staticmethod
    def test_constant_map_converges_immediately():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("constant"))
        traj = run_flow(u)
        assert traj.reason == CONVERGED
        assert len(traj.reports) == 1
        assert traj.reports[0].E_b == 0.0 and traj.reports[0].step == 0

    @staticmethod
    def test_torus_mode_energy_decay():
        u = torus_mode(N=MEDIUM_N)
        traj = run_flow(u, FlowConfig(t_max=0.05, tol_tau=1e-12))
        assert traj.reason == TIMEOUT
        first, last = traj.reports[0], traj.reports[-1]
        assert last.t == pytest.approx(0.05, rel=1e-12)
        assert last.E_b / first.E_b == pytest.approx(math.exp(-4.0 * math.pi ** 2 * last.t), rel=5e-2)

    @staticmethod
    def test_energy_nonincreasing(torus_mode_trajectory):
        reports = torus_mode_trajectory.reports
        E_b0 = reports[0].E_b
        assert all(b.E_b - a.E_b <= 1e-12 * E_b0 for a, b in zip(reports[:-1], reports[1:]))

    @staticmethod
    def test_t_independent_data_stays_t_independent():
        traj = run_flow(sphere_mode(lam=0.3), FlowConfig(t_max=0.01, cadence=5))
        assert all(r.sup_e_0 == 0.0 and r.E_0 == 0.0 for r in traj.reports)

    @staticmethod
    def test_small_sphere_perturbation_converges_and_restarts():
        traj = run_flow(sphere_mode(lam=0.05), FlowConfig(t_max=2.0, tol_tau=1e-4))
        assert traj.reason == CONVERGED
        assert traj.reports[-1].sup_tau < 1e-4
        again = run_flow(traj.final, FlowConfig(t_max=2.0, tol_tau=1e-4))
        assert again.reason == CONVERGED
        assert again.reports[-1].step <= 5

    @staticmethod
    def test_density_cap_reports_blowup():
        traj = run_flow(torus_mode(N=SMALL_N), FlowConfig(t_max=0.01, rho_max=1e-6, cadence=2))
        assert traj.reason == BLOWUP
        assert traj.blowup_time == pytest.approx(traj.reports[-1].t)

    @staticmethod
    def test_report_cadence():
        traj = run_flow(torus_mode(N=SMALL_N), FlowConfig(t_max=0.01, tol_tau=1e-12, cadence=7))
        steps = [r.step for r in traj.reports]
        assert steps[0] == 0
        assert all(s % 7 == 0 for s in steps[1:-1])

    @staticmethod
    def test_semi_implicit_matches_explicit():
        u = torus_mode(N=SMALL_N)
        explicit = run_flow(u, FlowConfig(t_max=0.02, tol_tau=1e-12))
        implicit = run_flow(u, FlowConfig(t_max=0.02, tol_tau=1e-12, scheme=SEMI_IMPLICIT))
        assert implicit.dt > explicit.dt
        assert implicit.reports[-1].E_b == pytest.approx(explicit.reports[-1].E_b, rel=5e-2)
        assert implicit.reports[-1].E_b < implicit.reports[0].E_b

    @staticmethod
    def test_on_report_callback_sees_every_report():
        seen = []
        traj = run_flow(torus_mode(N=SMALL_N), FlowConfig(t_max=0.005, tol_tau=1e-12), on_report=seen.append)
        assert seen == traj.reports
