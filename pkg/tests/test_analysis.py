import math

import numpy as np
import pytest

from crflow.analysis import (
    BLOWUP,
    CONVERGED,
    D_FLOOR,
    TIMESERIES_COLUMNS,
    TIMEOUT,
    ControlParams,
    EnergyReport,
    bochner_residual,
    classify_termination,
    comparison_bounds,
    comparison_ode_residual,
    convention_ledger,
    default_c2,
    default_control_params,
    density_bound_ratio,
    dissipation_residual,
    flat_model_c1,
    gradient_check,
    gradient_sides,
    mean_value_ratio,
    phi_value,
    report_row,
    sampled_mean_value_ratio,
    threshold_constants,
    total_energies,
    velocity_bochner_residual,
    vertical_control_ratio,
    window_energy_drop,
)
from crflow.checks import smooth_sphere_map, smooth_tangent_field
from crflow.config import InitialDataSpec
from crflow.flow import FlowConfig, flat_torus, run_flow, unit_sphere
from crflow.geometry import build_grid
from crflow.initial import make_initial_map
from crflow.operators import HORIZONTAL_DENSITY_FACTOR
from tests.parameters import FLOAT_TOL, MEDIUM_N, SEED, SMALL_N, relative_gap

ODE_TOL = 1e-10


def report(step, t, E_b, E_0=0.0, sup_e=0.0, ut_sq=0.0):
    return EnergyReport(step=step, t=t, E=E_b + E_0, E_b=E_b, E_0=E_0, sup_e=sup_e, sup_e_b=sup_e,
                        sup_e_0=0.0, sup_tau=0.0, sup_u_t=0.0, ut_sq_integral=ut_sq)


class TestControlParams:

    @staticmethod
    def test_default_window_is_half_the_bound():
        params = ControlParams(D=1.0, C1=0.0, C2=1.0)
        assert params.s_max == pytest.approx(1.0 / 6.0, rel=FLOAT_TOL)
        assert params.s == pytest.approx(1.0 / 12.0, rel=FLOAT_TOL)

    @staticmethod
    @pytest.mark.parametrize("kwargs", [{"D": 0.0}, {"D": 1.0, "C1": -1.0}, {"D": 1.0, "C2": 0.0},
                                        {"D": 1.0, "C2": 1.0, "s": 1.0 / 6.0}, {"D": 1.0, "s": -0.1}])
    def test_invalid(kwargs):
        with pytest.raises(ValueError):
            ControlParams(**kwargs)

    @staticmethod
    def test_defaults_for_flat_model():
        assert flat_model_c1() == 0.0
        assert default_c2(1.0) == 4.0
        assert default_c2(0.0) == 1.0

    @staticmethod
    def test_measured_D_floors_constant_maps():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("constant"))
        params = default_control_params(u)
        assert params.D == D_FLOOR
        assert params.C2 == 4.0


class TestComparisonBounds:

    @staticmethod
    def test_with_linear_term():
        T0, g0 = comparison_bounds(ControlParams(D=1.0, C1=1.0, C2=1.0, s=0.1), 0.0)
        assert T0 == pytest.approx(math.log(2.0), abs=1e-12)
        assert g0 == pytest.approx(1.0, abs=1e-12)

    @staticmethod
    def test_without_linear_term():
        T0, g = comparison_bounds(ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1), 0.5)
        assert T0 == pytest.approx(1.0, abs=1e-12)
        assert g == pytest.approx(2.0, abs=1e-12)

    @staticmethod
    def test_delta_shifts_initial_value():
        _, g0 = comparison_bounds(ControlParams(D=1.0, C1=0.5, C2=1.0, s=0.1), 0.0, delta=0.25)
        assert g0 == pytest.approx(1.25, rel=FLOAT_TOL)

    @staticmethod
    def test_expired_and_negative_time():
        params = ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1)
        assert comparison_bounds(params, 1.0)[1] is None
        assert comparison_bounds(params, 3.0)[1] is None
        with pytest.raises(ValueError):
            comparison_bounds(params, -0.1)

    @staticmethod
    def test_increasing():
        params = ControlParams(D=0.5, C1=0.3, C2=2.0, s=0.1)
        T0, _ = comparison_bounds(params, 0.0)
        values = [comparison_bounds(params, float(t))[1] for t in np.linspace(0.0, 0.95 * T0, 30)]
        assert all(b > a for a, b in zip(values[:-1], values[1:]))

    @staticmethod
    @pytest.mark.parametrize("D, C1, C2", [(1.0, 1.0, 1.0), (0.5, 0.0, 2.0), (2.0, 0.5, 0.25)])
    def test_solves_comparison_ode(D, C1, C2):
        params = ControlParams(D=D, C1=C1, C2=C2, s=0.5 * 1.0 / (D * (4 * D + 2) * C2))
        T0, _ = comparison_bounds(params, 0.0)
        for t in np.linspace(0.05, 0.4, 8) * T0:
            assert comparison_ode_residual(params, float(t)) < ODE_TOL


class TestThresholds:

    @staticmethod
    def test_window_bound():
        assert threshold_constants(ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1))["s_max"] == pytest.approx(1.0 / 6.0)

    @staticmethod
    def test_maximizer():
        x0 = threshold_constants(ControlParams(D=0.5, C1=0.0, C2=1.0, s=0.25))["x0"]
        assert x0 == pytest.approx(-0.5 + math.sqrt(4.25), abs=1e-12)

    @staticmethod
    def test_maximizer_is_a_strict_maximum():
        rng = np.random.default_rng(SEED)
        for _ in range(20):
            C2, s = rng.uniform(0.5, 4.0), rng.uniform(0.01, 1.0)
            x0 = threshold_constants(ControlParams(D=0.01, C1=0.0, C2=C2, s=s))["x0"]
            eps = 1e-5 * max(1.0, x0)
            dphi = (phi_value(x0 + eps, C2, s) - phi_value(x0 - eps, C2, s)) / (2 * eps)
            assert abs(dphi) < 1e-7
            assert phi_value(x0, C2, s) > phi_value(0.9 * x0, C2, s)
            assert phi_value(x0, C2, s) > phi_value(1.1 * x0, C2, s)

    @staticmethod
    def test_doubling_time_without_linear_term():
        params = ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1)
        t2 = threshold_constants(params)["t0_2D"]
        assert t2 == pytest.approx(0.5, abs=1e-12)
        assert comparison_bounds(params, t2)[1] == pytest.approx(2.0, abs=1e-12)

    @staticmethod
    def test_doubling_time_with_linear_term():
        params = ControlParams(D=0.7, C1=0.4, C2=1.5, s=0.05)
        t2 = threshold_constants(params)["t0_2D"]
        assert comparison_bounds(params, t2)[1] == pytest.approx(1.4, rel=1e-12)


class TestEnergies:

    @staticmethod
    def test_constant_map():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("constant"))
        assert total_energies(u) == (0.0, 0.0, 0.0)

    @staticmethod
    def test_equator_energy():
        u = make_initial_map(build_grid(1, MEDIUM_N), unit_sphere(2), InitialDataSpec("equator"))
        E, E_b, E_0 = total_energies(u)
        assert E_b == pytest.approx(2.0 * math.pi ** 2, rel=2e-2)
        assert E_0 == 0.0 and E == E_b

    @staticmethod
    def test_quadratic_scaling():
        grid = build_grid(1, SMALL_N)
        u = make_initial_map(grid, flat_torus(1), InitialDataSpec("bump_averaged", lam=1.0, bump_radius=0.5))
        E1 = total_energies(u)
        E3 = total_energies(u.with_values(3.0 * u.values))
        for a, b in zip(E1, E3):
            assert b == pytest.approx(9.0 * a, rel=1e-12)


class TestGradientCheck:

    @staticmethod
    def test_consistent_on_sphere():
        u = smooth_sphere_map(build_grid(1, MEDIUM_N))
        v = smooth_tangent_field(u)
        assert gradient_check(u, v) < 1e-3

    @staticmethod
    def test_exact_on_torus():
        grid = build_grid(1, SMALL_N)
        rng = np.random.default_rng(SEED)
        u = make_initial_map(grid, flat_torus(2), InitialDataSpec("smoothed_noise", lam=1.0, seed=SEED))
        v = rng.standard_normal(u.values.shape)
        assert gradient_check(u, v, delta=1e-3) < 1e-8

    @staticmethod
    def test_perturbed_density_factor_is_caught():
        u = smooth_sphere_map(build_grid(1, MEDIUM_N))
        v = smooth_tangent_field(u)
        assert gradient_check(u, v, density_factor=1.1 * HORIZONTAL_DENSITY_FACTOR) > 1e-3

    @staticmethod
    def test_error_scales_with_delta_squared():
        u = smooth_sphere_map(build_grid(1, MEDIUM_N))
        v = smooth_tangent_field(u)
        ratio = gradient_check(u, v, delta=2e-2) / gradient_check(u, v, delta=1e-2)
        assert 3.0 < ratio < 5.0

    @staticmethod
    @pytest.mark.parametrize("smooth", [True, False])
    def test_both_sides_vanish_at_equator(smooth):
        grid = build_grid(1, MEDIUM_N)
        u = make_initial_map(grid, unit_sphere(2), InitialDataSpec("equator"))
        if smooth:
            v = smooth_tangent_field(u)
        else:
            v = u.target.tangent_part(u.values, np.random.default_rng(SEED).standard_normal(u.values.shape))
        norm_v = math.sqrt(float(np.sum(v * v)) * grid.cell_weight)
        lhs, rhs = gradient_sides(u, v, delta=1e-4)
        assert abs(lhs) <= grid.h ** 2 * norm_v
        assert abs(rhs) <= grid.h ** 2 * norm_v

    @staticmethod
    def test_zero_direction_and_bad_delta():
        u = smooth_sphere_map(build_grid(1, SMALL_N))
        assert gradient_check(u, np.zeros_like(u.values)) == 0.0
        with pytest.raises(ValueError):
            gradient_check(u, np.ones_like(u.values), delta=0.0)


class TestMonitors:

    @staticmethod
    def test_bochner_residual_vanishes_for_constant_map():
        u = make_initial_map(build_grid(1, SMALL_N), flat_torus(1), InitialDataSpec("constant"))
        field, r_min = bochner_residual(u, u, 1e-3, ControlParams(D=1.0))
        assert r_min == 0.0
        assert np.max(np.abs(field.values)) == 0.0

    @staticmethod
    def test_velocity_bochner_residual_curvature_term():
        grid = build_grid(1, SMALL_N)
        ut = np.zeros(grid.shape + (3,))
        ut[..., 0] = 0.5
        field, r_min = velocity_bochner_residual(grid, ut, ut, 1e-3, rho=2.0, kappa=1.0)
        assert r_min == 1.0
        assert np.all(field.values == 1.0)
        assert velocity_bochner_residual(grid, ut, ut, 1e-3, rho=2.0, kappa=0.0)[1] == 0.0

    @staticmethod
    def test_bochner_residual_within_tolerance(torus_mode_trajectory):
        for r in torus_mode_trajectory.reports[1:]:
            assert r.bochner_min_residual >= -r.bochner_tolerance
            assert r.velocity_bochner_min_residual is not None

    @staticmethod
    def test_dissipation_identity_along_flow(torus_mode_trajectory):
        reports = torus_mode_trajectory.reports
        assert reports[0].dissipation_residual is None
        assert dissipation_residual(reports, reports[0].E_b) <= 2e-2

    @staticmethod
    def test_dissipation_residual_on_exact_data():
        reports = [report(k, 0.1 * k, 1.0 - 0.1 * k, ut_sq=1.0) for k in range(5)]
        assert dissipation_residual(reports, 1.0) == pytest.approx(0.0, abs=1e-12)
        stationary = [report(k, 0.1 * k, 2.0) for k in range(3)]
        assert dissipation_residual(stationary, 2.0) == 0.0

    @staticmethod
    def test_dissipation_residual_needs_two_reports():
        with pytest.raises(ValueError):
            dissipation_residual([report(0, 0.0, 1.0)], 1.0)

    @staticmethod
    def test_vertical_control_for_t_independent_flow(torus_mode_trajectory):
        reports = torus_mode_trajectory.reports
        assert vertical_control_ratio(reports, reports[0].E_b) == 0.0
        assert all(r.vertical_control_ratio == 0.0 for r in reports)

    @staticmethod
    def test_vertical_control_degenerate_start():
        zero = [report(k, 0.5 * k, 0.0) for k in range(3)]
        assert vertical_control_ratio(zero, 0.0) == 0.0
        vertical = [report(k, 0.5 * k, 0.0, E_0=1.0) for k in range(3)]
        assert vertical_control_ratio(vertical, 0.0) is None
        assert vertical_control_ratio(vertical, 2.0, rho=1.0) == pytest.approx(1.0 / 4.0)

    @staticmethod
    def test_mean_value_ratio_of_constant_samples():
        assert sampled_mean_value_ratio([0.0, 0.5, 1.0], [3.0] * 3, [6.0] * 3, 1.0, 1.0) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            sampled_mean_value_ratio([0.0, 0.5, 1.0], [3.0] * 3, [6.0] * 3, 0.5, 1.0)

    @staticmethod
    def test_mean_value_ratio_of_decaying_mode(torus_mode_trajectory):
        # e = P(t) (1 + cos(4 pi x) cos(2 pi h)) with P decaying at twice the discrete eigenvalue
        reports = torus_mode_trajectory.reports
        params = torus_mode_trajectory.params
        h = 1.0 / 16
        t, eps = reports[-1].t, 0.01
        rho = reports[0].sup_e
        mu = (1.0 - math.cos(2.0 * math.pi * h)) / h ** 2
        K = 2.0 * mu + params.C1 + params.C2 * rho
        expected = 0.5 * (1.0 + math.cos(2.0 * math.pi * h)) * K / math.expm1(K * eps)
        assert mean_value_ratio(reports, t, eps, params) == pytest.approx(expected, rel=1e-2)

    @staticmethod
    def test_mean_value_ratio_settles_on_converging_run():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("torus_mode", lam=0.3))
        traj = run_flow(u, FlowConfig(t_max=2.0, tol_tau=1e-4, cadence=5))
        assert traj.reason == CONVERGED
        reports = traj.reports
        tail = [r.mean_value_ratio for r in reports[2 * len(reports) // 3:] if r.mean_value_ratio is not None]
        assert tail
        middle = float(np.median(tail))
        assert all(0.8 * middle <= value <= 1.2 * middle for value in tail)

    @staticmethod
    def test_window_energy_drop_matches_dissipation(torus_mode_trajectory):
        reports = torus_mode_trajectory.reports
        drop, integral = window_energy_drop(reports, reports[-1].t, 1.0)
        assert drop > 0.0
        assert relative_gap(drop, integral) < 1e-2

    @staticmethod
    def test_density_bound_ratio():
        params = ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1)
        assert density_bound_ratio(1.0, 1.0, 0.0, params) is None
        assert density_bound_ratio(2.0, 1.0, 1.0, params) == pytest.approx(1.0 / math.exp(0.1))

    @staticmethod
    def test_density_bound_ratio_survives_huge_rho():
        params = ControlParams(D=1.0, C1=0.0, C2=4.0, s=0.01)
        assert density_bound_ratio(20.0, 1e5, 0.5, params) == 0.0
        assert density_bound_ratio(0.0, 1e5, 0.5, params) == 0.0
        assert density_bound_ratio(2.0, 1.0, 1.0, params) == pytest.approx(math.exp(-0.04))


class TestClassification:

    @staticmethod
    def test_timeout_run(torus_mode_trajectory):
        notes = classify_termination(torus_mode_trajectory)
        assert notes["termination"] == TIMEOUT
        assert notes["lemma_bound_holds"]
        assert notes["rho_consistent"]
        assert notes["rho"] == torus_mode_trajectory.rho == max(r.sup_e for r in torus_mode_trajectory.reports)
        assert notes["within_theorem_hypothesis"] is False
        assert "blowup_time" not in notes

    @staticmethod
    def test_constant_run():
        u = make_initial_map(build_grid(1, SMALL_N), unit_sphere(2), InitialDataSpec("constant"))
        notes = classify_termination(run_flow(u))
        assert notes["termination"] == CONVERGED
        assert notes["lemma_bound_holds"] and notes["steps"] == 0

    @staticmethod
    def test_blowup_run_records_time():
        u = make_initial_map(build_grid(1, SMALL_N), flat_torus(1), InitialDataSpec("torus_mode", lam=1.0))
        traj = run_flow(u, FlowConfig(t_max=0.01, rho_max=1e-6, cadence=2))
        notes = classify_termination(traj)
        assert notes["termination"] == BLOWUP
        assert notes["blowup_time"] == traj.blowup_time

    @staticmethod
    def test_report_row_order(torus_mode_trajectory):
        assert list(report_row(torus_mode_trajectory.reports[0])) == TIMESERIES_COLUMNS

    @staticmethod
    def test_ledger_flags_m1():
        lines = convention_ledger(ControlParams(D=1.0), build_grid(1, SMALL_N))
        assert any("outside the m>=2 hypothesis" in line for line in lines)
        assert not any("outside" in line for line in convention_ledger(ControlParams(D=1.0), build_grid(2, 4)))
