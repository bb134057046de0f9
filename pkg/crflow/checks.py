"""
Invariant checks for crflow builds.

The goal is not an exhaustive verification framework, but to:
- catch normalization and stencil mistakes before any long run
- create an auditable check report

Report layout (as a dict):
  {"level": ..., "hard_pass": [...], "hard_fail": [...], "soft_warn": [...], "details": {name: value}}

`quick` runs identities and formula checks on small grids; `full` adds the
refinement studies and oracle comparisons.
"""

from __future__ import annotations

import math
import tempfile
import time
from itertools import product
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from .analysis import (
    ControlParams,
    bochner_residual,
    comparison_bounds,
    comparison_ode_residual,
    gradient_check,
    phi_value,
    threshold_constants,
)
from .config import InitialDataSpec, RunConfig
from .flow import (
    FlowConfig,
    FlowState,
    cfl_timestep,
    flat_torus,
    run_flow,
    stencil_coefficient_sums,
    step,
    sup_norm,
    tension_field,
    unit_sphere,
)
from .geometry import NilmanifoldGrid, levi_matrix, contact_form, frame_coefficients, wrap_index
from .initial import initial_lift, make_initial_map, wrap_consistency_defect
from .io import read_snapshot, snapshot_bytes, write_snapshot
from .operators import HORIZONTAL_DENSITY_FACTOR, MapField, as_scalar, commutator_defect, sub_laplacian_array
from .oracle import oracle_comparison

GRADIENT_GATE = 1e-3
MUTATION_FACTOR = 1.1
ODE_RESIDUAL_GATE = 1e-10
DISSIPATION_GATE = 0.02
DISSIPATION_GATE_M2 = 0.05
ORACLE_GATE = 1e-2
EQUATOR_DRIFT_GATE = 1e-6
ORDER_GATE = 1.5  # observed order for nominal second-order studies
# dt at m=1, N=16, cfl 0.5: the far-corner stencil sum is 9.390625, so dt = h^2 / (2 * 9.390625)
CFL_ANCHOR_M1_N16 = 1.0 / 4808.0

CheckOutcome = Tuple[bool, Any]


# ---------------
# Shared fixtures
# ---------------

def smooth_sphere_map(grid: NilmanifoldGrid, lam: float = 0.4, seed: int = 11, steps: int = 30) -> MapField:
    spec = InitialDataSpec("smoothed_noise", lam=lam, smoothing_steps=steps, seed=seed)
    return make_initial_map(grid, unit_sphere(2), spec)


def smooth_tangent_field(u: MapField, seed: int = 23, steps: int = 30) -> np.ndarray:
    spec = InitialDataSpec("smoothed_noise", lam=1.0, smoothing_steps=steps, seed=seed)
    noise = make_initial_map(u.grid, flat_torus(u.target.n_amb), spec).values
    return u.target.tangent_part(u.values, noise)


def torus_mode_config(m: int, N: int, t_max: float, lam: float = 1.0, cadence: int = 20,
                      cfl_factor: float = 0.25) -> RunConfig:
    return RunConfig(
        m=m, N=N, target=flat_torus(1),
        initial=InitialDataSpec("torus_mode", lam=lam),
        flow=FlowConfig(cfl_factor=cfl_factor, t_max=t_max, tol_tau=1e-12, cadence=cadence),
        preview=False,
    )


def _order(coarse: float, fine: float) -> float:
    if fine <= 0.0:
        return math.inf
    return math.log2(coarse / fine)


# ------------
# Quick checks
# ------------

def check_volume() -> CheckOutcome:
    vols = {m: NilmanifoldGrid(m, 6).volume for m in (1, 2)}
    ok = all(abs(vols[m] - 2 ** m * math.factorial(m)) <= 1e-12 * 2 ** m for m in vols)
    return ok, vols


def check_wrap_inverse() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 5)
    bad = 0
    for idx in product(range(grid.N), repeat=grid.dim):
        for axis in range(grid.dim):
            there = wrap_index(grid, idx, axis, 1)
            if wrap_index(grid, there, axis, -1) != idx:
                bad += 1
    return bad == 0, {"mismatches": bad}


def check_frame_algebra() -> CheckOutcome:
    grid = NilmanifoldGrid(2, 4)
    worst_theta, worst_levi = 0.0, 0.0
    for idx in product(range(grid.N), repeat=grid.dim):
        theta = contact_form(grid, idx)
        frames = frame_coefficients(grid, idx)
        for name, vec in frames.items():
            expected = 1.0 if name == "xi" else 0.0
            worst_theta = max(worst_theta, abs(float(theta @ vec) - expected))
        worst_levi = max(worst_levi, float(np.max(np.abs(levi_matrix(grid, idx) - 2.0 * np.eye(2 * grid.m)))))
    model = grid.model
    coords = (0.3, 0.7, 0.1, 0.9, 0.5)
    bracket = model.bracket("X1", "Y1", coords)
    ok_bracket = np.allclose(bracket, -2.0 * model.frame_vector("xi", coords))
    ok = worst_theta == 0.0 and worst_levi == 0.0 and ok_bracket
    return ok, {"theta_defect": worst_theta, "levi_defect": worst_levi, "bracket_ok": bool(ok_bracket)}


def check_fixed_points() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 16)
    const = make_initial_map(grid, unit_sphere(2), InitialDataSpec("constant"))
    equator = make_initial_map(grid, unit_sphere(2), InitialDataSpec("equator"))
    tau_const = sup_norm(tension_field(const))
    tau_eq = sup_norm(tension_field(equator))
    ok = tau_const == 0.0 and tau_eq <= 10.0 * grid.h ** 2
    return ok, {"constant_sup_tau": tau_const, "equator_sup_tau": tau_eq}


def check_gradient(density_factor: float = HORIZONTAL_DENSITY_FACTOR) -> CheckOutcome:
    grid = NilmanifoldGrid(1, 16)
    u = smooth_sphere_map(grid)
    v = smooth_tangent_field(u)
    err = gradient_check(u, v, delta=1e-4, density_factor=density_factor)
    return err < GRADIENT_GATE, {"relative_error": err}


def check_mutation_caught() -> CheckOutcome:
    """A perturbed horizontal density factor must fail the gradient gate."""
    passed, detail = check_gradient(HORIZONTAL_DENSITY_FACTOR * MUTATION_FACTOR)
    return not passed, detail


def check_comparison_bounds() -> CheckOutcome:
    T0_a, g0_a = comparison_bounds(ControlParams(D=1.0, C1=1.0, C2=1.0, s=0.1), 0.0)
    T0_b, g_b = comparison_bounds(ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1), 0.5)
    worst = 0.0
    for params in (ControlParams(D=1.0, C1=1.0, C2=1.0, s=0.1), ControlParams(D=0.5, C1=0.0, C2=2.0, s=0.1)):
        T0, _ = comparison_bounds(params, 0.0)
        for t in np.linspace(0.05, 0.4, 8) * T0:
            worst = max(worst, comparison_ode_residual(params, float(t)))
    ok = (abs(T0_a - math.log(2.0)) < 1e-12 and abs(g0_a - 1.0) < 1e-12
          and abs(T0_b - 1.0) < 1e-12 and abs(g_b - 2.0) < 1e-12 and worst < ODE_RESIDUAL_GATE)
    return ok, {"T0_C1_1": T0_a, "T0_C1_0": T0_b, "ode_relative_residual": worst}


def check_thresholds() -> CheckOutcome:
    s_max = threshold_constants(ControlParams(D=1.0, C1=0.0, C2=1.0, s=0.1))["s_max"]
    consts = threshold_constants(ControlParams(D=0.5, C1=0.0, C2=1.0, s=0.25))
    x0 = consts["x0"]
    eps = 1e-5
    dphi = (phi_value(x0 + eps, 1.0, 0.25) - phi_value(x0 - eps, 1.0, 0.25)) / (2 * eps)
    d2phi = (phi_value(x0 + eps, 1.0, 0.25) - 2 * phi_value(x0, 1.0, 0.25)
             + phi_value(x0 - eps, 1.0, 0.25)) / eps ** 2
    ok = (abs(s_max - 1.0 / 6.0) < 1e-15 and abs(x0 - (-0.5 + math.sqrt(4.25))) < 1e-12
          and abs(dphi) < 1e-8 and d2phi < 0)
    return ok, {"s_max": s_max, "x0": x0, "phi_x0": consts["phi_x0"], "dphi": dphi}


def check_cfl_anchor() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 16)
    dt = cfl_timestep(grid, 0.5)
    anchor = 0.5 * grid.h ** 2 / float(np.max(stencil_coefficient_sums(grid)))
    coarse = cfl_timestep(NilmanifoldGrid(1, 8), 0.5)
    # the coefficient bound is reached at the far corner, so it is not exactly N-independent
    ratio = coarse / dt
    ok = abs(dt - anchor) <= 1e-15 and abs(dt - CFL_ANCHOR_M1_N16) <= 1e-15 and 3.0 < ratio < 5.0
    return ok, {"dt_m1_N16_cfl05": dt, "anchor": anchor, "halving_ratio": ratio}


def check_wrap_consistency() -> CheckOutcome:
    worst: Dict[str, float] = {}
    for m, family, target in ((1, "torus_mode", unit_sphere(2)), (1, "equator", unit_sphere(2)),
                              (1, "bump_averaged", unit_sphere(2)), (2, "bump_averaged", flat_torus(2)),
                              (2, "constant", flat_torus(1))):
        grid = NilmanifoldGrid(m, 8 if m == 1 else 6)
        spec = InitialDataSpec(family, lam=0.7, modes=(1, 2) if m == 1 else (1, 0, 0, 1))
        field = make_initial_map(grid, target, spec)
        worst[f"{family}_m{m}"] = wrap_consistency_defect(grid, field, initial_lift(grid, target, spec))
    return max(worst.values()) < 1e-12, worst


def check_snapshot_roundtrip() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 6)
    u = smooth_sphere_map(grid)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "u.snap"
        write_snapshot(path, grid, u.values, 0.125)
        g2, values, t = read_snapshot(path)
        same = path.read_bytes() == snapshot_bytes(g2, values, t)
    return same and np.array_equal(values, u.values), {"bit_exact": bool(same)}


def check_short_dissipation() -> CheckOutcome:
    # forward Euler leaves an O(dt) defect in the identity
    cfg = torus_mode_config(1, 16, t_max=0.005, cadence=5, cfl_factor=0.05)
    traj = run_flow(make_initial_map(cfg.build_grid(), cfg.target, cfg.initial), cfg.flow)
    worst = max(r.dissipation_residual or 0.0 for r in traj.reports)
    return worst <= DISSIPATION_GATE, {"max_residual": worst}


QUICK_CHECKS: List[Tuple[str, Callable[[], CheckOutcome]]] = [
    ("volume_normalization", check_volume),
    ("wrap_inverse_identity", check_wrap_inverse),
    ("frame_algebra", check_frame_algebra),
    ("discrete_fixed_points", check_fixed_points),
    ("gradient_consistency", check_gradient),
    ("density_mutation_caught", check_mutation_caught),
    ("comparison_bounds", check_comparison_bounds),
    ("threshold_formulas", check_thresholds),
    ("cfl_anchor", check_cfl_anchor),
    ("wrap_consistency", check_wrap_consistency),
    ("snapshot_roundtrip", check_snapshot_roundtrip),
    ("short_dissipation", check_short_dissipation),
]


# -----------
# Full checks
# -----------

def check_commutator_order() -> CheckOutcome:
    """t-independent modes commute exactly; a smooth t-dependent lift shows the O(h^2) rate."""
    from .initial import grid_points, oscillating_lift

    detail: Dict[str, Any] = {}
    ok = True
    for name, axis in (("sin_x", 0), ("sin_y", 1)):
        grid = NilmanifoldGrid(1, 16)
        detail[f"{name}_defect"] = commutator_defect(as_scalar(grid, np.sin(2.0 * np.pi * grid.coordinate(axis))))
        ok = ok and detail[f"{name}_defect"] < 1e-10
    lift = oscillating_lift(1)
    errs = [commutator_defect(as_scalar(g, lift(grid_points(g)))) for g in (NilmanifoldGrid(1, 16), NilmanifoldGrid(1, 32))]
    detail["oscillating_defects"] = errs
    detail["oscillating_order"] = _order(*errs)
    return ok and detail["oscillating_order"] > ORDER_GATE, detail


def lift_sub_laplacian(lift: Callable[[np.ndarray], np.ndarray], points: np.ndarray, m: int,
                       eta: float = 1e-3) -> np.ndarray:
    """Reference Delta_b of a lift, from the expanded operator with a fine step eta."""
    def at(*steps: Tuple[int, int]) -> np.ndarray:
        p = points.copy()
        for axis, s in steps:
            p[..., axis] += s * eta
        return lift(p)

    t = 2 * m
    f0 = at()
    d2t = (at((t, 1)) - 2 * f0 + at((t, -1))) / eta ** 2
    out = np.zeros_like(f0)
    for alpha in range(m):
        ax, ay = 2 * alpha, 2 * alpha + 1
        x, y = points[..., ax], points[..., ay]
        d2x = (at((ax, 1)) - 2 * f0 + at((ax, -1))) / eta ** 2
        d2y = (at((ay, 1)) - 2 * f0 + at((ay, -1))) / eta ** 2
        dxt = (at((ax, 1), (t, 1)) - at((ax, 1), (t, -1)) - at((ax, -1), (t, 1)) + at((ax, -1), (t, -1))) / (4 * eta ** 2)
        dyt = (at((ay, 1), (t, 1)) - at((ay, 1), (t, -1)) - at((ay, -1), (t, 1)) + at((ay, -1), (t, -1))) / (4 * eta ** 2)
        out += d2x + d2y + (x * x + y * y) * d2t + 2 * y * dxt - 2 * x * dyt
    return 0.5 * out


def check_sub_laplacian_order() -> CheckOutcome:
    from .initial import grid_points, oscillating_lift

    lift = oscillating_lift(1)
    errs = []
    for N in (16, 32):
        grid = NilmanifoldGrid(1, N)
        pts = grid_points(grid)
        f = lift(pts)
        errs.append(float(np.max(np.abs(sub_laplacian_array(grid, f) - lift_sub_laplacian(lift, pts, 1)))))
    order = _order(*errs)
    return order > ORDER_GATE, {"errors": errs, "order": order}


def check_gradient_delta_scaling() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 16)
    u = smooth_sphere_map(grid)
    v = smooth_tangent_field(u)
    e1 = gradient_check(u, v, delta=2e-2)
    e2 = gradient_check(u, v, delta=1e-2)
    ratio = e1 / e2 if e2 > 0 else math.inf
    return 3.0 < ratio < 5.0, {"error_delta_2e-2": e1, "error_delta_1e-2": e2, "ratio": ratio}


def check_dissipation_and_monotonicity(m: int = 1, N: int = 32, gate: float = DISSIPATION_GATE,
                                       cadence: int = 20, cfl_factor: float = 0.25) -> CheckOutcome:
    cfg = torus_mode_config(m, N, t_max=0.1, cadence=cadence, cfl_factor=cfl_factor)
    h = make_initial_map(cfg.build_grid(), cfg.target, cfg.initial)
    traj = run_flow(h, cfg.flow)
    worst = max(r.dissipation_residual or 0.0 for r in traj.reports)
    E_b0 = traj.reports[0].E_b
    increases = [b.E_b - a.E_b for a, b in zip(traj.reports[:-1], traj.reports[1:])]
    monotone = max(increases) <= 1e-12 * E_b0
    return worst <= gate and monotone, {"max_residual": worst, "max_increase": max(increases)}


def check_oracle(refine: bool = True) -> CheckOutcome:
    cfg = torus_mode_config(1, 32, t_max=0.1, cfl_factor=0.5)
    coarse = oracle_comparison(cfg, 0.1)
    detail: Dict[str, Any] = {"sup_error_N32": coarse["sup_error"], "amplitude": coarse["amplitude_measured"]}
    ok = coarse["sup_error"] <= ORACLE_GATE
    if refine:
        fine = oracle_comparison(cfg, 0.1, N=64)
        detail["sup_error_N64"] = fine["sup_error"]
        detail["ratio"] = coarse["sup_error"] / fine["sup_error"]
        ok = ok and detail["ratio"] > 3.0
    return ok, detail


def check_equator_drift() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 32)
    u0 = make_initial_map(grid, unit_sphere(2), InitialDataSpec("equator"))
    dt = cfl_timestep(grid)
    state = FlowState(u0)
    for _ in range(1000):
        state = step(state, dt)
    drift = float(np.max(np.linalg.norm(state.u.values - u0.values, axis=-1)))
    taus = [sup_norm(tension_field(make_initial_map(NilmanifoldGrid(1, N), unit_sphere(2), InitialDataSpec("equator"))))
            for N in (16, 32)]
    return drift < EQUATOR_DRIFT_GATE, {"drift": drift, "sup_tau_N16": taus[0], "sup_tau_N32": taus[1]}


def check_bochner_refinement() -> CheckOutcome:
    """Residual within tolerance at N = 16 and 32; its negative excursion shrinks with h."""
    detail: Dict[str, Any] = {}
    ok = True
    excursions = []
    for N in (16, 32):
        cfg = torus_mode_config(1, N, t_max=0.02)
        h = make_initial_map(cfg.build_grid(), cfg.target, cfg.initial)
        traj = run_flow(h, cfg.flow)
        worst = min(r.bochner_min_residual for r in traj.reports[1:])
        tol = max(r.bochner_tolerance for r in traj.reports[1:])
        detail[f"min_residual_N{N}"] = worst
        detail[f"tolerance_N{N}"] = tol
        excursions.append(max(0.0, -worst))
        ok = ok and worst >= -tol
    detail["excursion_shrinks"] = excursions[1] <= excursions[0]
    return ok and detail["excursion_shrinks"], detail


def check_bochner_pair() -> CheckOutcome:
    grid = NilmanifoldGrid(1, 16)
    u = make_initial_map(grid, flat_torus(1), InitialDataSpec("constant"))
    params = ControlParams(D=1.0, C1=0.0, C2=1.0)
    _, r_min = bochner_residual(u, u, 1e-3, params)
    return r_min == 0.0, {"constant_min_residual": r_min}


def check_m2_smoke() -> CheckOutcome:
    return check_dissipation_and_monotonicity(m=2, N=8, gate=DISSIPATION_GATE_M2, cadence=5, cfl_factor=0.1)


FULL_CHECKS: List[Tuple[str, Callable[[], CheckOutcome]]] = QUICK_CHECKS + [
    ("commutator_order", check_commutator_order),
    ("sub_laplacian_order", check_sub_laplacian_order),
    ("gradient_delta_scaling", check_gradient_delta_scaling),
    ("dissipation_identity", check_dissipation_and_monotonicity),
    ("spectral_oracle", check_oracle),
    ("equator_drift", check_equator_drift),
    ("bochner_constant", check_bochner_pair),
    ("bochner_refinement", check_bochner_refinement),
    ("m2_smoke", check_m2_smoke),
]


def command_check(level: str = "quick") -> Dict[str, Any]:
    if level not in ("quick", "full"):
        raise ValueError(f"Unknown check level: {level!r} (expected quick or full)")
    suite = QUICK_CHECKS if level == "quick" else FULL_CHECKS
    hard_pass: List[str] = []
    hard_fail: List[str] = []
    soft_warn: List[str] = []
    details: Dict[str, Any] = {}
    logs: List[str] = []
    for name, fn in suite:
        t0 = time.time()
        try:
            ok, detail = fn()
        except Exception as e:  # a crashing check is a failed check
            ok, detail = False, f"{type(e).__name__}: {e}"
        details[name] = detail
        (hard_pass if ok else hard_fail).append(name)
        logs.append(f"{'PASS' if ok else 'FAIL'} {name} ({time.time() - t0:.2f} s)")
    if level == "quick":
        soft_warn.append("refinement_studies_skipped")
    return {"level": level, "hard_pass": hard_pass, "hard_fail": hard_fail, "soft_warn": soft_warn,
            "details": details, "logs": logs, "passed": not hard_fail}
