"""crflow.analysis

Bound calculus and live monitors for the pseudoharmonic heat flow.

What is computed
- energies E, E_b, E_0 (convention E(f) = int e(f) dV, so E = E_b + E_0)
- the comparison function g(t) and guaranteed horizon T_0 of the
  density estimate, with g' = g (C1 + C2 g)
- threshold constants: window bound s_max, maximizer x_0 of
  phi(x) = exp(-C2 s x) x / (1 + x), and the time where g reaches 2D
- Bochner residual (Delta_b - d/dt) e + C1 e + C2 e^2 >= 0 and the analogous
  residual for |u_t|^2
- dissipation identity d/dt E_b = -int |u_t|^2 dV, vertical-energy control,
  empirical mean-value constant, and a finite-difference gradient oracle

Empirical constants are reported, never asserted against fixed values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import WEBSTER_RICCI, TORSION_NORM
from .operators import (
    FRAME_NORMALIZATION,
    HORIZONTAL_DENSITY_FACTOR,
    MapField,
    ScalarField,
    energy_densities,
    sub_laplacian_array,
)

CONVERGED = "CONVERGED"
BLOWUP = "BLOWUP"
TIMEOUT = "TIMEOUT"

# Bochner tolerance model: tol_B = BOCHNER_TOLERANCE_CONSTANT * (h^2 + dt) * scale
BOCHNER_TOLERANCE_CONSTANT = 2.0
LEMMA_BOUND_RTOL = 1e-9
ENERGY_CONVENTION = "E(f) = int_M e(f) dV (applied to E, E_b, E_0 so that E = E_b + E_0)"
LEVI_CONVENTION = "theta = dt + sum(x dy - y dx); L_theta = 2 * Identity on {X_a, Y_a}"
D_FLOOR = 1e-12
LOG_FLOAT_MAX = 700.0


def flat_model_c1() -> float:
    # C1 depends only on Webster Ricci and torsion, both zero on the flat model
    return 0.0 if WEBSTER_RICCI == 0.0 and TORSION_NORM == 0.0 else float("nan")


def default_c2(kappa: float) -> float:
    """8 kappa times the frame normalization; any positive value is valid for flat targets."""
    if kappa > 0:
        return 8.0 * kappa * FRAME_NORMALIZATION
    return 1.0


def s_max_for(D: float, C2: float) -> float:
    return 1.0 / (D * (4.0 * D + 2.0) * C2)


@dataclass(frozen=True)
class ControlParams:
    D: float
    C1: float = 0.0
    C2: float = 1.0
    s: Optional[float] = None  # default: half of s_max

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.C1 >= 0:
            raise ValueError(f"C1 must be nonnegative, got {self.C1}")
        if not self.C2 > 0:
            raise ValueError(f"C2 must be positive, got {self.C2}")
        if self.s is None:
            object.__setattr__(self, "s", 0.5 * self.s_max)
        if not 0 < self.s < self.s_max:
            raise ValueError(
                f"s={self.s} violates 0 < s < 1/(D(4D+2)C2) = {self.s_max:.6g} (density-threshold window bound)"
            )

    @property
    def s_max(self) -> float:
        return s_max_for(self.D, self.C2)


def default_control_params(initial: MapField, C2: Optional[float] = None) -> ControlParams:
    _, _, e = energy_densities(initial)
    D = max(e.sup(), D_FLOOR)
    return ControlParams(D=D, C1=flat_model_c1(), C2=C2 if C2 is not None else default_c2(initial.target.kappa))


@dataclass
class EnergyReport:
    step: int
    t: float
    E: float
    E_b: float
    E_0: float
    sup_e: float
    sup_e_b: float
    sup_e_0: float
    sup_tau: float
    sup_u_t: float
    dissipation_residual: Optional[float] = None
    bochner_min_residual: Optional[float] = None
    g_bound: Optional[float] = None
    vertical_control_ratio: Optional[float] = None
    mean_value_ratio: Optional[float] = None
    # bookkeeping and supplementary monitors
    ut_sq_integral: float = 0.0
    rho: float = 0.0
    bochner_tolerance: Optional[float] = None
    velocity_bochner_min_residual: Optional[float] = None
    window_energy_drop: Optional[float] = None
    window_dissipation: Optional[float] = None
    density_bound_ratio: Optional[float] = None


TIMESERIES_COLUMNS = [
    "step", "t", "E", "E_b", "E_0", "sup_e", "sup_e_b", "sup_e_0", "sup_tau", "sup_ut",
    "dissipation_residual", "bochner_min_residual", "g_bound", "vertical_control_ratio", "mean_value_ratio",
]

SUPPLEMENTARY_COLUMNS = [
    "step", "t", "rho", "ut_sq_integral", "bochner_tolerance", "velocity_bochner_min_residual",
    "window_energy_drop", "window_dissipation", "density_bound_ratio",
]


def report_row(r: EnergyReport) -> Dict[str, Any]:
    return {k: (r.sup_u_t if k == "sup_ut" else getattr(r, k)) for k in TIMESERIES_COLUMNS}


def supplementary_row(r: EnergyReport) -> Dict[str, Any]:
    return {k: getattr(r, k) for k in SUPPLEMENTARY_COLUMNS}


@dataclass
class Trajectory:
    initial: MapField
    final: MapField
    reports: List[EnergyReport]
    reason: str
    dt: float
    params: ControlParams
    blowup_time: Optional[float] = None
    rho_max: float = math.inf
    tol_tau: float = 1e-4

    @property
    def rho(self) -> float:
        return max(r.sup_e for r in self.reports)


# ------------------
# Energies and bounds
# ------------------

def total_energies(u: MapField, density_factor: float = HORIZONTAL_DENSITY_FACTOR) -> Tuple[float, float, float]:
    e_b, e_0, _ = energy_densities(u, density_factor)
    E_b = e_b.integral()
    E_0 = e_0.integral()
    return E_b + E_0, E_b, E_0


def comparison_bounds(params: ControlParams, t: float, delta: float = 0.0) -> Tuple[float, Optional[float]]:
    """(T_0, g(t)); g is None once the bound has expired (t >= T_0)."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    D = params.D + delta
    C1, C2 = params.C1, params.C2
    if C1 == 0.0:
        T0 = 1.0 / (C2 * D)
        if t >= T0:
            return T0, None
        return T0, D / (1.0 - C2 * D * t)
    T0 = math.log1p(C1 / (D * C2)) / C1
    if t >= T0:
        return T0, None
    return T0, C1 * D * math.exp(C1 * t) / (C1 - C2 * D * math.expm1(C1 * t))


def comparison_rate(params: ControlParams, g: float) -> float:
    """Right-hand side of g' = g (C1 + C2 g)."""
    return g * (params.C1 + params.C2 * g)


def comparison_ode_residual(params: ControlParams, t: float, eps: float = 5e-4) -> float:
    """|g'(t) - g (C1 + C2 g)| / (g (C1 + C2 g)) with a five-point central difference for g'."""
    T0, g = comparison_bounds(params, t)
    if g is None or t + 2 * eps >= T0 or t - 2 * eps < 0:
        raise ValueError(f"t={t} too close to the ends of [0, T0={T0:.6g}) for step {eps}")
    gv = [comparison_bounds(params, t + k * eps)[1] for k in (-2, -1, 1, 2)]
    slope = (gv[0] - 8.0 * gv[1] + 8.0 * gv[2] - gv[3]) / (12.0 * eps)
    rate = comparison_rate(params, g)
    return abs(slope - rate) / rate


def phi_value(x: float, C2: float, s: float) -> float:
    return math.exp(-C2 * s * x) * x / (1.0 + x)


def threshold_constants(params: ControlParams) -> Dict[str, float]:
    s, C1, C2, D = params.s, params.C1, params.C2, params.D
    if s >= params.s_max:
        raise ValueError(f"s={s} >= s_max={params.s_max:.6g}")
    x0 = -0.5 + math.sqrt(0.25 + 1.0 / (C2 * s))
    if C1 == 0.0:
        t0_2D = 1.0 / (2.0 * C2 * D)
    else:
        t0_2D = math.log(2.0 * (C1 + C2 * D) / (C1 + 2.0 * C2 * D)) / C1
    return {"s_max": params.s_max, "x0": x0, "phi_x0": phi_value(x0, C2, s), "t0_2D": t0_2D}


# --------
# Monitors
# --------

def _density_residual(grid, e_prev: np.ndarray, e_next: np.ndarray, dt: float,
                      linear: float, quadratic: float) -> np.ndarray:
    return (sub_laplacian_array(grid, e_next) - (e_next - e_prev) / dt
            + linear * e_next + quadratic * e_next * e_next)


def bochner_tolerance(grid, e_prev: np.ndarray, e_next: np.ndarray, dt: float) -> float:
    scale = max(float(np.max(np.abs(e_next))),
                float(np.max(np.abs(sub_laplacian_array(grid, e_next)))),
                float(np.max(np.abs(e_next - e_prev))) / dt)
    return BOCHNER_TOLERANCE_CONSTANT * (grid.h * grid.h + dt) * scale


def bochner_residual(u_prev: MapField, u_next: MapField, dt: float,
                     params: ControlParams) -> Tuple[ScalarField, float]:
    """r = Delta_b e - d_t e + C1 e + C2 e^2 with a backward time difference."""
    _, _, e_prev = energy_densities(u_prev)
    _, _, e_next = energy_densities(u_next)
    r = _density_residual(u_next.grid, e_prev.values, e_next.values, dt, params.C1, params.C2)
    return ScalarField(u_next.grid, r), float(np.min(r))


def velocity_bochner_residual(grid, ut_prev: np.ndarray, ut_next: np.ndarray, dt: float,
                              rho: float, kappa: float) -> Tuple[ScalarField, float]:
    """r = (Delta_b - d_t)|u_t|^2 + 2 kappa rho |u_t|^2, the subsolution property of |u_t|^2."""
    w_prev = np.sum(ut_prev * ut_prev, axis=-1)
    w_next = np.sum(ut_next * ut_next, axis=-1)
    r = _density_residual(grid, w_prev, w_next, dt, 2.0 * kappa * rho, 0.0)
    return ScalarField(grid, r), float(np.min(r))


def _window_integral(times: Sequence[float], values: Sequence[float], t0: float, t1: float) -> float:
    """Trapezoid integral over [t0, t1] of sampled values, interpolating at the ends."""
    ts = np.asarray(times, dtype=float)
    vs = np.asarray(values, dtype=float)
    t0 = max(t0, float(ts[0]))
    if t1 <= t0:
        return 0.0
    inner = (ts > t0) & (ts < t1)
    knots = np.concatenate(([t0], ts[inner], [t1]))
    vals = np.interp(knots, ts, vs)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)))


def dissipation_residual(reports: Sequence[EnergyReport], E_b_initial: float) -> float:
    """max over consecutive pairs of |dE_b/dt + int |u_t|^2 dV|, normalized by max(E_b(0), 1)."""
    if len(reports) < 2:
        raise ValueError("dissipation residual needs at least two reports")
    worst = 0.0
    norm = max(E_b_initial, 1.0)
    for a, b in zip(reports[:-1], reports[1:]):
        dt = b.t - a.t
        if dt <= 0:
            continue
        rate = (b.E_b - a.E_b) / dt
        mid = 0.5 * (a.ut_sq_integral + b.ut_sq_integral)
        worst = max(worst, abs(rate + mid) / norm)
    return worst


def vertical_control_ratio(reports: Sequence[EnergyReport], E_b_initial: float,
                           window: Optional[float] = None, rho: Optional[float] = None) -> Optional[float]:
    """[int_window int_M e_0 dV dt] / [(1 + rho) E_b(h)]; None flags a degenerate 0-energy start."""
    times = [r.t for r in reports]
    t1 = times[-1]
    t0 = times[0] if window is None else t1 - window
    numerator = _window_integral(times, [r.E_0 for r in reports], t0, t1)
    if rho is None:
        rho = max(r.sup_e for r in reports)
    if E_b_initial <= 0.0:
        return 0.0 if numerator == 0.0 else None
    return numerator / ((1.0 + rho) * E_b_initial)


def mean_value_ratio(reports: Sequence[EnergyReport], t: float, eps: float,
                     params: ControlParams, rho: Optional[float] = None) -> Optional[float]:
    """sup_x phi(x, t) / int_{t-eps}^t int_M phi dV ds with phi = exp(-(C1 + C2 rho) s) e(u)."""
    if rho is None:
        rho = max(r.sup_e for r in reports if r.t <= t)
    rate = params.C1 + params.C2 * rho
    times = [r.t for r in reports]
    # weights taken relative to time t; the common factor cancels in the ratio
    weights = [math.exp(min(-rate * (r.t - t), LOG_FLOAT_MAX)) for r in reports]
    sups = [w * r.sup_e for w, r in zip(weights, reports)]
    integrals = [w * r.E for w, r in zip(weights, reports)]
    return sampled_mean_value_ratio(times, sups, integrals, t, eps)


def sampled_mean_value_ratio(times: Sequence[float], phi_sup: Sequence[float],
                             phi_integral: Sequence[float], t: float, eps: float) -> Optional[float]:
    """sup phi(., t) / int_{t-eps}^t (int_M phi dV) ds from time samples."""
    if t < eps:
        raise ValueError(f"mean-value ratio needs t >= eps ({t} < {eps})")
    numerator = float(np.interp(t, times, phi_sup))
    denominator = _window_integral(times, phi_integral, t - eps, t)
    if denominator == 0.0:
        return 0.0 if numerator == 0.0 else None
    return numerator / denominator


def window_energy_drop(reports: Sequence[EnergyReport], t: float, window: float = 1.0) -> Tuple[float, float]:
    """(E_b(t - window) - E_b(t), int_{t-window}^t int_M |u_r|^2 dV dr); equal along the flow."""
    times = [r.t for r in reports]
    t0 = max(times[0], t - window)
    e_b = [r.E_b for r in reports]
    drop = float(np.interp(t0, times, e_b) - np.interp(t, times, e_b))
    integral = _window_integral(times, [r.ut_sq_integral for r in reports], t0, t)
    return drop, integral


def density_bound_ratio(sup_e: float, rho: float, E_b_initial: float, params: ControlParams) -> Optional[float]:
    """sup e / [(1 + rho) exp((C1 + C2 rho) s) E_b(h)], the empirical constant of the post-t_0 estimate."""
    if E_b_initial <= 0.0:
        return None
    if sup_e <= 0.0:
        return 0.0
    # the exponential overflows for large rho; the ratio then underflows to 0
    log_bound = math.log1p(rho) + (params.C1 + params.C2 * rho) * params.s + math.log(E_b_initial)
    return math.exp(min(math.log(sup_e) - log_bound, LOG_FLOAT_MAX))


def gradient_sides(u: MapField, v: np.ndarray, delta: float,
                   density_factor: float = HORIZONTAL_DENSITY_FACTOR) -> Tuple[float, float]:
    """(finite-difference dE_b[v], -int <tau(u), v> dV)."""
    from .flow import tension_field

    target = u.target
    plus = u.with_values(target.project(u.values + delta * v))
    minus = u.with_values(target.project(u.values - delta * v))
    lhs = (total_energies(plus, density_factor)[1] - total_energies(minus, density_factor)[1]) / (2.0 * delta)
    rhs = -float(np.sum(tension_field(u) * v)) * u.grid.cell_weight
    return lhs, rhs


def gradient_check(u: MapField, v: np.ndarray, delta: float = 1e-4,
                   density_factor: float = HORIZONTAL_DENSITY_FACTOR) -> float:
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not np.any(v):
        return 0.0
    lhs, rhs = gradient_sides(u, v, delta, density_factor)
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


# ---------------
# Running monitor
# ---------------

@dataclass
class FlowMonitor:
    """Builds EnergyReports from snapshots handed over by the flow driver."""

    params: ControlParams
    initial: MapField
    reports: List[EnergyReport] = field(default_factory=list)
    rho: float = 0.0
    initial_sup_e: float = 0.0
    E_b_initial: float = 0.0
    _prev_u: Optional[np.ndarray] = None
    _prev_e: Optional[np.ndarray] = None
    _prev_tau: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        _, e_b, _ = total_energies(self.initial)
        _, _, e = energy_densities(self.initial)
        self.E_b_initial = e_b
        self.initial_sup_e = e.sup()

    def sample(self, u: MapField, t: float, step_count: int, tau: np.ndarray) -> EnergyReport:
        grid, params = u.grid, self.params
        e_b, e_0, e = energy_densities(u)
        E_b, E_0 = e_b.integral(), e_0.integral()
        sup_tau = float(np.max(np.linalg.norm(tau, axis=-1)))
        self.rho = max(self.rho, e.sup())
        report = EnergyReport(
            step=step_count, t=t, E=E_b + E_0, E_b=E_b, E_0=E_0,
            sup_e=e.sup(), sup_e_b=e_b.sup(), sup_e_0=e_0.sup(),
            sup_tau=sup_tau, sup_u_t=sup_tau,
            ut_sq_integral=float(np.sum(tau * tau)) * grid.cell_weight,
            rho=self.rho,
        )
        _, report.g_bound = comparison_bounds(params, t)

        if self.reports:
            prev = self.reports[-1]
            dt = t - prev.t
            if dt > 0:
                report.sup_u_t = float(np.max(np.linalg.norm(u.values - self._prev_u, axis=-1))) / dt
                r = _density_residual(grid, self._prev_e, e.values, dt, params.C1, params.C2)
                report.bochner_min_residual = float(np.min(r))
                report.bochner_tolerance = bochner_tolerance(grid, self._prev_e, e.values, dt)
                _, report.velocity_bochner_min_residual = velocity_bochner_residual(
                    grid, self._prev_tau, tau, dt, self.rho, u.target.kappa)
                report.dissipation_residual = dissipation_residual([prev, report], self.E_b_initial)

        self.reports.append(report)
        window = params.s
        report.vertical_control_ratio = vertical_control_ratio(
            self.reports, self.E_b_initial, window=window, rho=self.rho)
        if t >= window and len(self.reports) > 1:
            report.mean_value_ratio = mean_value_ratio(self.reports, t, window, params, rho=self.rho)
        if len(self.reports) > 1:
            report.window_energy_drop, report.window_dissipation = window_energy_drop(self.reports, t, 1.0)
        report.density_bound_ratio = density_bound_ratio(report.sup_e, self.rho, self.E_b_initial, params)

        self._prev_u = u.values.copy()
        self._prev_e = e.values
        self._prev_tau = tau.copy()
        return report


# --------------
# Classification
# --------------

def classify_termination(trajectory: Trajectory, params: Optional[ControlParams] = None) -> Dict[str, Any]:
    params = params or trajectory.params
    reports = trajectory.reports
    T0, _ = comparison_bounds(params, 0.0)

    violations = []
    for r in reports:
        if r.t >= T0:
            continue
        _, g = comparison_bounds(params, r.t)
        if g is not None and r.sup_e > g * (1.0 + LEMMA_BOUND_RTOL) + D_FLOOR:
            violations.append({"t": r.t, "sup_e": r.sup_e, "g": g})

    tail = [r.sup_u_t for r in reports[len(reports) * 2 // 3:]]
    ut_tail_decreasing = len(tail) < 2 or tail[-1] <= tail[0]

    rho = trajectory.rho
    thresholds = threshold_constants(params)
    annotations: Dict[str, Any] = {
        "termination": trajectory.reason,
        "steps": reports[-1].step,
        "t_final": reports[-1].t,
        "final_sup_tau": reports[-1].sup_tau,
        "lemma_bound_holds": not violations,
        "lemma_bound_violations": violations[:10],
        "T0": T0,
        "ut_tail_decreasing": ut_tail_decreasing,
        "rho": rho,
        "rho_consistent": rho == reports[-1].rho,
        "x0": thresholds["x0"],
        "rho_below_x0": rho < thresholds["x0"],
        "C1_used": params.C1,
        "C2_used": params.C2,
        "D_used": params.D,
        "s_used": params.s,
        "within_theorem_hypothesis": trajectory.initial.grid.within_theorem_hypothesis,
    }
    if trajectory.reason == BLOWUP:
        annotations["blowup_time"] = trajectory.blowup_time
    return annotations


def convention_ledger(params: ControlParams, grid) -> List[str]:
    lines = [
        f"levi: {LEVI_CONVENTION}",
        f"energy: {ENERGY_CONVENTION}",
        f"frame normalization: {FRAME_NORMALIZATION} (Delta_b = 1/2 sum(X^2 + Y^2), e_b = 1/4 sum |X u|^2 + |Y u|^2)",
        f"C1={params.C1} C2={params.C2} D={params.D:.12g} s={params.s:.12g}",
        f"m={grid.m} N={grid.N}" + ("" if grid.within_theorem_hypothesis else " (m=1: outside the m>=2 hypothesis)"),
    ]
    return lines
