"""crflow.flow

Pseudoharmonic heat flow integrator: du/dt = tau(u), u(., 0) = h.

- `tension_field` is the extrinsic tension of the embedded target.
- `step` is forward Euler followed by projection onto the target.
- `step_semi_implicit` treats the linear sub-Laplacian implicitly (conjugate
  gradients on I - dt * Delta_b) and the sphere correction explicitly.
- `run_flow` drives a trajectory until convergence, blow-up or timeout and
  hands immutable snapshots to the analysis monitor at the report cadence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .analysis import (
    BLOWUP,
    CONVERGED,
    TIMEOUT,
    ControlParams,
    FlowMonitor,
    Trajectory,
    default_control_params,
)
from .geometry import NilmanifoldGrid
from .operators import (
    FRAME_NORMALIZATION,
    MapField,
    Neighbours,
    horizontal_pairing_array,
    sub_laplacian_array,
)

SPHERE = "sphere"
TORUS = "torus"
EXPLICIT = "explicit"
SEMI_IMPLICIT = "semi_implicit"


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetManifold:
    """Unit sphere S^n in R^{n+1} (kappa = 1) or flat torus T^n via lifts in R^n (kappa = 0)."""

    kind: str
    n: int

    def __post_init__(self) -> None:
        if self.kind not in (SPHERE, TORUS):
            raise ValueError(f"Unsupported target kind: {self.kind!r} (expected 'sphere' or 'torus')")
        if self.n < 1:
            raise ValueError(f"Target dimension must be >= 1, got {self.n}")

    @property
    def is_sphere(self) -> bool:
        return self.kind == SPHERE

    @property
    def n_amb(self) -> int:
        return self.n + 1 if self.is_sphere else self.n

    @property
    def kappa(self) -> float:
        return 1.0 if self.is_sphere else 0.0

    def base_point(self) -> np.ndarray:
        a = np.zeros(self.n_amb)
        if self.is_sphere:
            a[-1] = 1.0
        return a

    def project(self, values: np.ndarray) -> np.ndarray:
        if not self.is_sphere:
            return values
        return values / np.linalg.norm(values, axis=-1, keepdims=True)

    def tangent_part(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if not self.is_sphere:
            return v
        return v - np.sum(u * v, axis=-1, keepdims=True) * u


def unit_sphere(n: int) -> TargetManifold:
    return TargetManifold(SPHERE, n)


def flat_torus(n: int) -> TargetManifold:
    return TargetManifold(TORUS, n)


@dataclass(frozen=True)
class FlowState:
    u: MapField
    t: float = 0.0
    step_count: int = 0


@dataclass(frozen=True)
class FlowConfig:
    cfl_factor: float = 0.25
    t_max: float = 2.0
    tol_tau: float = 1e-4
    rho_max: Optional[float] = None  # default: 1e4 * max(sup e(h), 1e-12)
    cadence: int = 20
    scheme: str = EXPLICIT
    implicit_dt_scale: float = 8.0

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl_factor <= 1.0:
            raise ValueError(f"cfl_factor must lie in (0, 1], got {self.cfl_factor}")
        for name in ("t_max", "tol_tau", "implicit_dt_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rho_max is not None and not self.rho_max > 0:
            raise ValueError(f"rho_max must be positive, got {self.rho_max}")
        if self.cadence < 1:
            raise ValueError(f"cadence must be >= 1, got {self.cadence}")
        if self.scheme not in (EXPLICIT, SEMI_IMPLICIT):
            raise ValueError(f"Unknown scheme {self.scheme!r}")


# -------------
# Tension field
# -------------

def _tension_array(u: MapField) -> np.ndarray:
    nb = Neighbours(u.grid, u.values)
    lap = sub_laplacian_array(u.grid, u.values, nb)
    if not u.target.is_sphere:
        return lap
    # |d_b u|^2 = 2 e_b, from the same neighbour arrays as the sub-Laplacian
    pair = horizontal_pairing_array(u.grid, u.values, u.values, nb)
    return lap + pair[..., None] * u.values


def tension_field(u: MapField) -> np.ndarray:
    """Ambient-vector field tau(u); Delta_b u for tori, Delta_b u + |d_b u|^2 u for spheres."""
    return _tension_array(u)


def sup_norm(vectors: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(vectors, axis=-1)))


# ---------------
# Time-step bound
# ---------------

def stencil_coefficient_sums(grid: NilmanifoldGrid) -> np.ndarray:
    """Per-point sum of |stencil coefficients| of Delta_b, scaled by h^2."""
    total = np.zeros(grid.shape)
    for alpha in range(grid.m):
        x = np.broadcast_to(grid.coordinate(2 * alpha), grid.shape)
        y = np.broadcast_to(grid.coordinate(2 * alpha + 1), grid.shape)
        r2 = x * x + y * y
        centre = 2.0 + 2.0 + 2.0 * r2
        pure = 4.0 + 2.0 * r2  # +-x, +-y, and the two t neighbours
        cross = 4.0 * (2.0 * np.abs(y) / 4.0) + 4.0 * (2.0 * np.abs(x) / 4.0)
        total += FRAME_NORMALIZATION * (centre + pure + cross)
    return total


def _stencil_bound(grid: NilmanifoldGrid) -> float:
    key = ("stencil_bound",)
    if key not in grid._cache:
        grid._cache[key] = np.array(float(np.max(stencil_coefficient_sums(grid))))
    return float(grid._cache[key])


def cfl_timestep(grid: NilmanifoldGrid, cfl_factor: float = FlowConfig.cfl_factor) -> float:
    return cfl_factor * grid.h * grid.h / _stencil_bound(grid)


# --------
# Stepping
# --------

def _finish_step(state: FlowState, values: np.ndarray, dt: float) -> FlowState:
    if not np.all(np.isfinite(values)):
        raise BlowUpError(f"non-finite values after step {state.step_count + 1} (t={state.t + dt:.6g})")
    values = state.u.target.project(values)
    if not np.all(np.isfinite(values)):
        raise BlowUpError(f"projection failed after step {state.step_count + 1} (t={state.t + dt:.6g})")
    return FlowState(state.u.with_values(values), state.t + dt, state.step_count + 1)


def step(state: FlowState, dt: float, tau: Optional[np.ndarray] = None) -> FlowState:
    if dt > cfl_timestep(state.u.grid, 1.0) * (1.0 + 1e-12):
        raise ValueError(f"dt={dt:.3e} exceeds the explicit stability bound")
    if tau is None:
        tau = tension_field(state.u)
    return _finish_step(state, state.u.values + dt * tau, dt)


def step_semi_implicit(state: FlowState, dt: float, tau: Optional[np.ndarray] = None) -> FlowState:
    u = state.u
    grid = u.grid
    if tau is None:
        tau = tension_field(u)
    lap = sub_laplacian_array(grid, u.values)
    rhs = u.values + dt * (tau - lap)

    def matvec(x: np.ndarray) -> np.ndarray:
        field = x.reshape(grid.shape)
        return (field - dt * sub_laplacian_array(grid, field)).ravel()

    op = LinearOperator((grid.n_points, grid.n_points), matvec=matvec, dtype=float)
    new = np.empty_like(rhs)
    for c in range(rhs.shape[-1]):
        b = rhs[..., c].ravel()
        x, info = cg(op, b, x0=u.values[..., c].ravel(), rtol=1e-12, atol=0.0, maxiter=500)
        if info != 0:
            raise BlowUpError(f"implicit solve did not converge (info={info}) at step {state.step_count + 1}")
        new[..., c] = x.reshape(grid.shape)
    return _finish_step(state, new, dt)


# ----------------
# Trajectory driver
# ----------------

def run_flow(initial: MapField,
             config: FlowConfig = FlowConfig(),
             params: Optional[ControlParams] = None,
             on_report: Optional[Callable] = None,
             ) -> Trajectory:
    grid = initial.grid
    if params is None:
        params = default_control_params(initial)
    dt = cfl_timestep(grid, config.cfl_factor)
    stepper = step
    if config.scheme == SEMI_IMPLICIT:
        dt *= config.implicit_dt_scale
        stepper = step_semi_implicit

    monitor = FlowMonitor(params, initial)
    rho_max = config.rho_max or 1e4 * max(monitor.initial_sup_e, 1e-12)

    state = FlowState(initial)
    tau = tension_field(state.u)
    monitor.sample(state.u, state.t, state.step_count, tau)
    if on_report:
        on_report(monitor.reports[-1])

    reason = TIMEOUT
    blowup_time: Optional[float] = None
    while True:
        if sup_norm(tau) < config.tol_tau:
            reason = CONVERGED
            break
        if state.t >= config.t_max * (1.0 - 1e-12):
            reason = TIMEOUT
            break
        h_step = min(dt, config.t_max - state.t)
        try:
            state = stepper(state, h_step, tau)
        except BlowUpError:
            reason = BLOWUP
            blowup_time = state.t + h_step
            break
        tau = tension_field(state.u)
        if not np.all(np.isfinite(tau)):
            reason = BLOWUP
            blowup_time = state.t
            break
        if state.step_count % config.cadence == 0:
            report = monitor.sample(state.u, state.t, state.step_count, tau)
            if on_report:
                on_report(report)
            if report.sup_e > rho_max:
                reason = BLOWUP
                blowup_time = state.t
                break

    if monitor.reports[-1].step != state.step_count:
        report = monitor.sample(state.u, state.t, state.step_count, tau)
        if on_report:
            on_report(report)
        if reason != BLOWUP and report.sup_e > rho_max:
            reason = BLOWUP
            blowup_time = state.t

    return Trajectory(
        initial=initial,
        final=state.u,
        reports=monitor.reports,
        reason=reason,
        dt=dt,
        params=params,
        blowup_time=blowup_time,
        rho_max=rho_max,
        tol_tau=config.tol_tau,
    )
