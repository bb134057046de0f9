"""crflow.initial

Initial maps h: M -> N for the flow.

Families
- constant        the base point a everywhere
- torus_mode      Pi(a + lam * sin(2 pi k.z) w), t-independent; w is a unit vector
                  orthogonal to a (sphere) or the first axis (torus)
- equator         the closed-geodesic wrap (cos 2 pi x, sin 2 pi x, 0, ...) on a sphere
- bump_averaged   Pi(a + lam * F w) with F = sum over lattice elements gamma of
                  psi(gamma . p), psi a smooth bump supported in a ball of radius
                  r <= 1/2 about the origin; genuinely t-dependent
- smoothed_noise  seeded Gaussian noise driven k steps by the linear flat flow,
                  then added to a and projected

Families with a closed-form lift on R^{2m+1} expose it through
`initial_lift`, which `wrap_consistency_defect` compares against the grid's
twisted neighbour fetches.
"""

from __future__ import annotations

from itertools import product
from typing import Callable, Optional

import numpy as np

from .config import InitialDataSpec
from .flow import TargetManifold, cfl_timestep
from .geometry import NilmanifoldGrid
from .operators import MapField, sub_laplacian_array

Lift = Callable[[np.ndarray], np.ndarray]

NOISE_SMOOTHING_CFL = 0.5


def _base(target: TargetManifold, spec: InitialDataSpec) -> np.ndarray:
    a = np.asarray(spec.base, dtype=float) if spec.base is not None else target.base_point()
    if a.shape != (target.n_amb,):
        raise ValueError(f"base point needs {target.n_amb} components, got {a.shape}")
    if target.is_sphere:
        a = a / np.linalg.norm(a)
    return a


def _direction(target: TargetManifold, a: np.ndarray) -> np.ndarray:
    """Unit perturbation direction; orthogonal to a on the sphere."""
    if not target.is_sphere:
        w = np.zeros(target.n_amb)
        w[0] = 1.0
        return w
    for k in range(target.n_amb):
        e = np.zeros(target.n_amb)
        e[k] = 1.0
        w = e - np.dot(e, a) * a
        if np.linalg.norm(w) > 0.5:
            return w / np.linalg.norm(w)
    raise ValueError("no direction orthogonal to the base point")


def _modes(grid: NilmanifoldGrid, spec: InitialDataSpec) -> np.ndarray:
    if spec.modes is None:
        return np.array([1] + [0] * (2 * grid.m - 1))
    k = np.asarray(spec.modes, dtype=int)
    if k.shape != (2 * grid.m,):
        raise ValueError(f"modes needs {2 * grid.m} integers, got {tuple(spec.modes)}")
    return k


def grid_points(grid: NilmanifoldGrid) -> np.ndarray:
    """Chart coordinates of every grid point, shape grid.shape + (dim,)."""
    return np.stack(np.meshgrid(*[np.arange(grid.N) * grid.h] * grid.dim, indexing="ij"), axis=-1)


# -----
# Lifts
# -----

def mode_function(k: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """sin(2 pi k.z) over the horizontal coordinates z of points shaped (..., dim)."""
    def f(points: np.ndarray) -> np.ndarray:
        return np.sin(2.0 * np.pi * (points[..., :-1] @ k))
    return f


def bump_lift(m: int, radius: float) -> Callable[[np.ndarray], np.ndarray]:
    """F(p) = sum_gamma psi(gamma . p) for the lattice left action.

    With radius <= 1/2 at most one lattice element moves p into the support,
    namely the one rounding every coordinate to zero, so the sum is evaluated
    through that element.
    """
    r2 = radius * radius

    def f(points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        moved = np.empty_like(p)
        shift = np.zeros(p.shape[:-1])
        for alpha in range(m):
            x, y = p[..., 2 * alpha], p[..., 2 * alpha + 1]
            a, b = -np.round(x), -np.round(y)
            moved[..., 2 * alpha] = a + x
            moved[..., 2 * alpha + 1] = b + y
            shift += b * x - a * y
        t = p[..., -1] + shift
        moved[..., -1] = t - np.round(t)
        s = np.sum(moved * moved, axis=-1) / r2
        out = np.zeros(s.shape)
        inside = s < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        return out

    return f


def oscillating_lift(m: int, width: float = 0.35, reach: int = 3) -> Callable[[np.ndarray], np.ndarray]:
    """Lattice sum of exp(-|z|^2 / width^2) cos(2 pi t), a smooth t-dependent lift.

    The cosine is 1-periodic in t, so only the horizontal part of the lattice
    is summed. Points are first moved into the unit cell about the origin and
    offsets up to `reach` in every horizontal direction are kept; the dropped
    Gaussian tails are below rounding for width <= 0.4.
    """
    w2 = width * width

    def f(points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        z = np.empty(p.shape[:-1] + (2 * m,))
        t = p[..., -1].copy()
        for alpha in range(m):
            x, y = p[..., 2 * alpha], p[..., 2 * alpha + 1]
            a, b = -np.round(x), -np.round(y)
            z[..., 2 * alpha] = a + x
            z[..., 2 * alpha + 1] = b + y
            t += b * x - a * y
        out = np.zeros(t.shape)
        for offset in product(range(-reach, reach + 1), repeat=2 * m):
            moved = z + np.asarray(offset, dtype=float)
            phase = t.copy()
            for alpha in range(m):
                a, b = offset[2 * alpha], offset[2 * alpha + 1]
                phase += b * z[..., 2 * alpha] - a * z[..., 2 * alpha + 1]
            out += np.exp(-np.sum(moved * moved, axis=-1) / w2) * np.cos(2.0 * np.pi * phase)
        return out

    return f


def initial_lift(grid: NilmanifoldGrid, target: TargetManifold, spec: InitialDataSpec) -> Optional[Lift]:
    """Closed-form lift p -> h(p) on R^{2m+1}; None for smoothed_noise."""
    a = _base(target, spec)
    if spec.family == "constant":
        return lambda pts: np.broadcast_to(a, pts.shape[:-1] + a.shape).copy()
    if spec.family == "equator":
        if not target.is_sphere or grid.m != 1:
            raise ValueError("equator data requires a sphere target and m = 1")
        if target.n_amb < 2:
            raise ValueError("equator data needs at least two ambient components")

        def equator(pts: np.ndarray) -> np.ndarray:
            out = np.zeros(pts.shape[:-1] + (target.n_amb,))
            out[..., 0] = np.cos(2.0 * np.pi * pts[..., 0])
            out[..., 1] = np.sin(2.0 * np.pi * pts[..., 0])
            return out
        return equator
    if spec.family in ("torus_mode", "bump_averaged"):
        w = _direction(target, a)
        scalar = (mode_function(_modes(grid, spec)) if spec.family == "torus_mode"
                  else bump_lift(grid.m, spec.bump_radius))

        def perturbed(pts: np.ndarray) -> np.ndarray:
            return target.project(a + spec.lam * scalar(pts)[..., None] * w)
        return perturbed
    if spec.family == "smoothed_noise":
        return None
    raise ValueError(f"Unsupported initial family: {spec.family!r}")


# ------------
# Construction
# ------------

def smoothed_noise(grid: NilmanifoldGrid, target: TargetManifold, spec: InitialDataSpec,
                   seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = spec.lam * rng.standard_normal(grid.shape + (target.n_amb,))
    dt = cfl_timestep(grid, NOISE_SMOOTHING_CFL)
    for _ in range(spec.smoothing_steps):
        v = v + dt * sub_laplacian_array(grid, v)
    values = _base(target, spec) + v
    if target.is_sphere and np.any(np.linalg.norm(values, axis=-1) == 0.0):
        raise ValueError("smoothed noise hit the origin; change seed or lambda")
    return target.project(values)


def make_initial_map(grid: NilmanifoldGrid, target: TargetManifold, spec: InitialDataSpec,
                     seed: Optional[int] = None) -> MapField:
    seed = spec.seed if seed is None else seed
    if spec.family == "smoothed_noise":
        values = smoothed_noise(grid, target, spec, seed)
    else:
        lift = initial_lift(grid, target, spec)
        values = lift(grid_points(grid))
    return MapField(grid, target, np.ascontiguousarray(values, dtype=float))


def wrap_consistency_defect(grid: NilmanifoldGrid, field: MapField, lift: Lift) -> float:
    """max over axes and directions of |grid neighbour - lift(stepped point)|.

    The grid fetch uses the twisted identification; the lift is evaluated at the
    stepped point itself, which lies outside the fundamental domain on faces.
    """
    pts = grid_points(grid)
    worst = float(np.max(np.abs(field.values - lift(pts))))
    for axis in range(grid.dim):
        for shift in (1, -1):
            stepped = pts.copy()
            stepped[..., axis] += shift * grid.h
            fetched = grid.shifted(field.values, (axis, shift))
            worst = max(worst, float(np.max(np.abs(fetched - lift(stepped)))))
    return worst
