"""crflow.geometry

Discrete model of the Heisenberg nilmanifold: the compact quotient of the
Heisenberg group H^m by its integer lattice, carrying the flat
pseudo-Hermitian structure.

Conventions
- Coordinates (x^1, y^1, ..., x^m, y^m, t) on the fundamental domain [0,1)^{2m+1}.
- Contact form theta = dt + sum_a (x^a dy^a - y^a dx^a), so
  d(theta) = 2 sum_a dx^a ^ dy^a and dV = theta ^ (d theta)^m = 2^m m! dx dy dt.
- Horizontal frame X_a = d/dx^a + y^a d/dt, Y_a = d/dy^a - x^a d/dt, J X_a = Y_a.
  Reeb field xi = d/dt.
- The lattice acts on the left by
      (a, b, c) . (x, y, t) = (a + x, b + y, c + t + sum_a (b^a x^a - a^a y^a)),
  which preserves theta, X_a, Y_a and xi. Stepping across the x^a = 1 face
  lands on the x^a = 0 sheet with the t-index moved by +j_a (the y^a index);
  across the y^a = 1 face the t-index moves by -i_a (the x^a index).
- Every axis has the same resolution N, so each identification is an
  integer number of cells and no interpolation is needed.

Flat model: pseudo-Hermitian torsion and Webster Ricci curvature vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np


SUPPORTED_M = (1, 2)
MIN_RESOLUTION = 4

# Flat Heisenberg model: A = 0, R_{a b-bar} = 0.
TORSION_NORM = 0.0
WEBSTER_RICCI = 0.0

Axis = Union[int, str]
MultiIndex = Tuple[int, ...]


@dataclass(frozen=True)
class HeisenbergModel:
    """Frame algebra of H^m in the chosen contact-form convention."""

    m: int

    @property
    def dim(self) -> int:
        return 2 * self.m + 1

    @property
    def axis_names(self) -> List[str]:
        names: List[str] = []
        for a in range(1, self.m + 1):
            names += [f"x{a}", f"y{a}"]
        return names + ["t"]

    @property
    def frame_names(self) -> List[str]:
        """Horizontal frame first (X_1, Y_1, ..., X_m, Y_m), then the Reeb field."""
        names: List[str] = []
        for a in range(1, self.m + 1):
            names += [f"X{a}", f"Y{a}"]
        return names + ["xi"]

    def frame_vector(self, name: str, coords: Sequence[float]) -> np.ndarray:
        """Coefficients of a frame field in the coordinate basis at `coords`."""
        v = np.zeros(self.dim)
        if name == "xi":
            v[-1] = 1.0
            return v
        kind, alpha = name[0], int(name[1:]) - 1
        if kind not in ("X", "Y") or not 0 <= alpha < self.m:
            raise ValueError(f"Unknown frame field: {name}")
        x, y = coords[2 * alpha], coords[2 * alpha + 1]
        if kind == "X":
            v[2 * alpha] = 1.0
            v[-1] = y
        else:
            v[2 * alpha + 1] = 1.0
            v[-1] = -x
        return v

    def contact_covector(self, coords: Sequence[float]) -> np.ndarray:
        """theta = dt + sum (x dy - y dx) as a covector at `coords`."""
        w = np.zeros(self.dim)
        w[-1] = 1.0
        for a in range(self.m):
            w[2 * a] = -coords[2 * a + 1]
            w[2 * a + 1] = coords[2 * a]
        return w

    def dtheta(self, u: np.ndarray, v: np.ndarray) -> float:
        """d(theta)(u, v) = 2 sum_a (u_x v_y - u_y v_x)."""
        s = 0.0
        for a in range(self.m):
            s += u[2 * a] * v[2 * a + 1] - u[2 * a + 1] * v[2 * a]
        return 2.0 * s

    def levi_matrix(self, coords: Sequence[float]) -> np.ndarray:
        """L_theta(U, V) = d(theta)(U, J V) on the horizontal frame."""
        names = self.frame_names[:-1]
        frame = [self.frame_vector(n, coords) for n in names]
        jframe = []
        for k in range(len(frame)):
            # J X_a = Y_a, J Y_a = -X_a
            jframe.append(frame[k + 1] if k % 2 == 0 else -frame[k - 1])
        L = np.empty((len(frame), len(frame)))
        for i, u in enumerate(frame):
            for j, jv in enumerate(jframe):
                L[i, j] = self.dtheta(u, jv)
        return L

    def frame_jacobian(self, name: str) -> np.ndarray:
        """d(coefficient_i)/d(coordinate_k); constant since coefficients are affine."""
        jac = np.zeros((self.dim, self.dim))
        if name == "xi":
            return jac
        kind, alpha = name[0], int(name[1:]) - 1
        if kind == "X":
            jac[-1, 2 * alpha + 1] = 1.0
        else:
            jac[-1, 2 * alpha] = -1.0
        return jac

    def bracket(self, u_name: str, v_name: str, coords: Sequence[float]) -> np.ndarray:
        """[U, V] = DV.U - DU.V in coordinates."""
        u = self.frame_vector(u_name, coords)
        v = self.frame_vector(v_name, coords)
        return self.frame_jacobian(v_name) @ u - self.frame_jacobian(u_name) @ v


@dataclass(frozen=True, eq=False)
class NilmanifoldGrid:
    m: int
    N: int
    _cache: Dict[Tuple, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.m not in SUPPORTED_M:
            raise ValueError(f"m out of supported range {{1,2}}: {self.m}")
        if self.N < MIN_RESOLUTION:
            raise ValueError(f"resolution too small: N={self.N} < {MIN_RESOLUTION}")

    @property
    def model(self) -> HeisenbergModel:
        return HeisenbergModel(self.m)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def dim(self) -> int:
        return 2 * self.m + 1

    @property
    def t_axis(self) -> int:
        return 2 * self.m

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def n_points(self) -> int:
        return self.N ** self.dim

    @property
    def cell_weight(self) -> float:
        return (2 ** self.m) * factorial(self.m) * self.h ** self.dim

    @property
    def volume(self) -> float:
        return self.cell_weight * self.n_points

    @property
    def within_theorem_hypothesis(self) -> bool:
        # small-energy convergence is only guaranteed for m >= 2
        return self.m >= 2

    def axis_index(self, axis: Axis) -> int:
        if isinstance(axis, str):
            names = self.model.axis_names
            if axis not in names:
                raise ValueError(f"Unknown axis {axis!r}; expected one of {names}")
            return names.index(axis)
        if not 0 <= int(axis) < self.dim:
            raise ValueError(f"Axis out of range: {axis}")
        return int(axis)

    def coordinate(self, axis: Axis) -> np.ndarray:
        """Chart values i*h along `axis`, shaped to broadcast against grid arrays."""
        a = self.axis_index(axis)
        key = ("coord", a)
        if key not in self._cache:
            shape = [1] * self.dim
            shape[a] = self.N
            self._cache[key] = (np.arange(self.N) * self.h).reshape(shape)
        return self._cache[key]

    def coordinates_of(self, multi_index: Sequence[int]) -> Tuple[float, ...]:
        return tuple(i * self.h for i in multi_index)

    def neighbor_index(self, *steps: Tuple[Axis, int]) -> np.ndarray:
        """Flat index map p -> p + e_{a1} + e_{a2} + ... under the lattice identification.

        ``field.reshape(P, -1)[perm]`` holds, at p, the value of the neighbour.
        """
        steps = tuple((self.axis_index(a), int(s)) for a, s in steps)
        if steps in self._cache:
            return self._cache[steps]
        if len(steps) == 1:
            perm = self._single_step(*steps[0])
        else:
            # value at p + e_first + e_rest: fetch via the rest first, then the first step
            perm = self.neighbor_index(steps[0])[self.neighbor_index(*steps[1:])]
        self._cache[steps] = perm
        return perm

    def _single_step(self, axis: int, shift: int) -> np.ndarray:
        if shift not in (1, -1):
            raise ValueError(f"shift must be +1 or -1, got {shift}")
        idx = [i.copy() for i in np.indices(self.shape)]
        N, t = self.N, self.t_axis
        stepped = idx[axis] + shift
        if axis != t:
            alpha, kind = divmod(axis, 2)
            partner = idx[2 * alpha + 1] if kind == 0 else idx[2 * alpha]
            crossed = (stepped < 0) | (stepped >= N)
            sign = 1 if kind == 0 else -1
            idx[t] = np.where(crossed, (idx[t] + sign * shift * partner) % N, idx[t])
        idx[axis] = stepped % N
        return np.ravel_multi_index(tuple(idx), self.shape).ravel()

    def shifted(self, values: np.ndarray, *steps: Tuple[Axis, int]) -> np.ndarray:
        """Neighbour values of a grid array (scalar or with trailing component axes).

        Steps apply in order. Each one is a periodic roll; along a horizontal
        axis the single slab that crossed the face is then realigned in t.
        """
        out = values
        for axis, shift in steps:
            out = self._roll_step(out, self.axis_index(axis), int(shift))
        return out

    def _roll_step(self, values: np.ndarray, axis: int, shift: int) -> np.ndarray:
        if shift not in (1, -1):
            raise ValueError(f"shift must be +1 or -1, got {shift}")
        out = np.roll(values, -shift, axis=axis)
        if axis == self.t_axis:
            return out
        crossed = self.N - 1 if shift > 0 else 0
        source = np.take(values, (crossed + shift) % self.N, axis=axis)
        k = self._slab_t_index(axis, shift, values.ndim - 1)
        out[(slice(None),) * axis + (crossed,)] = np.take_along_axis(source, k, axis=self.t_axis - 1)
        return out

    def _slab_t_index(self, axis: int, shift: int, ndim: int) -> np.ndarray:
        """t-indices fetched on the crossed slab: k + sign * shift * (partner index)."""
        key = ("slab", axis, shift, ndim)
        if key not in self._cache:
            N = self.N
            alpha, kind = divmod(axis, 2)
            partner = 2 * alpha + 1 - kind
            sign = 1 if kind == 0 else -1
            j_shape, k_shape = [1] * ndim, [1] * ndim
            j_shape[partner - 1 if partner > axis else partner] = N
            k_shape[self.t_axis - 1] = N
            j = np.arange(N).reshape(j_shape)
            self._cache[key] = (np.arange(N).reshape(k_shape) + sign * shift * j) % N
        return self._cache[key]


def build_grid(m: int, N: int) -> NilmanifoldGrid:
    return NilmanifoldGrid(m=int(m), N=int(N))


def wrap_index(grid: NilmanifoldGrid, multi_index: Sequence[int], axis: Axis, shift: int) -> MultiIndex:
    """Index of the grid point identified with `multi_index` stepped one cell along `axis`."""
    if shift not in (1, -1):
        raise ValueError(f"shift must be +1 or -1, got {shift}")
    idx = [int(i) for i in multi_index]
    if len(idx) != grid.dim or any(not 0 <= i < grid.N for i in idx):
        raise ValueError(f"Index out of range: {tuple(multi_index)}")
    a = grid.axis_index(axis)
    N, t = grid.N, grid.t_axis
    stepped = idx[a] + shift
    if a != t and not 0 <= stepped < N:
        alpha, kind = divmod(a, 2)
        if kind == 0:
            idx[t] = (idx[t] + shift * idx[2 * alpha + 1]) % N
        else:
            idx[t] = (idx[t] - shift * idx[2 * alpha]) % N
    idx[a] = stepped % N
    return tuple(idx)


def frame_coefficients(grid: NilmanifoldGrid, point_index: Sequence[int]) -> Dict[str, np.ndarray]:
    """Coefficients of X_a, Y_a and xi in the coordinate basis at a grid point."""
    coords = grid.coordinates_of(point_index)
    model = grid.model
    return {name: model.frame_vector(name, coords) for name in model.frame_names}


def contact_form(grid: NilmanifoldGrid, point_index: Sequence[int]) -> np.ndarray:
    return grid.model.contact_covector(grid.coordinates_of(point_index))


def levi_matrix(grid: NilmanifoldGrid, point_index: Sequence[int]) -> np.ndarray:
    return grid.model.levi_matrix(grid.coordinates_of(point_index))
