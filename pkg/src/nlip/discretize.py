"""Uniform grids on the unit square, fields, boundary traces and quadrature.

Node ``(i, j)`` sits at ``(x, y) = (i*h, j*h)``; field values are stored as an
``(n+1, n+1)`` array indexed ``[i, j]``.

Boundary nodes are walked counterclockwise from the corner ``(0, 0)``:
bottom edge left to right, right edge upwards, top edge right to left and the
left edge downwards.  Every boundary node, corners included, carries the
quadrature weight ``h`` (the trapezoid rule on the closed polygon).  At a
corner the outward normal derivative is the mean of the two one-sided face
derivatives, which is what the per-face trapezoid rule would produce.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidResolutionError, ShapeMismatchError

MIN_CELLS = 4


@dataclass(frozen=True)
class Grid2D:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_CELLS:
            raise InvalidResolutionError(f"grid needs n >= {MIN_CELLS} cells per side, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 1, self.n + 1)

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def num_boundary(self) -> int:
        return 4 * self.n

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    def boundary_index(self) -> tuple[np.ndarray, np.ndarray]:
        return _boundary_index(self.n)

    def boundary_points(self) -> np.ndarray:
        i, j = self.boundary_index()
        return np.column_stack([i * self.h, j * self.h])

    def arc_length(self) -> np.ndarray:
        return np.arange(self.num_boundary) * self.h


@functools.lru_cache(maxsize=None)
def _boundary_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(n)
    i = np.concatenate([r, np.full(n, n), n - r, np.zeros(n, dtype=int)])
    j = np.concatenate([np.zeros(n, dtype=int), r, np.full(n, n), n - r])
    i.flags.writeable = False
    j.flags.writeable = False
    return i, j


def build_grid(n: int) -> Grid2D:
    return Grid2D(n)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=complex)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.shape:
            raise ShapeMismatchError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> ScalarField:
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(func(X, Y), grid.shape))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def __add__(self, other: ScalarField) -> ScalarField:
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: ScalarField) -> ScalarField:
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self.grid, other.grid)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * other)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class BoundaryData:
    grid: Grid2D
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.num_boundary,):
            raise ShapeMismatchError(
                f"boundary data has {vals.shape} values, grid needs {self.grid.num_boundary}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("boundary data contains non-finite values")
        w = self.weights
        if w is None:
            w = np.full(self.grid.num_boundary, self.grid.h)
        w = np.array(w, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> BoundaryData:
        p = grid.boundary_points()
        return cls(grid, np.broadcast_to(func(p[:, 0], p[:, 1]), (grid.num_boundary,)))

    @property
    def is_real(self) -> bool:
        return not np.any(self.values.imag)

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def norm(self) -> float:
        """Weighted L2 norm on the boundary."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * self.weights)))

    def scaled(self, c) -> BoundaryData:
        return BoundaryData(self.grid, self.values * c, self.weights)

    def __add__(self, other: BoundaryData) -> BoundaryData:
        _check_same_grid(self.grid, other.grid)
        return BoundaryData(self.grid, self.values + other.values, self.weights)

    def __sub__(self, other: BoundaryData) -> BoundaryData:
        _check_same_grid(self.grid, other.grid)
        return BoundaryData(self.grid, self.values - other.values, self.weights)

    def __neg__(self) -> BoundaryData:
        return BoundaryData(self.grid, -self.values, self.weights)


def _check_same_grid(a: Grid2D, b: Grid2D):
    if a != b:
        raise ShapeMismatchError(f"grid mismatch: n={a.n} vs n={b.n}")


def boundary_trace(u: ScalarField) -> BoundaryData:
    i, j = u.grid.boundary_index()
    return BoundaryData(u.grid, u.values[i, j])


def _face_derivatives(U: np.ndarray, h: float) -> dict[str, np.ndarray]:
    # second-order one-sided stencils, already oriented along the outward normal
    return {
        "left": (3 * U[0, :] - 4 * U[1, :] + U[2, :]) / (2 * h),
        "right": (3 * U[-1, :] - 4 * U[-2, :] + U[-3, :]) / (2 * h),
        "bottom": (3 * U[:, 0] - 4 * U[:, 1] + U[:, 2]) / (2 * h),
        "top": (3 * U[:, -1] - 4 * U[:, -2] + U[:, -3]) / (2 * h),
    }


def normal_derivative(u: ScalarField) -> BoundaryData:
    n = u.grid.n
    d = _face_derivatives(u.values, u.grid.h)
    r = np.arange(n)
    out = np.concatenate([
        d["bottom"][r],
        d["right"][r],
        d["top"][n - r],
        d["left"][n - r],
    ])
    # corners (0,0), (1,0), (1,1), (0,1)
    out[0] = 0.5 * (d["bottom"][0] + d["left"][0])
    out[n] = 0.5 * (d["right"][0] + d["bottom"][n])
    out[2 * n] = 0.5 * (d["top"][n] + d["right"][n])
    out[3 * n] = 0.5 * (d["left"][n] + d["top"][0])
    return BoundaryData(u.grid, out)


def boundary_integral(a: BoundaryData, b: BoundaryData) -> complex:
    """Bilinear (unconjugated) boundary pairing ``sum a*b*weight``."""
    _check_same_grid(a.grid, b.grid)
    return complex(np.sum(a.values * b.values * a.weights))


@functools.lru_cache(maxsize=None)
def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n + 1, 1.0 / n)
    w[0] = w[-1] = 0.5 / n
    return np.outer(w, w)


def volume_integral(u: ScalarField) -> complex:
    return complex(np.sum(u.values * _trapezoid_weights(u.grid.n)))


# --- CSV ---------------------------------------------------------------------

def write_field_csv(u: ScalarField, path: str | Path) -> Path:
    path = Path(path)
    X, Y = u.grid.mesh()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "re", "im"])
        for x, y, v in zip(X.ravel(), Y.ravel(), u.values.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v.real)), repr(float(v.imag))])
    return path


def read_field_csv(path: str | Path) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(round(np.sqrt(len(data)))) - 1
    grid = Grid2D(n)
    vals = (data[:, 2] + 1j * data[:, 3]).reshape(grid.shape)
    return ScalarField(grid, vals)


def write_boundary_csv(b: BoundaryData, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "re", "im", "weight"])
        for s, v, wt in zip(b.grid.arc_length(), b.values, b.weights):
            w.writerow([repr(float(s)), repr(float(v.real)), repr(float(v.imag)), repr(float(wt))])
    return path


def read_boundary_csv(path: str | Path) -> BoundaryData:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = Grid2D(len(data) // 4)
    return BoundaryData(grid, data[:, 1] + 1j * data[:, 2], data[:, 3])
