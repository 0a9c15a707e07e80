"""Explicit leapfrog solver for ``u_tt - u_xx + q(t,x) u^m = F`` on ``[0,T] x [0,1]``.

Lateral Dirichlet controls are pinned at ``x = 0`` and ``x = 1``; the initial
state is at rest.  At Courant number one the update is written as

    u[j+1, i] = u[j, i-1] + (u[j, i+1] - u[j-1, i]) - dt^2 (q u^m - F)

so a right-going wave ``g(t - x)`` is transported bit-exactly (the bracket
is an exact zero on such data).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .elliptic import DtnOracle
from .errors import AdmissibilityError, InstabilityError, ShapeMismatchError
from .multilin import EpsilonSchedule, mixed_divided_difference

DEFAULT_WAVE_DELTA = 1.0
BLOWUP_FACTOR = 1e3


@dataclass(frozen=True)
class SpaceTimeGrid:
    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 4:
            raise ValueError(f"need nx >= 4, got {self.nx}")
        if int(self.nt) != self.nt or self.nt < 2:
            raise ValueError(f"need nt >= 2, got {self.nt}")
        if not self.T > 0:
            raise ValueError("final time T must be positive")
        if self.courant > 1 + 1e-12:
            raise ValueError(f"Courant number {self.courant:.6f} exceeds 1")

    @classmethod
    def with_courant(cls, nx: int, T: float, courant: float = 1.0) -> SpaceTimeGrid:
        return cls(nx, int(math.ceil(T * nx / courant - 1e-9)), T)

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def courant(self) -> float:
        return self.T * self.nx / self.nt

    @property
    def exact_transport(self) -> bool:
        return self.nt == round(self.T * self.nx) and abs(self.courant - 1) < 1e-12

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.nx + 1)

    @property
    def t(self) -> np.ndarray:
        # at unit Courant number reuse the x lattice so t - x is exact
        if self.exact_transport:
            return np.arange(self.nt + 1) * self.dx
        return np.arange(self.nt + 1) * self.dt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.dx

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.t, self.x, indexing="ij")


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ShapeMismatchError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("space-time field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, func: Callable) -> SpaceTimeField:
        t, x = grid.mesh()
        return cls(grid, np.broadcast_to(func(t, x), grid.shape))

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> SpaceTimeField:
        return cls(grid, np.zeros(grid.shape))

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def integral(self) -> float:
        """Trapezoid quadrature over ``[0,T] x [0,1]``."""
        g = self.grid
        return float(np.trapezoid(np.trapezoid(self.values, dx=g.dx, axis=1), dx=g.dt))


def _time_weights(grid: SpaceTimeGrid) -> np.ndarray:
    w = np.full(grid.nt + 1, grid.dt)
    w[0] = w[-1] = grid.dt / 2
    return w


@dataclass(frozen=True, eq=False)
class BoundaryTimeData:
    """Values on the lateral boundary; row 0 is ``x = 0``, row 1 is ``x = 1``."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (2, self.grid.nt + 1):
            raise ShapeMismatchError(f"lateral data shape {v.shape}, expected {(2, self.grid.nt + 1)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("lateral data contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_functions(cls, grid: SpaceTimeGrid, left: Callable, right: Callable | None = None):
        t = grid.t
        r = np.zeros_like(t) if right is None else right(t)
        return cls(grid, np.vstack([np.broadcast_to(left(t), t.shape), np.broadcast_to(r, t.shape)]))

    @property
    def weights(self) -> np.ndarray:
        return _time_weights(self.grid)

    @property
    def is_real(self) -> bool:
        return True

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def scaled(self, c: float) -> BoundaryTimeData:
        return BoundaryTimeData(self.grid, self.values * c)

    def __add__(self, other: BoundaryTimeData) -> BoundaryTimeData:
        return BoundaryTimeData(self.grid, self.values + other.values)

    def __sub__(self, other: BoundaryTimeData) -> BoundaryTimeData:
        return BoundaryTimeData(self.grid, self.values - other.values)

    def pair(self, other: BoundaryTimeData) -> float:
        """Quadrature of ``a * b`` over both lateral sides."""
        return float(np.sum(self.values * other.values * self.weights))


def _field_values(q, grid: SpaceTimeGrid) -> np.ndarray | None:
    if q is None:
        return None
    v = q.values if isinstance(q, SpaceTimeField) else np.broadcast_to(np.asarray(q, float), grid.shape)
    return None if not np.any(v) else v


def solve_wave(
    q: SpaceTimeField | None,
    m: int,
    f: BoundaryTimeData | None,
    stg: SpaceTimeGrid,
    source: SpaceTimeField | None = None,
    delta: float | None = None,
    blowup: float = BLOWUP_FACTOR,
) -> SpaceTimeField:
    """Leapfrog solution with lateral control ``f`` and interior source ``source``.

    Raises :class:`InstabilityError` once ``|u|`` exceeds ``blowup`` times the
    data scale ``max(|f|, |F| T^2)``, which signals that the data left the
    small-solution regime.
    """
    if int(m) != m or m < 2:
        raise ValueError(f"nonlinearity power must be an integer >= 2, got {m}")
    if f is not None and delta is not None and f.max_abs() > delta * (1 + 1e-12):
        raise AdmissibilityError(f"||f||_inf = {f.max_abs():.3e} exceeds admissible bound {delta:.3e}")
    qv = _field_values(q, stg)
    Fv = _field_values(source, stg)
    nt, nx = stg.nt, stg.nx
    dt2 = stg.dt**2
    lam2 = stg.courant**2
    U = np.zeros(stg.shape)
    scale = max(f.max_abs() if f is not None else 0.0, (np.abs(Fv).max() if Fv is not None else 0.0) * stg.T**2)
    if scale == 0:
        return SpaceTimeField(stg, U)
    cap = blowup * scale
    exact = stg.exact_transport
    if Fv is not None:
        U[1, 1:-1] = 0.5 * dt2 * Fv[0, 1:-1]
    for j in range(1, nt + 1):
        if f is not None:
            U[j, 0], U[j, -1] = f.values[0, j], f.values[1, j]
        if j == nt:
            break
        u, up = U[j], U[j - 1]
        forcing = None
        if qv is not None:
            forcing = qv[j, 1:-1] * u[1:-1] ** m
        if Fv is not None:
            forcing = -Fv[j, 1:-1] if forcing is None else forcing - Fv[j, 1:-1]
        if exact:
            nxt = u[:-2] + (u[2:] - up[1:-1])
        else:
            nxt = 2 * u[1:-1] - up[1:-1] + lam2 * (u[2:] - 2 * u[1:-1] + u[:-2])
        if forcing is not None:
            nxt = nxt - dt2 * forcing
        U[j + 1, 1:-1] = nxt
        if qv is not None and not np.abs(nxt).max() <= cap:
            raise InstabilityError(f"solution exceeded {cap:.3e} at step {j + 1} of {nt}")
    return SpaceTimeField(stg, U)


def lateral_normal_derivative(u: SpaceTimeField) -> BoundaryTimeData:
    """Outward derivative at ``x = 0`` and ``x = 1`` by the one-sided 3-point stencil."""
    U, dx = u.values, u.grid.dx
    left = (3 * U[:, 0] - 4 * U[:, 1] + U[:, 2]) / (2 * dx)
    right = (3 * U[:, -1] - 4 * U[:, -2] + U[:, -3]) / (2 * dx)
    return BoundaryTimeData(u.grid, np.vstack([left, right]))


def wave_dtn(
    q: SpaceTimeField | None,
    m: int,
    stg: SpaceTimeGrid,
    delta: float = DEFAULT_WAVE_DELTA,
    name: str | None = None,
) -> DtnOracle:
    def evaluate(f: BoundaryTimeData) -> BoundaryTimeData:
        return lateral_normal_derivative(solve_wave(q, m, f, stg))

    return DtnOracle(evaluate, delta, stg, name=name or f"wave(m={m})")


def discrete_box(w: SpaceTimeField) -> np.ndarray:
    """Discrete d'Alembertian at interior nodes ``1 <= j < nt``, ``1 <= i < nx``."""
    W, g = w.values, w.grid
    wtt = (W[2:, 1:-1] - 2 * W[1:-1, 1:-1] + W[:-2, 1:-1]) / g.dt**2
    wxx = (W[1:-1, 2:] - 2 * W[1:-1, 1:-1] + W[1:-1, :-2]) / g.dx**2
    return wtt - wxx


def fourth_linearization_check(
    a: SpaceTimeField,
    sources: Sequence[SpaceTimeField],
    sched: EpsilonSchedule,
    threads: int | None = None,
) -> float:
    """Max-norm residual of ``box w + 24 a u1 u2 u3 u4`` for the model ``box u + a u^4 = F``.

    ``w`` is the fourth mixed divided difference of the source-to-solution
    map and ``u_j`` are the linear responses to the individual sources.
    """
    if len(sources) != 4 or sched.k != 4:
        raise ValueError("the fourth linearization needs four sources and four epsilons")
    stg = a.grid

    def evaluate(F: SpaceTimeField) -> SpaceTimeField:
        return solve_wave(a, 4, None, stg, source=F)

    w = mixed_divided_difference(
        evaluate, sources, sched.eps, lambda v: SpaceTimeField(stg, v), threads
    )
    lin = [solve_wave(None, 4, None, stg, source=F).values for F in sources]
    prod = lin[0] * lin[1] * lin[2] * lin[3]
    res = discrete_box(SpaceTimeField(stg, w)) + 24 * a.values[1:-1, 1:-1] * prod[1:-1, 1:-1]
    return float(np.abs(res).max())


def energy(u: SpaceTimeField) -> np.ndarray:
    """Discrete energy ``E^j`` conserved by the leapfrog scheme when the boundary is at rest."""
    U, g = u.values, u.grid
    ut = (U[1:] - U[:-1]) / g.dt
    ux = (U[:, 1:] - U[:, :-1]) / g.dx
    return (np.sum(ut**2, axis=1) + np.sum(ux[:-1] * ux[1:], axis=1)) * g.dx


# --- CSV ---------------------------------------------------------------------

def write_spacetime_csv(u: SpaceTimeField, path: str | Path) -> Path:
    path = Path(path)
    t, x = u.grid.mesh()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for a, b, v in zip(t.ravel(), x.ravel(), u.values.ravel()):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
    return path


def read_spacetime_csv(path: str | Path, T: float | None = None) -> SpaceTimeField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    nx = len(np.unique(data[:, 1])) - 1
    nt = len(data) // (nx + 1) - 1
    grid = SpaceTimeGrid(nx, nt, float(data[:, 0].max()) if T is None else T)
    return SpaceTimeField(grid, data[:, 2].reshape(grid.shape))


def write_control_csv(f: BoundaryTimeData, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "t", "value"])
        for side, row in zip((0, 1), f.values):
            for t, v in zip(f.grid.t, row):
                w.writerow([side, repr(float(t)), repr(float(v))])
    return path


def read_control_csv(path: str | Path, grid: SpaceTimeGrid) -> BoundaryTimeData:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return BoundaryTimeData(grid, data[:, 2].reshape(2, grid.nt + 1))
