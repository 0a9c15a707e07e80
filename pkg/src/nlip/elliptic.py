"""Semilinear Dirichlet problem ``Lap u + q u^m = 0`` on the unit square.

The 5-point Laplacian acts on the interior nodes; boundary nodes are pinned
to the Dirichlet data.  The DtN map is exposed as an opaque
:class:`DtnOracle` so that reconstruction code can only evaluate
boundary-to-boundary.
"""

from __future__ import annotations

import functools
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import BoundaryData, Grid2D, ScalarField, normal_derivative
from .errors import AdmissibilityError, SolverFailureError, WellPosednessError

DEFAULT_DELTA = 1e-2
NEWTON_TOL = 1e-11
NEWTON_MAX_ITER = 25


@functools.lru_cache(maxsize=8)
def _laplacian(n: int) -> sp.csc_matrix:
    """5-point Laplacian on the (n-1)^2 interior nodes, boundary eliminated."""
    h = 1.0 / n
    m = n - 1
    T = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m))
    eye = sp.identity(m)
    return ((sp.kron(T, eye) + sp.kron(eye, T)) / h**2).tocsc()


@functools.lru_cache(maxsize=8)
def _laplacian_lu(n: int):
    return spla.splu(_laplacian(n))


def _boundary_lift(U: np.ndarray, h: float) -> np.ndarray:
    """Contribution of the pinned boundary values to the interior 5-point rows."""
    r = np.zeros((U.shape[0] - 2, U.shape[1] - 2), dtype=U.dtype)
    r[0, :] += U[0, 1:-1]
    r[-1, :] += U[-1, 1:-1]
    r[:, 0] += U[1:-1, 0]
    r[:, -1] += U[1:-1, -1]
    return r / h**2


def discrete_laplacian(U: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian of a full nodal array, evaluated at interior nodes."""
    return (U[2:, 1:-1] + U[:-2, 1:-1] + U[1:-1, 2:] + U[1:-1, :-2] - 4 * U[1:-1, 1:-1]) / h**2


def _with_boundary(grid: Grid2D, f: BoundaryData | None, dtype) -> np.ndarray:
    U = np.zeros(grid.shape, dtype=dtype)
    if f is not None:
        i, j = grid.boundary_index()
        U[i, j] = f.values if dtype is complex else f.values.real
    return U


def _solve_interior(lu, rhs: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(rhs):
        return lu.solve(np.ascontiguousarray(rhs.real.ravel())) + 1j * lu.solve(
            np.ascontiguousarray(rhs.imag.ravel())
        )
    return lu.solve(rhs.ravel())


def solve_poisson(grid: Grid2D, source: np.ndarray, f: BoundaryData | None = None) -> ScalarField:
    """Solve the discrete ``Lap u = source`` with Dirichlet data ``f`` (zero if omitted)."""
    source = np.asarray(source)
    complex_data = np.iscomplexobj(source) or (f is not None and not f.is_real)
    U = _with_boundary(grid, f, complex if complex_data else float)
    lu = _laplacian_lu(grid.n)
    rhs = source[1:-1, 1:-1] - _boundary_lift(U, grid.h)
    sol = _solve_interior(lu, rhs)
    if not np.all(np.isfinite(sol)):
        raise SolverFailureError("sparse LU produced non-finite values")
    U[1:-1, 1:-1] = sol.reshape(grid.n - 1, grid.n - 1)
    # one step of iterative refinement; divided differences amplify solve rounding
    r = source[1:-1, 1:-1] - discrete_laplacian(U, grid.h)
    U[1:-1, 1:-1] += _solve_interior(lu, r).reshape(grid.n - 1, grid.n - 1)
    return ScalarField(grid, U)


def solve_harmonic(f: BoundaryData, grid: Grid2D | None = None) -> ScalarField:
    grid = grid or f.grid
    return solve_poisson(grid, np.zeros(grid.shape), f)


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    q: ScalarField
    m: int = 2
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"nonlinearity power must be an integer >= 2, got {self.m}")
        if np.any(self.q.values.imag):
            raise ValueError("potential q must be real")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def grid(self) -> Grid2D:
        return self.q.grid


def _check_admissible(f_max: float, delta: float):
    if f_max > delta * (1 + 1e-12):
        raise AdmissibilityError(f"||f||_inf = {f_max:.3e} exceeds admissible bound {delta:.3e}")


def solve_semilinear(
    p: EllipticProblem,
    f: BoundaryData,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> ScalarField:
    """Newton iteration for the small solution, started from the harmonic extension.

    Iteration stops once the residual reaches the rounding floor, or once it
    is below ``tol`` and no longer contracting.  Polishing past ``tol`` keeps
    the noise floor of high-order divided differences low.
    """
    _check_admissible(f.max_abs(), p.delta)
    if not f.is_real:
        raise ValueError("the nonlinear solver accepts real boundary data only")
    grid = p.grid
    u = solve_harmonic(f).values.real.copy()
    q = p.q.values.real
    if not np.any(q):
        return ScalarField(grid, u)
    h, m = grid.h, p.m
    qi = q[1:-1, 1:-1]
    L = _laplacian(grid.n)
    lap_norm = 8.0 / h**2
    prev = np.inf
    for _ in range(max_iter):
        ui = u[1:-1, 1:-1]
        r = discrete_laplacian(u, h) + qi * ui**m
        rn = float(np.abs(r).max())
        floor = 16 * np.finfo(float).eps * (lap_norm * np.abs(u).max() + np.abs(qi * ui**m).max())
        if rn <= floor or (rn <= tol and rn > 0.5 * prev):
            break
        J = L + sp.diags((m * qi * ui ** (m - 1)).ravel())
        try:
            du = spla.splu(J.tocsc()).solve(-r.ravel())
        except RuntimeError as exc:
            raise SolverFailureError(f"Newton Jacobian factorization failed: {exc}") from exc
        u[1:-1, 1:-1] += du.reshape(ui.shape)
        prev = rn
    else:
        ui = u[1:-1, 1:-1]
        rn = float(np.abs(discrete_laplacian(u, h) + qi * ui**m).max())
    if not np.isfinite(rn) or rn > tol:
        raise WellPosednessError("Newton iteration did not converge", rn)
    return ScalarField(grid, u)


class DtnOracle:
    """Black-box boundary measurement map ``f -> Lambda(f)``.

    Only evaluation and a few descriptive attributes are exposed.  The call
    counter is guarded by a lock so concurrent evaluations count correctly.
    """

    def __init__(self, evaluator: Callable, delta: float, grid, name: str = "dtn"):
        self._evaluator = evaluator
        self.delta = float(delta)
        self.grid = grid
        self.name = name
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def __call__(self, f):
        _check_admissible(f.max_abs(), self.delta)
        with self._lock:
            self._calls += 1
        return self._evaluator(f)

    def __repr__(self):
        return f"DtnOracle({self.name}, delta={self.delta:g}, calls={self._calls})"


def make_dtn(p: EllipticProblem) -> DtnOracle:
    def evaluate(f: BoundaryData) -> BoundaryData:
        return normal_derivative(solve_semilinear(p, f))

    return DtnOracle(evaluate, p.delta, p.grid, name=f"elliptic(m={p.m})")


def linear_dtn(f: BoundaryData) -> BoundaryData:
    """DtN map of the Laplace equation (the q = 0 case)."""
    return normal_derivative(solve_harmonic(f))
