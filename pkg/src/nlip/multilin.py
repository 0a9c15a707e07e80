"""Higher-order linearizations of a DtN oracle by mixed divided differences.

The k-th mixed divided difference at zero is

    D[f_1..f_k] = (1/prod eps_j) * sum_{S} (-1)^(k-|S|) Lambda(sum_{j in S} eps_j f_j)

over all subsets S of the k slots.  Complex probes are split into real and
imaginary parts and the result is assembled by multilinearity, because the
nonlinear forward solver only takes real data.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .discretize import (
    BoundaryData,
    ScalarField,
    boundary_integral,
    build_grid,
    normal_derivative,
    volume_integral,
)
from .elliptic import DtnOracle, EllipticProblem, make_dtn, solve_harmonic, solve_poisson
from .errors import ScheduleError

DEFAULT_EPS = 1e-3
THREADS_ENV = "NLIP_THREADS"


def thread_count() -> int:
    """Worker threads for independent oracle calls, read from ``NLIP_THREADS``."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EpsilonSchedule:
    eps: tuple[float, ...]
    refinement: float = 0.5

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if not eps:
            raise ScheduleError("schedule needs at least one slot")
        if any(not (e > 0 and math.isfinite(e)) for e in eps):
            raise ScheduleError(f"epsilons must be positive and finite, got {eps}")
        if not 0 < self.refinement < 1:
            raise ScheduleError("refinement factor must lie in (0, 1)")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def uniform(cls, eps: float, k: int, refinement: float = 0.5) -> EpsilonSchedule:
        return cls((eps,) * k, refinement)

    @property
    def k(self) -> int:
        return len(self.eps)

    def halved(self) -> EpsilonSchedule:
        """Next schedule in a refinement study (every slot scaled by ``refinement``)."""
        return EpsilonSchedule(tuple(e * self.refinement for e in self.eps), self.refinement)

    def check_admissible(self, probes: Sequence, delta: float):
        if len(probes) != self.k:
            raise ScheduleError(f"{len(probes)} probes but {self.k} epsilon slots")
        for e, f in zip(self.eps, probes):
            bound = delta / (self.k * f.max_abs()) if f.max_abs() > 0 else math.inf
            if e > bound * (1 + 1e-12):
                raise ScheduleError(f"eps={e:.3e} exceeds admissible {bound:.3e} for a probe of norm {f.max_abs():.3e}")


def _slot_key(e: float, f) -> tuple:
    v = np.asarray(f.values)
    return (e, v.real.tobytes(), v.imag.tobytes())


def _real_parts(f) -> list[tuple[complex, np.ndarray]]:
    v = np.asarray(f.values)
    parts = [(1.0, v.real.copy())]
    if np.any(v.imag):
        parts.append((1j, v.imag.copy()))
    return parts


def mixed_divided_difference(
    evaluate: Callable,
    probes: Sequence,
    eps: Sequence[float],
    make: Callable[[np.ndarray], object],
    threads: int | None = None,
) -> np.ndarray:
    """Generic mixed divided difference of ``evaluate`` returning a raw value array.

    ``make`` wraps a real value array into the data type ``evaluate`` accepts.
    Slots are put in a canonical order first, so any permutation of
    ``(probe, eps)`` pairs gives a bit-identical result.  The ``3**k``
    distinct real inputs (per real/imaginary combination) are evaluated
    once each.
    """
    order = sorted(range(len(probes)), key=lambda j: _slot_key(eps[j], probes[j]))
    probes = [probes[j] for j in order]
    eps = [float(eps[j]) for j in order]
    k = len(probes)
    parts = [_real_parts(f) for f in probes]
    size = parts[0][0][1].shape

    # enumerate every distinct input once, keyed by (slot, part) selections
    jobs: dict[tuple, np.ndarray] = {}
    plan = []
    for combo in itertools.product(*[range(len(p)) for p in parts]):
        coef = np.prod([parts[j][c][0] for j, c in enumerate(combo)])
        terms = []
        for S in itertools.product((0, 1), repeat=k):
            key = tuple((j, combo[j]) for j in range(k) if S[j])
            if key not in jobs:
                g = np.zeros(size)
                for j, c in key:
                    g = g + eps[j] * parts[j][c][1]
                jobs[key] = g
            terms.append(((-1) ** (k - sum(S)), key))
        plan.append((coef, terms))

    keys = list(jobs)
    threads = thread_count() if threads is None else threads

    def run(key):
        return np.asarray(evaluate(make(jobs[key])).values)

    if threads > 1 and len(keys) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = dict(zip(keys, pool.map(run, keys)))
    else:
        results = {key: run(key) for key in keys}

    total = None
    for coef, terms in plan:
        acc = None
        for sign, key in terms:
            acc = sign * results[key] if acc is None else acc + sign * results[key]
        acc = coef * acc
        total = acc if total is None else total + acc
    return total / np.prod(eps)


def mixed_derivative_dtn(
    oracle: DtnOracle,
    probes: Sequence[BoundaryData],
    sched: EpsilonSchedule,
    threads: int | None = None,
) -> BoundaryData:
    """k-th mixed divided difference of ``oracle`` at zero in the directions ``probes``."""
    if not probes:
        raise ScheduleError("at least one probe is required")
    sched.check_admissible(probes, oracle.delta)
    grid = probes[0].grid
    vals = mixed_divided_difference(
        oracle, probes, sched.eps, lambda g: BoundaryData(grid, g), threads
    )
    return BoundaryData(grid, vals)


def _ordered_product(fields: Sequence[ScalarField]) -> np.ndarray:
    fields = sorted(fields, key=lambda u: (u.values.real.tobytes(), u.values.imag.tobytes()))
    out = np.ones(fields[0].grid.shape, dtype=complex)
    for u in fields:
        out = out * u.values
    return out


def linearized_hierarchy(
    p: EllipticProblem, probes: Sequence[BoundaryData]
) -> tuple[list[ScalarField], ScalarField]:
    """Exact m-th linearization: harmonic ``v_j`` and ``w`` with ``Lap w = -m! q prod v_j``, ``w = 0`` on the boundary."""
    if len(probes) != p.m:
        raise ValueError(f"need exactly m={p.m} probes, got {len(probes)}")
    vs = [solve_harmonic(f, p.grid) for f in probes]
    source = -math.factorial(p.m) * p.q.values * _ordered_product(vs)
    return vs, solve_poisson(p.grid, source)


def integral_pairing(
    oracle: DtnOracle,
    probes: Sequence[BoundaryData],
    pair: BoundaryData,
    sched: EpsilonSchedule,
    threads: int | None = None,
) -> complex:
    """Boundary estimate of ``int q v_1 ... v_m v_{m+1}``."""
    m = len(probes)
    d = mixed_derivative_dtn(oracle, probes, sched, threads)
    return -boundary_integral(d, pair) / math.factorial(m)


def hierarchy_pairing(p: EllipticProblem, probes: Sequence[BoundaryData], pair: BoundaryData) -> complex:
    """Same pairing computed from the exact hierarchy (no finite epsilon)."""
    _, w = linearized_hierarchy(p, probes)
    return -boundary_integral(normal_derivative(w), pair) / math.factorial(p.m)


def interior_integral(p: EllipticProblem, probes: Sequence[BoundaryData], pair: BoundaryData) -> complex:
    """Volume-quadrature value of ``int q v_1 ... v_m v_{m+1}``."""
    vs = [solve_harmonic(f, p.grid) for f in list(probes) + [pair]]
    return volume_integral(ScalarField(p.grid, p.q.values * _ordered_product(vs)))


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    h: float
    identity_residual: float


def convergence_table(
    q_func: Callable,
    m: int,
    eps_values: Sequence[float],
    n_values: Sequence[int],
    delta: float | None = None,
) -> list[ConvergenceRow]:
    """Identity residual on a two-parameter (eps, n) refinement grid, probes all ones."""
    rows = []
    for n in n_values:
        grid = build_grid(n)
        q = ScalarField.from_function(grid, q_func)
        p = EllipticProblem(q, m) if delta is None else EllipticProblem(q, m, delta)
        oracle = make_dtn(p)
        ones = BoundaryData(grid, np.ones(grid.num_boundary))
        exact = interior_integral(p, [ones] * m, ones)
        for e in eps_values:
            est = integral_pairing(oracle, [ones] * m, ones, EpsilonSchedule.uniform(e, m))
            rows.append(ConvergenceRow(float(e), grid.h, abs(est - exact)))
    return rows


def write_convergence_csv(rows: Sequence[ConvergenceRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "h", "identity_residual"])
        for r in rows:
            w.writerow([repr(r.eps), repr(r.h), repr(r.identity_residual)])
    return path
