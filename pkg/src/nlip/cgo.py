"""Reconstruction of an elliptic potential from its DtN oracle with exponential probes.

Two harmonic exponentials ``e^{xi_1.x}`` and ``e^{xi_2.x}`` with null vectors
``xi_1 + xi_2 = i k`` multiply to the Fourier mode ``e^{ik.x}``, so pairing the
second linearization against them samples ``qhat(k)``.

On the grid the continuum exponentials are only harmonic up to O(h^2 |xi|^4),
and that defect is amplified by the exponential growth of the probes.  The
sampler therefore uses discrete null vectors: the nodal exponential
``exp(alpha*i + beta*j)`` is annihilated by the 5-point Laplacian exactly when
``cosh(alpha) + cosh(beta) = 2``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretize import BoundaryData, Grid2D, ScalarField, volume_integral
from .elliptic import DtnOracle
from .errors import FrequencyCapError, SolverFailureError
from .multilin import DEFAULT_EPS, EpsilonSchedule, integral_pairing, thread_count

DEFAULT_CAP = 8 * math.pi  # admits the lattice 2*pi*{-4..4}^2


@dataclass(frozen=True)
class NullVectorPair:
    k: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    trivial: bool = False
    h: float | None = None  # set for discrete null vectors

    def residuals(self) -> tuple[float, float, float]:
        """Nullity defects of ``xi1``, ``xi2`` and the sum defect ``|xi1 + xi2 - ik|``."""
        s = float(np.abs(self.xi1 + self.xi2 - 1j * self.k).max())
        if self.h is None:
            return abs(np.dot(self.xi1, self.xi1)), abs(np.dot(self.xi2, self.xi2)), s
        h = self.h
        r = [abs(np.sum(np.cosh(h * xi)) - len(xi)) for xi in (self.xi1, self.xi2)]
        return r[0], r[1], s


def null_vectors(k) -> NullVectorPair:
    """Closed-form complex null vectors with ``xi1 + xi2 = i k`` in two or three dimensions."""
    k = np.asarray(k, dtype=float)
    if k.shape not in ((2,), (3,)):
        raise ValueError(f"k must have length 2 or 3, got shape {k.shape}")
    if not np.any(k):
        z = np.zeros(k.shape, dtype=complex)
        return NullVectorPair(k, z, z.copy(), trivial=True)
    if k.size == 2:
        a = (1j * k[0] + k[1]) / 2
        b = (1j * k[0] - k[1]) / 2
        return NullVectorPair(k, np.array([a, 1j * a]), np.array([b, -1j * b]))
    # 3D: zeta real, orthogonal to k, |zeta| = |k|/2
    e = np.zeros(3)
    e[int(np.argmin(np.abs(k)))] = 1.0
    zeta = np.cross(np.cross(k, e), k)
    zeta *= 0.5 * np.linalg.norm(k) / np.linalg.norm(zeta)
    return NullVectorPair(k, 0.5j * k + zeta, 0.5j * k - zeta)


def discrete_null_vectors(k, h: float, tol: float = 1e-14, max_iter: int = 50) -> NullVectorPair:
    """Null vectors of the 5-point Laplacian on a grid of width ``h`` (two dimensions).

    Solves ``cosh(h xi_j1) + cosh(h xi_j2) = 2`` for ``j = 1, 2`` with
    ``xi_1 + xi_2 = i k`` by Newton's method, started at the continuum pair.
    """
    pair = null_vectors(k)
    if pair.trivial:
        return NullVectorPair(pair.k, pair.xi1, pair.xi2, trivial=True, h=h)
    if pair.k.size != 2:
        raise ValueError("discrete null vectors are defined for the 2D grid only")
    hk = 1j * h * pair.k
    z = h * pair.xi1  # unknowns (alpha1, beta1)
    for _ in range(max_iter):
        w = hk - z
        F = np.array([np.cosh(z[0]) + np.cosh(z[1]) - 2, np.cosh(w[0]) + np.cosh(w[1]) - 2])
        if np.abs(F).max() <= tol:
            break
        J = np.array([[np.sinh(z[0]), np.sinh(z[1])], [-np.sinh(w[0]), -np.sinh(w[1])]])
        z = z + np.linalg.solve(J, -F)
    else:
        raise SolverFailureError(f"discrete null vectors did not converge for k={pair.k}")
    return NullVectorPair(pair.k, z / h, 1j * pair.k - z / h, h=h)


def log_growth(xi) -> float:
    """Range of ``log|e^{xi.x}|`` over the unit square."""
    return float(np.sum(np.abs(np.asarray(xi).real)))


def cgo_probe(xi, grid: Grid2D, cap: float = DEFAULT_CAP) -> BoundaryData:
    """Boundary trace of ``x -> exp(xi . x)``."""
    xi = np.asarray(xi, dtype=complex)
    if log_growth(xi) > cap * (1 + 1e-12):
        raise FrequencyCapError(f"probe growth {log_growth(xi):.3f} exceeds cap {cap:.3f}")
    return BoundaryData.from_function(grid, lambda x, y: np.exp(xi[0] * x + xi[1] * y))


def _unit(f: BoundaryData) -> tuple[BoundaryData, float]:
    s = f.max_abs()
    return f.scaled(1.0 / s), s


def fourier_sample(
    oracle: DtnOracle,
    k,
    m: int,
    sched: EpsilonSchedule | None = None,
    cap: float = DEFAULT_CAP,
    discrete: bool = True,
    threads: int | None = None,
) -> complex:
    """Estimate ``qhat(k) = int q e^{ik.x}`` from the m-th linearization of ``oracle``.

    The two exponential probes are normalized to unit max norm before being
    fed to the oracle; the pairing is rescaled afterwards (it is
    multilinear).
    """
    grid = oracle.grid
    sched = sched or EpsilonSchedule.uniform(DEFAULT_EPS, m)
    pair = discrete_null_vectors(k, grid.h) if discrete else null_vectors(k)
    v1, s1 = _unit(cgo_probe(pair.xi1, grid, cap))
    v2, s2 = _unit(cgo_probe(pair.xi2, grid, cap))
    ones = BoundaryData(grid, np.ones(grid.num_boundary))
    probes = [v1, v2] + [ones] * (m - 2)
    return integral_pairing(oracle, probes, ones, sched, threads) * s1 * s2


@dataclass
class FourierTable:
    K: int
    qhat: np.ndarray = field(repr=False)  # indexed [a + K, b + K] for k = 2*pi*(a, b)

    def __post_init__(self):
        self.qhat = np.asarray(self.qhat, dtype=complex)
        if self.qhat.shape != (2 * self.K + 1, 2 * self.K + 1):
            raise ValueError(f"table shape {self.qhat.shape} does not match K={self.K}")

    def lattice(self) -> list[tuple[int, int]]:
        r = range(-self.K, self.K + 1)
        return [(a, b) for a in r for b in r]

    def __getitem__(self, ab: tuple[int, int]) -> complex:
        a, b = ab
        return complex(self.qhat[a + self.K, b + self.K])

    def conjugate_defect(self) -> float:
        """``max |qhat(-k) - conj(qhat(k))|``; zero for an exactly real potential."""
        return float(np.abs(self.qhat[::-1, ::-1] - self.qhat.conj()).max())

    def symmetrized(self) -> FourierTable:
        return FourierTable(self.K, 0.5 * (self.qhat + self.qhat[::-1, ::-1].conj()))

    def synthesize(self, grid: Grid2D) -> ScalarField:
        """Real part of ``sum_k qhat(k) e^{-ik.x}`` on ``grid``."""
        X, Y = grid.mesh()
        out = np.zeros(grid.shape, dtype=complex)
        for a, b in self.lattice():
            out += self[a, b] * np.exp(-2j * np.pi * (a * X + b * Y))
        return ScalarField(grid, out.real)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k1", "k2", "re", "im"])
            for a, b in self.lattice():
                v = self[a, b]
                w.writerow([repr(2 * np.pi * a), repr(2 * np.pi * b), repr(v.real), repr(v.imag)])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> FourierTable:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        idx = np.rint(data[:, :2] / (2 * np.pi)).astype(int)
        K = int(np.abs(idx).max())
        table = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        table[idx[:, 0] + K, idx[:, 1] + K] = data[:, 2] + 1j * data[:, 3]
        return cls(K, table)


def check_cutoff(K: int, cap: float = DEFAULT_CAP):
    if K < 0:
        raise ValueError("cutoff K must be non-negative")
    worst = null_vectors(2 * np.pi * np.array([K, K], dtype=float))
    if log_growth(worst.xi1) > cap * (1 + 1e-12):
        raise FrequencyCapError(f"cutoff K={K} exceeds the probe growth cap {cap:.3f}")


def sample_fourier_table(
    oracle: DtnOracle,
    m: int,
    K: int,
    sched: EpsilonSchedule | None = None,
    cap: float = DEFAULT_CAP,
    threads: int | None = None,
) -> FourierTable:
    """Sample ``qhat`` on ``2*pi*{-K..K}^2``; lattice points run in parallel, merged by key."""
    check_cutoff(K, cap)
    r = range(-K, K + 1)
    keys = [(a, b) for a in r for b in r]
    threads = thread_count() if threads is None else threads

    def job(ab):
        return fourier_sample(oracle, 2 * np.pi * np.array(ab, dtype=float), m, sched, cap, threads=1)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = dict(zip(keys, pool.map(job, keys)))
    else:
        values = {ab: job(ab) for ab in keys}
    table = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
    for (a, b), v in values.items():
        table[a + K, b + K] = v
    return FourierTable(K, table)


def reconstruct_q(
    oracle: DtnOracle,
    m: int,
    K: int,
    grid: Grid2D | None = None,
    sched: EpsilonSchedule | None = None,
    cap: float = DEFAULT_CAP,
) -> ScalarField:
    table = sample_fourier_table(oracle, m, K, sched, cap)
    return table.symmetrized().synthesize(grid or oracle.grid)


def fourier_table_of(q: ScalarField, K: int) -> FourierTable:
    """Quadrature Fourier coefficients of a known field (ground-truth side)."""
    X, Y = q.grid.mesh()
    table = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
    for a in range(-K, K + 1):
        for b in range(-K, K + 1):
            mode = np.exp(2j * np.pi * (a * X + b * Y))
            table[a + K, b + K] = volume_integral(ScalarField(q.grid, q.values * mode))
    return FourierTable(K, table)


def truncated_series(q: ScalarField, K: int) -> ScalarField:
    """The K-truncated Fourier series of ``q``, the honest target of :func:`reconstruct_q`."""
    return fourier_table_of(q, K).synthesize(q.grid)


def relative_l2_error(approx: ScalarField, truth: ScalarField) -> float:
    num = volume_integral(ScalarField(truth.grid, np.abs(approx.values - truth.values) ** 2)).real
    den = volume_integral(ScalarField(truth.grid, np.abs(truth.values) ** 2)).real
    return math.sqrt(num / den)
