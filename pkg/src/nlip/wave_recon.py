"""Point reconstruction of a wave potential from second-linearization pulse interaction.

Two forward pulses ``f1, f2`` are sent through the oracle and the mixed second
divided difference gives the lateral normal derivative of ``w``, where
``box w = -2 q v1 v2`` and ``w`` vanishes on the lateral boundary.  Pairing it
with the lateral trace of a third free wave ``v3`` that has died out before
``t = T`` gives

    int int q v1 v2 v3 dx dt = 1/2 * int_Sigma (d_nu w) v3 dt.

All pulses are pure travelling Gaussians prescribed on both sides, so they
pass through the lateral boundary without reflection and ``v1 v2 v3``
concentrates at the crossing point.  Dividing by the same pairing for the
reference potential ``q = 1`` removes the overlap mass.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .elliptic import DtnOracle
from .errors import ConditioningError, RegionError
from .multilin import EpsilonSchedule, mixed_divided_difference, thread_count
from .noise import add_noise
from .wave import BoundaryTimeData, SpaceTimeField, SpaceTimeGrid, wave_dtn

DEFAULT_WIDTH = 0.05
DEFAULT_WAVE_EPS = 1e-2
MARGIN_WIDTHS = 6.0
NOISE_STAGES = ("raw", "linearized")


def margin_for(width: float) -> float:
    return MARGIN_WIDTHS * width


@dataclass(frozen=True, eq=False)
class DiamondRegion:
    grid: SpaceTimeGrid
    margin: float = 0.0
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t, x = self.grid.mesh()
        mask = self._inside(t, x)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    def _inside(self, t, x):
        d = np.minimum(x, 1 - x)
        return (t > d + self.margin) & (self.grid.T - t > d + self.margin)

    def contains(self, t: float, x: float) -> bool:
        return bool(0 <= x <= 1 and self._inside(np.float64(t), np.float64(x)))

    def scan_points(self, spacing: float) -> list[tuple[int, int, float, float]]:
        """Lattice points ``(a, b, t, x)`` of the given spacing inside the region, snapped to grid nodes."""
        g = self.grid
        st = max(1, int(round(spacing / g.dt)))
        sx = max(1, int(round(spacing / g.dx)))
        pts = []
        for a, j in enumerate(range(0, g.nt + 1, st)):
            for b, i in enumerate(range(0, g.nx + 1, sx)):
                if self.mask[j, i]:
                    pts.append((a, b, float(g.t[j]), float(g.x[i])))
        return pts


def _gauss(width: float) -> Callable:
    return lambda s: np.exp(-0.5 * (s / width) ** 2)


@dataclass(frozen=True)
class PulseTriple:
    """Three travelling Gaussian pulses crossing at ``(t0, x0)``.

    ``directions[j]`` is ``"R"`` (enters at ``x = 0``, profile ``g(t - x - s)``)
    or ``"L"`` (enters at ``x = 1``, profile ``g(t + x - 1 - s)``); ``centers[j]``
    is the time the pulse peak passes its entry side.  The third pulse is the
    test wave.
    """

    t0: float
    x0: float
    width: float
    directions: tuple[str, str, str]
    centers: tuple[float, float, float]

    def profile(self, j: int) -> Callable:
        g, s = _gauss(self.width), self.centers[j]
        if self.directions[j] == "R":
            return lambda t, x: g(t - x - s)
        return lambda t, x: g(t + x - 1 - s)

    def control(self, j: int, stg: SpaceTimeGrid) -> BoundaryTimeData:
        v, t = self.profile(j), stg.t
        return BoundaryTimeData(stg, np.vstack([v(t, 0.0), v(t, 1.0)]))

    def controls(self, stg: SpaceTimeGrid) -> tuple[BoundaryTimeData, ...]:
        return tuple(self.control(j, stg) for j in range(3))

    def field(self, j: int, stg: SpaceTimeGrid) -> SpaceTimeField:
        return SpaceTimeField.from_function(stg, self.profile(j))

    def analytic_mass(self) -> float:
        """Closed-form ``int v1 v2 v3``: two pulses share a characteristic, one crosses it."""
        return 0.5 * self.width * math.sqrt(math.pi) * self.width * math.sqrt(2 * math.pi)


def _center(direction: str, t0: float, x0: float) -> float:
    return t0 - x0 if direction == "R" else t0 + x0 - 1


_LAYOUTS = (("R", "L", "R"), ("R", "L", "L"), ("R", "R", "L"), ("L", "L", "R"))


def design_pulses(t0: float, x0: float, width: float, T: float, margin: float | None = None) -> PulseTriple:
    """Choose pulse directions and centres so all three cross at ``(t0, x0)``.

    Forward pulses must be negligible at ``t = 0`` and the test pulse must be
    gone by ``t = T``.  The preferred layout sends two right-going pulses and
    one left-going one; near the corners of the diamond the layout switches
    so both constraints hold.
    """
    margin = margin_for(width) if margin is None else margin
    d = min(x0, 1 - x0)
    if not (0 <= x0 <= 1 and t0 > d + margin and T - t0 > d + margin):
        raise RegionError(f"target ({t0:.4g}, {x0:.4g}) is outside the diamond with margin {margin:.3g}")

    def ok(layout):
        if len(set(layout)) == 1:
            return False
        for direction in layout[:2]:
            if _center(direction, t0, x0) <= margin:
                return False
        # the test pulse leaves through the far side one time unit after entering
        return _center(layout[2], t0, x0) + 1 + margin < T

    for layout in _LAYOUTS:
        if ok(layout):
            centers = tuple(_center(dr, t0, x0) for dr in layout)
            return PulseTriple(t0, x0, width, layout, centers)
    raise RegionError(f"no admissible pulse layout for ({t0:.4g}, {x0:.4g})")  # pragma: no cover


def _noisy(evaluate: Callable, snr: float | None, seed) -> Callable:
    """Wrap an oracle so every nonzero output carries its own seeded noise draw."""
    if snr is None:
        return evaluate
    seeds = iter(np.random.SeedSequence(seed).spawn(64))

    def run(f):
        out = evaluate(f)
        s = next(seeds)  # consumed in the fixed subset order, so draws are reproducible
        return out if not np.any(out.values) else add_noise(out, snr, s)

    return run


def interaction_pairing(
    oracle: DtnOracle,
    pulses: PulseTriple,
    sched: EpsilonSchedule,
    snr: float | None = None,
    seed=None,
    noise_stage: str = "raw",
) -> float:
    """``1/2 * int_Sigma D^2 Lambda[f1, f2] * f3``, optionally from noisy measurements."""
    if noise_stage not in NOISE_STAGES:
        raise ValueError(f"noise stage must be one of {NOISE_STAGES}")
    stg = oracle.grid
    f1, f2, f3 = pulses.controls(stg)
    sched.check_admissible([f1, f2], oracle.delta)
    evaluate = _noisy(oracle, snr, seed) if noise_stage == "raw" else oracle
    # evaluation is sequential so the noise stream order is fixed
    d2 = mixed_divided_difference(
        evaluate, [f1, f2], sched.eps, lambda v: BoundaryTimeData(stg, v), threads=1
    )
    d2 = BoundaryTimeData(stg, d2)
    if noise_stage == "linearized" and snr is not None:
        d2 = add_noise(d2, snr, seed)
    return 0.5 * d2.pair(f3)


class PointSampler:
    """Point estimates of ``q`` with a cached calibration against the ``q = 1`` reference."""

    def __init__(
        self,
        oracle: DtnOracle,
        m: int = 2,
        width: float = DEFAULT_WIDTH,
        sched: EpsilonSchedule | None = None,
        reference: DtnOracle | None = None,
        min_mass_fraction: float = 0.1,
    ):
        self.oracle = oracle
        self.grid: SpaceTimeGrid = oracle.grid
        self.width = width
        self.sched = sched or EpsilonSchedule.uniform(DEFAULT_WAVE_EPS, 2)
        ones = SpaceTimeField(self.grid, np.ones(self.grid.shape))
        self.reference = reference or wave_dtn(ones, m, self.grid, oracle.delta, name="reference q=1")
        self.min_mass_fraction = min_mass_fraction
        self._calibration: dict[tuple[float, float], float] = {}

    def pulses(self, t0: float, x0: float) -> PulseTriple:
        return design_pulses(t0, x0, self.width, self.grid.T)

    def calibration(self, t0: float, x0: float) -> float:
        key = (t0, x0)
        if key not in self._calibration:
            p = self.pulses(t0, x0)
            mass = interaction_pairing(self.reference, p, self.sched)
            if not abs(mass) >= self.min_mass_fraction * p.analytic_mass():
                raise ConditioningError(
                    f"calibration mass {mass:.3e} at ({t0:.4g}, {x0:.4g}) is below "
                    f"{self.min_mass_fraction:g} of the overlap {p.analytic_mass():.3e}"
                )
            self._calibration[key] = mass
        return self._calibration[key]

    def sample(self, t0: float, x0: float, snr: float | None = None, seed=None, noise_stage: str = "raw") -> float:
        p = self.pulses(t0, x0)
        return interaction_pairing(self.oracle, p, self.sched, snr, seed, noise_stage) / self.calibration(t0, x0)


def point_sample_q(
    oracle: DtnOracle,
    t0: float,
    x0: float,
    sched: EpsilonSchedule | None = None,
    width: float = DEFAULT_WIDTH,
    m: int = 2,
    sampler: PointSampler | None = None,
) -> float:
    sampler = sampler or PointSampler(oracle, m, width, sched)
    return sampler.sample(t0, x0)


@dataclass
class DiamondReconstruction:
    points: np.ndarray  # (N, 2) columns t, x
    lattice: list[tuple[int, int]]
    recon: np.ndarray
    truth: np.ndarray | None
    snr_db: float | None
    seed: int | None

    @property
    def error(self) -> np.ndarray:
        return self.recon - self.truth

    def relative_l2(self) -> float:
        """Discrete L2 error over the (uniform) scan lattice, relative to the truth."""
        return float(np.linalg.norm(self.error) / np.linalg.norm(self.truth))

    def max_abs_error(self) -> float:
        return float(np.abs(self.error).max())

    def write_triptych(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        paths = []
        for name, vals in (("truth", self.truth), ("recon", self.recon), ("error", self.error)):
            path = out_dir / f"{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "x", "value"])
                for (t, x), v in zip(self.points, vals):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])
            paths.append(path)
        return paths


def reconstruct_q_diamond(
    oracle: DtnOracle,
    region: DiamondRegion,
    spacing: float,
    snr_db: float | None = None,
    seed: int | None = None,
    truth: Callable | None = None,
    width: float = DEFAULT_WIDTH,
    sched: EpsilonSchedule | None = None,
    m: int = 2,
    noise_stage: str = "raw",
    sampler: PointSampler | None = None,
    threads: int | None = None,
) -> DiamondReconstruction:
    """Scan point estimates over the region; noise streams are seeded per lattice point."""
    if snr_db is not None and seed is None:
        raise ValueError("a seed is required whenever snr_db is set")
    sampler = sampler or PointSampler(oracle, m, width, sched)
    inner = DiamondRegion(region.grid, max(region.margin, margin_for(width)))
    pts = inner.scan_points(spacing)
    if not pts:
        raise RegionError("no scan points inside the diamond; reduce the pulse width or spacing")
    ncols = int(round(1 / spacing)) + 2

    def job(p):
        a, b, t, x = p
        s = None if snr_db is None else seed ^ (a * ncols + b)
        return sampler.sample(t, x, snr_db, s, noise_stage)

    threads = thread_count() if threads is None else threads
    # calibrations are filled first so worker threads only read the cache
    for _, _, t, x in pts:
        sampler.calibration(t, x)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(job, pts))
    else:
        vals = [job(p) for p in pts]
    points = np.array([(t, x) for _, _, t, x in pts])
    tv = None if truth is None else np.asarray(truth(points[:, 0], points[:, 1]), dtype=float)
    return DiamondReconstruction(points, [(a, b) for a, b, _, _ in pts], np.array(vals), tv, snr_db, seed)


def sigma_exponent(s: float, m: int, n: int = 1) -> float:
    """Stability exponent ``8(m-1) / (2m(m-1)(8s - n + 13) + 2m - 1)``."""
    return 8 * (m - 1) / (2 * m * (m - 1) * (8 * s - n + 13) + 2 * m - 1)


class BlendedOracle(DtnOracle):
    """``Lambda_1 + delta (Lambda_2 - Lambda_1)``: data at controlled distance from ``Lambda_1``."""

    def __init__(self, a: DtnOracle, b: DtnOracle, delta: float):
        def evaluate(f):
            la, lb = a(f), b(f)
            return BoundaryTimeData(la.grid, la.values + delta * (lb.values - la.values))

        super().__init__(evaluate, a.delta, a.grid, name=f"blend({delta:g})")


@dataclass(frozen=True)
class SweepRow:
    delta: float
    error: float
    fitted_slope: float
    sigma_theory: float


def node_values(q: SpaceTimeField) -> Callable:
    """Look up a field at grid nodes given their coordinates."""
    g = q.grid

    def lookup(t, x):
        j = np.rint(np.asarray(t) / g.dt).astype(int)
        i = np.rint(np.asarray(x) / g.dx).astype(int)
        return q.values[j, i]

    return lookup


def stability_sweep(
    q1: SpaceTimeField,
    q2: SpaceTimeField,
    deltas: Sequence[float],
    spacing: float,
    m: int = 2,
    width: float = DEFAULT_WIDTH,
    sched: EpsilonSchedule | None = None,
    s: float = 1.0,
    sigma_m: int = 4,
) -> list[SweepRow]:
    """Reconstruction error ``max_W |recon(Lambda_delta) - q1|`` against the data perturbation ``delta``.

    ``Lambda_delta`` moves the data of ``q1`` towards that of ``q2``; as
    ``delta -> 0`` the error falls to the discretization floor.  The fitted
    log-log slope is reported next to the theoretical exponent
    ``sigma(s, sigma_m)`` in one space dimension; no match to ``C delta^sigma``
    is claimed.
    """
    stg = q1.grid
    o1, o2 = wave_dtn(q1, m, stg), wave_dtn(q2, m, stg)
    region = DiamondRegion(stg)
    truth = node_values(q1)
    reference = PointSampler(o1, m, width, sched).reference
    calibration: dict = {}
    errors = []
    for d in deltas:
        sampler = PointSampler(BlendedOracle(o1, o2, d), m, width, sched, reference=reference)
        sampler._calibration = calibration  # geometry-only, shared across the sweep
        rec = reconstruct_q_diamond(sampler.oracle, region, spacing, truth=truth, width=width, m=m, sampler=sampler)
        errors.append(rec.max_abs_error())
    d = np.asarray(deltas, dtype=float)
    e = np.asarray(errors)
    pos = (d > 0) & (e > 0)
    slope = float(np.polyfit(np.log(d[pos]), np.log(e[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    sig = sigma_exponent(s, sigma_m, 1)
    return [SweepRow(float(di), float(ei), slope, sig) for di, ei in zip(d, e)]


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "error", "fitted_slope", "sigma_theory"])
        for r in rows:
            w.writerow([repr(r.delta), repr(r.error), repr(r.fitted_slope), repr(r.sigma_theory)])
    return path
