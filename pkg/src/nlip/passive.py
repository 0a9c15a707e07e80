"""Passive observation geometry on a conformally flat 2-torus.

Distances come from shortest paths on a periodic 16-neighbour lattice graph
(all steps ``(a, b)`` with ``|a|, |b| <= 2`` and ``gcd(|a|, |b|) = 1``); the
edge weight is the Euclidean step length times the mean conformal factor of
its end nodes.  The spacetime is the product ``R x N`` with
``g = -dt^2 + c^2 |dx|^2``, so the observation time of a source ``(t, x)`` at
observer ``z`` is ``t + d(x, z)``.

Graph distances satisfy ``max_s <grad d, s_hat> = c`` over the unit step
directions ``s_hat`` rather than ``|grad d| = c``.  Light-cone covectors are
therefore rescaled to that dual-norm magnitude before fitting, which removes
the angular metrication bias of the stencil from the fitted cone.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import ConditioningError, DegenerateInputWarning, NonsmoothWarning

STENCIL_RADIUS = 2
FD_STEP = 2
NONSMOOTH_TOL = 0.1
RANK_TOL = 1e-6
CONDITION_LIMIT = 1e8


@functools.lru_cache(maxsize=None)
def stencil_steps(radius: int = STENCIL_RADIUS) -> tuple[tuple[int, int], ...]:
    r = range(-radius, radius + 1)
    return tuple((a, b) for a in r for b in r if (a, b) != (0, 0) and math.gcd(abs(a), abs(b)) == 1)


def _unit_steps(radius: int = STENCIL_RADIUS) -> np.ndarray:
    s = np.array(stencil_steps(radius), dtype=float)
    return s / np.linalg.norm(s, axis=1)[:, None]


def stencil_dual_norm(p: np.ndarray, radius: int = STENCIL_RADIUS) -> np.ndarray:
    """``max_s <p, s_hat>``: the local speed a graph-distance gradient encodes."""
    return np.max(np.asarray(p) @ _unit_steps(radius).T, axis=-1)


class MetricField:
    """Conformal factor ``c`` on an ``M x M`` periodic lattice over ``[0,1)^2``."""

    def __init__(self, c: np.ndarray, radius: int = STENCIL_RADIUS):
        c = np.array(c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"conformal factor must be a square array, got shape {c.shape}")
        if c.shape[0] < 2 * radius + 1:
            raise ValueError("lattice too small for the stencil")
        if not np.all(np.isfinite(c)) or c.min() <= 0:
            raise ValueError("conformal factor must be finite and positive")
        c.flags.writeable = False
        self.c = c
        self.radius = radius
        self._graph = None
        self._fields: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_function(cls, M: int, func: Callable, radius: int = STENCIL_RADIUS) -> MetricField:
        x = np.arange(M) / M
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return cls(np.broadcast_to(func(X1, X2), (M, M)), radius)

    @property
    def M(self) -> int:
        return self.c.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.c.min()), float(self.c.max())

    def node(self, point) -> tuple[int, int]:
        """Nearest lattice node of a point on the torus."""
        p = np.asarray(point, dtype=float)
        i, j = np.rint(p * self.M).astype(int) % self.M
        return int(i), int(j)

    def coords(self, node: tuple[int, int]) -> np.ndarray:
        return np.array(node, dtype=float) * self.h

    def graph(self) -> sp.csr_matrix:
        if self._graph is None:
            M, c = self.M, self.c
            idx = np.arange(M * M).reshape(M, M)
            rows, cols, w = [], [], []
            for a, b in stencil_steps(self.radius):
                nb = np.roll(idx, (-a, -b), axis=(0, 1))
                cn = np.roll(c, (-a, -b), axis=(0, 1))
                rows.append(idx.ravel())
                cols.append(nb.ravel())
                w.append((self.h * math.hypot(a, b) * 0.5 * (c + cn)).ravel())
            self._graph = sp.csr_matrix(
                (np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(M * M, M * M)
            )
        return self._graph

    def distance_field(self, node: tuple[int, int]) -> np.ndarray:
        key = node[0] * self.M + node[1]
        with self._lock:
            cached = self._fields.get(key)
        if cached is None:
            d = dijkstra(self.graph(), indices=key).reshape(self.M, self.M)
            d.flags.writeable = False
            with self._lock:
                cached = self._fields.setdefault(key, d)
        return cached

    def distance_fields(self, nodes: Sequence[tuple[int, int]]) -> list[np.ndarray]:
        missing = sorted({n[0] * self.M + n[1] for n in nodes} - set(self._fields))
        if missing:
            D = dijkstra(self.graph(), indices=missing).reshape(-1, self.M, self.M)
            with self._lock:
                for key, d in zip(missing, D):
                    d.flags.writeable = False
                    self._fields.setdefault(key, d)
        return [self.distance_field(n) for n in nodes]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        x = np.arange(self.M) * self.h
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "c"])
            for i, j in itertools.product(range(self.M), repeat=2):
                w.writerow([repr(float(x[i])), repr(float(x[j])), repr(float(self.c[i, j]))])
        return path

    @classmethod
    def read_csv(cls, path: str | Path) -> MetricField:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        M = int(round(math.sqrt(len(data))))
        return cls(data[:, 2].reshape(M, M))


def geodesic_distances(metric: MetricField, source) -> np.ndarray:
    """First-arrival distance from ``source`` (snapped to the lattice) to every node."""
    return metric.distance_field(metric.node(source))


@dataclass(frozen=True)
class ObserverSet:
    points: np.ndarray  # (K, 2) lattice-snapped coordinates

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 2)
        if len({tuple(r) for r in p}) != len(p):
            raise ValueError("observer points must be pairwise distinct")
        if len(p) < 3:
            warnings.warn(f"only {len(p)} observers; at least 3 are needed for injectivity", DegenerateInputWarning)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @classmethod
    def on_lattice(cls, metric: MetricField, points) -> ObserverSet:
        return cls(np.array([metric.coords(metric.node(p)) for p in np.asarray(points, float).reshape(-1, 2)]))

    @classmethod
    def random(cls, metric: MetricField, K: int, seed: int) -> ObserverSet:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(metric.M * metric.M, size=K, replace=False)
        return cls(np.column_stack([chosen // metric.M, chosen % metric.M]) * metric.h)

    @property
    def K(self) -> int:
        return len(self.points)

    def nodes(self, metric: MetricField) -> list[tuple[int, int]]:
        return [metric.node(p) for p in self.points]


@dataclass(frozen=True, eq=False)
class ObservationFamily:
    """Unlabelled records: ``D_x`` matrices over ``F x F`` or ``F_q`` vectors over the observers."""

    kind: str
    records: tuple[np.ndarray, ...]
    _source_keys: tuple = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "D":
                w.writerow(["record", "i", "j", "value"])
                for r, D in enumerate(self.records):
                    for i, j in itertools.product(range(D.shape[0]), repeat=2):
                        w.writerow([r, i, j, repr(float(D[i, j]))])
            else:
                w.writerow(["record", "a", "value"])
                for r, F in enumerate(self.records):
                    for a, v in enumerate(F):
                        w.writerow([r, a, repr(float(v))])
        return path


def _family(kind: str, records: list[np.ndarray], keys: list) -> ObservationFamily:
    # canonical order by content, so record position reveals nothing about the source
    order = sorted(range(len(records)), key=lambda r: records[r].tobytes())
    recs = []
    for r in order:
        rec = records[r].copy()
        rec.flags.writeable = False
        recs.append(rec)
    return ObservationFamily(kind, tuple(recs), tuple(keys[r] for r in order))


def build_distance_difference_family(metric: MetricField, F: ObserverSet, X) -> ObservationFamily:
    """``D_x(z_i, z_j) = d(z_i, x) - d(z_j, x)`` for each source ``x`` in ``X``."""
    fields = metric.distance_fields(F.nodes(metric))
    records, keys = [], []
    for x in np.asarray(X, dtype=float).reshape(-1, 2):
        node = metric.node(x)
        d = np.array([f[node] for f in fields])
        records.append(d[:, None] - d[None, :])
        keys.append(node)
    return _family("D", records, keys)


def verify_injectivity(family: ObservationFamily) -> float:
    """Smallest sup-norm distance between records from distinct sources."""
    keys = family._source_keys or tuple(range(len(family)))
    seen, dup = set(), False
    for k in keys:
        dup |= k in seen
        seen.add(k)
    if dup:
        warnings.warn("repeated source points; duplicate pairs are excluded", DegenerateInputWarning)
    best = math.inf
    for r, s in itertools.combinations(range(len(family)), 2):
        if keys[r] == keys[s]:
            continue
        best = min(best, float(np.abs(family.records[r] - family.records[s]).max()))
    return best


def observation_time(q, a: int, metric: MetricField, observers: ObserverSet) -> float:
    """``F_q(a) = t + d(x, z_a)`` for the spacetime source ``q = (t, x)``."""
    t, x = q
    return float(t) + float(metric.distance_field(metric.node(observers.points[a]))[metric.node(x)])


def observation_times(q, metric: MetricField, observers: ObserverSet) -> np.ndarray:
    t, x = q
    node = metric.node(x)
    return np.array([float(t) + f[node] for f in metric.distance_fields(observers.nodes(metric))])


def build_observation_time_family(metric: MetricField, observers: ObserverSet, sources) -> ObservationFamily:
    records, keys = [], []
    for t, x1, x2 in np.asarray(sources, dtype=float).reshape(-1, 3):
        records.append(observation_times((t, (x1, x2)), metric, observers))
        keys.append((t, metric.node((x1, x2))))
    return _family("F", records, keys)


def earliest_obs_set(q, observers: ObserverSet, metric: MetricField) -> frozenset[tuple[int, float]]:
    """First-arrival points ``(a, F_q(a))`` on the observer worldlines."""
    return frozenset(enumerate(observation_times(q, metric, observers).tolist()))


def read_back(obs_set: frozenset[tuple[int, float]], K: int) -> np.ndarray:
    """Recover ``F_q`` from its earliest observation set."""
    F = np.full(K, np.nan)
    for a, s in obs_set:
        F[a] = s
    if np.isnan(F).any():
        raise ValueError("observation set does not cover every observer")
    return F


def _gradient(d: np.ndarray, node: tuple[int, int], h: float, step: int = FD_STEP):
    """Central-difference gradient and a flag for disagreeing one-sided differences."""
    M = d.shape[0]
    i, j = node
    fwd = np.array([d[(i + step) % M, j] - d[i, j], d[i, (j + step) % M] - d[i, j]]) / (step * h)
    bwd = np.array([d[i, j] - d[(i - step) % M, j], d[i, j] - d[i, (j - step) % M]]) / (step * h)
    g = 0.5 * (fwd + bwd)
    scale = max(np.linalg.norm(g), 1e-300)
    smooth = np.abs(fwd - bwd).max() <= NONSMOOTH_TOL * scale
    return g, smooth


@dataclass(frozen=True)
class ObsCoordinates:
    values: np.ndarray
    jacobian: np.ndarray
    singular_values: np.ndarray
    rank: int
    nonsmooth: bool

    @property
    def full_rank(self) -> bool:
        return self.rank == len(self.values)


def obs_coordinates(q, a_tuple: Sequence[int], metric: MetricField, observers: ObserverSet) -> ObsCoordinates:
    """Observation-time coordinates ``(F_q(a_1), F_q(a_2), F_q(a_3))`` and their Jacobian rank."""
    t, x = q
    node = metric.node(x)
    fields = metric.distance_fields([metric.node(observers.points[a]) for a in a_tuple])
    rows, nonsmooth = [], False
    for f in fields:
        g, smooth = _gradient(f, node, metric.h)
        nonsmooth |= not smooth
        rows.append([1.0, *g])
    if nonsmooth:
        warnings.warn(f"source {x} is near a cut locus; Jacobian is unreliable", NonsmoothWarning)
    J = np.array(rows)
    s = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    vals = np.array([float(t) + f[node] for f in fields])
    return ObsCoordinates(vals, J, s, rank, nonsmooth)


@dataclass(frozen=True)
class ConeFit:
    G: np.ndarray
    deviation: float
    residuals: np.ndarray
    used: int
    condition: float
    c: float

    @property
    def spatial_block(self) -> np.ndarray:
        return self.G[1:, 1:]


def fit_light_cone(q, observers: ObserverSet, metric: MetricField, correct_stencil: bool = True) -> ConeFit:
    """Fit the quadric ``G(xi, xi) = 0`` with ``G_tt = -1`` to the covectors ``dF_q(a)``.

    Covectors whose one-sided differences disagree (cut locus) are dropped.
    The returned deviation is ``|G_xx - c^-2 I|_F / |c^-2 I|_F`` at the source.
    """
    if observers.K < 12:
        raise ValueError(f"cone fitting needs at least 12 observers, got {observers.K}")
    _, x = q
    node = metric.node(x)
    xs = []
    for f in metric.distance_fields(observers.nodes(metric)):
        g, smooth = _gradient(f, node, metric.h)
        if not smooth or f[node] == 0:
            continue
        if correct_stencil:
            g = g * (stencil_dual_norm(g, metric.radius) / np.linalg.norm(g))
        xs.append(g)
    if len(xs) < 5:
        raise ConditioningError(f"only {len(xs)} usable covectors; need at least 5")
    P = np.array(xs)
    # unknowns g1, g2, G11, G12, G22 in -1 + 2 g.p + p^T G p = 0
    A = np.column_stack([2 * P[:, 0], 2 * P[:, 1], P[:, 0] ** 2, 2 * P[:, 0] * P[:, 1], P[:, 1] ** 2])
    cond = float(np.linalg.cond(A))
    if not cond <= CONDITION_LIMIT:
        raise ConditioningError(f"cone fit is ill-conditioned (condition number {cond:.2e})")
    sol = np.linalg.lstsq(A, np.ones(len(P)), rcond=None)[0]
    G = np.array([[-1.0, sol[0], sol[1]], [sol[0], sol[2], sol[3]], [sol[1], sol[3], sol[4]]])
    cx = float(metric.c[node])
    target = np.eye(2) / cx**2
    dev = float(np.linalg.norm(G[1:, 1:] - target) / np.linalg.norm(target))
    xi = np.column_stack([np.ones(len(P)), P])
    res = np.einsum("ni,ij,nj->n", xi, G, xi)
    return ConeFit(G, dev, res, len(P), cond, cx)
