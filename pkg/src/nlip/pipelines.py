"""Named experiment pipelines.  Each writes CSV artifacts and returns invariant checks."""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import cgo, multilin, passive, wave, wave_recon
from .config import ExperimentConfig
from .discretize import BoundaryData, ScalarField, build_grid, write_field_csv
from .elliptic import EllipticProblem, linear_dtn, make_dtn
from .errors import ConfigError, NonsmoothWarning


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: str
    passed: bool


def _check(name: str, value: float, ok: bool, threshold: str) -> Check:
    return Check(name, float(value), threshold, bool(ok))


# --- analytic ground-truth families -------------------------------------------

def elliptic_family(name: str, amp: float) -> Callable:
    families = {
        "zero": lambda x, y: 0.0 * x,
        "const": lambda x, y: amp + 0.0 * x,
        "sinpi": lambda x, y: amp * np.sin(np.pi * x) * np.sin(np.pi * y),
        "sin2pi": lambda x, y: amp * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y),
        "sinx": lambda x, y: amp * np.sin(2 * np.pi * x) + 0.0 * y,
    }
    if name not in families:
        raise ConfigError(f"unknown potential family {name!r}; choose from {', '.join(families)}")
    return families[name]


def wave_family(name: str, amp: float, T: float) -> Callable:
    families = {
        "zero": lambda t, x: 0.0 * t * x,
        "const": lambda t, x: amp + 0.0 * t * x,
        "wave-smooth": lambda t, x: 1 + amp * np.sin(2 * np.pi * x) * np.sin(np.pi * t / T),
    }
    if name not in families:
        raise ConfigError(f"unknown wave potential family {name!r}; choose from {', '.join(families)}")
    return families[name]


def _write_rows(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


# --- identity suite -------------------------------------------------------------

def _ratios(values) -> list[float]:
    return [a / b for a, b in zip(values[:-1], values[1:])]


def run_identity_suite(cfg: ExperimentConfig, out: Path) -> list[Check]:
    p = cfg.params
    m = p["m"]
    qf = elliptic_family(p["q"], p["q_amp"])
    checks = []

    # integral identity: two-parameter refinement table
    rows = multilin.convergence_table(qf, m, p["eps_values"], p["n_values"])
    fixed = multilin.convergence_table(qf, m, [p["eps_fixed"]], p["n_values"])
    multilin.write_convergence_csv(rows + fixed, out / "convergence.csv")
    h_res = [r.identity_residual for r in fixed]
    for i, ratio in enumerate(_ratios(h_res)):
        checks.append(_check(f"identity_h_ratio_{p['n_values'][i]}", ratio, 3.5 <= ratio <= 4.5, "[3.5, 4.5]"))

    # epsilon part of the residual, measured against the exact hierarchy at the finest grid
    grid = build_grid(p["n_values"][-1])
    prob = EllipticProblem(ScalarField.from_function(grid, qf), m)
    oracle = make_dtn(prob)
    ones = BoundaryData(grid, np.ones(grid.num_boundary))
    exact = multilin.hierarchy_pairing(prob, [ones] * m, ones)
    eps_rows = []
    for e in p["eps_values"]:
        est = multilin.integral_pairing(oracle, [ones] * m, ones, multilin.EpsilonSchedule.uniform(e, m))
        eps_rows.append((e, grid.h, abs(est - exact)))
    _write_rows(out / "eps_component.csv", ["eps", "h", "eps_component"], eps_rows)
    for i, ratio in enumerate(_ratios([r[2] for r in eps_rows])):
        checks.append(_check(f"identity_eps_ratio_{i}", ratio, ratio >= 2.0, ">= 2"))

    # first linearization carries no information about q
    e1 = p["first_order_eps"]
    probe = BoundaryData.from_function(grid, lambda x, y: 0.5 * (x + np.cos(np.pi * y)))
    lin = linear_dtn(probe)
    potentials = {
        "zero": lambda x, y: 0 * x,
        "one": lambda x, y: 1 + 0 * x,
        "sinpi": elliptic_family("sinpi", 1.0),
        "sin2pi": elliptic_family("sin2pi", 3.0),
        "bump": lambda x, y: 5 * np.exp(-20 * ((x - 0.4) ** 2 + (y - 0.6) ** 2)),
    }
    first_rows = []
    for name, f in potentials.items():
        o = make_dtn(EllipticProblem(ScalarField.from_function(grid, f), m))
        d1 = multilin.mixed_derivative_dtn(o, [probe], multilin.EpsilonSchedule((e1,)))
        err = (d1 - lin).norm()
        first_rows.append((name, e1, err))
        checks.append(_check(f"first_linearization_{name}", err, err <= 10 * e1, f"<= {10 * e1:g}"))
    _write_rows(out / "first_linearization.csv", ["potential", "eps", "boundary_norm_difference"], first_rows)

    # null-vector algebra
    rng = np.random.default_rng(p["seed"])
    worst = 0.0
    for dim in (2, 3):
        for k in rng.uniform(-8 * np.pi, 8 * np.pi, size=(p["null_samples"], dim)):
            worst = max(worst, *cgo.null_vectors(k).residuals())
    checks.append(_check("null_vector_residual", worst, worst <= 1e-12, "<= 1e-12"))

    # d'Alembert transport and energy
    nx = p["wave_nx"]
    stg = wave.SpaceTimeGrid(nx, 2 * nx, 2.0)
    g = lambda s: np.where((s > 0.1) & (s < 0.2), np.sin(10 * np.pi * (s - 0.1)) ** 4, 0.0)
    u = wave.solve_wave(None, 2, wave.BoundaryTimeData.from_functions(stg, g), stg)
    J, I = np.meshgrid(np.arange(stg.nt + 1), np.arange(nx + 1), indexing="ij")
    before = stg.mesh()[0] < 1
    dal = float(np.abs(u.values - g((J - I) * stg.dx))[before].max())
    checks.append(_check("dalembert_max_error", dal, dal == 0.0, "== 0"))
    stg2 = wave.SpaceTimeGrid.with_courant(nx, 2.0, 0.95)
    u2 = wave.solve_wave(None, 2, wave.BoundaryTimeData.from_functions(stg2, g), stg2)
    E = wave.energy(u2)[stg2.t[:-1] > 0.2]
    drift = float((E.max() - E.min()) / E.max())
    checks.append(_check("energy_relative_drift", drift, drift <= 1e-10, "<= 1e-10"))

    # fourth linearization: residual must fall at least at first order
    res_rows = _fourth_linearization_rows(p["fourth_nx"], p["fourth_eps"])
    _write_rows(out / "fourth_linearization.csv", ["eps", "residual"], res_rows)
    for i, ratio in enumerate(_ratios([r[1] for r in res_rows])):
        checks.append(_check(f"fourth_linearization_ratio_{i}", ratio, ratio >= 1.7, ">= 1.7"))
    return checks


def fourth_linearization_setup(nx: int):
    stg = wave.SpaceTimeGrid(nx, nx, 1.0)
    a = wave.SpaceTimeField.from_function(stg, lambda t, x: 1 + 0 * t)

    def src(t0, x0):
        return wave.SpaceTimeField.from_function(
            stg, lambda t, x: 100 * np.exp(-((t - t0) ** 2 + (x - x0) ** 2) / (2 * 0.05**2))
        )

    return a, [src(0.2, 0.4), src(0.2, 0.6), src(0.25, 0.5), src(0.15, 0.5)]


def _fourth_linearization_rows(nx: int, eps_values) -> list[tuple[float, float]]:
    a, sources = fourth_linearization_setup(nx)
    return [
        (float(e), wave.fourth_linearization_check(a, sources, multilin.EpsilonSchedule.uniform(e, 4)))
        for e in eps_values
    ]


# --- elliptic reconstruction ------------------------------------------------------

def run_elliptic_recon(cfg: ExperimentConfig, out: Path) -> list[Check]:
    p = cfg.params
    grid = build_grid(p["n"])
    q = ScalarField.from_function(grid, elliptic_family(p["q"], p["q_amp"]))
    oracle = make_dtn(EllipticProblem(q, p["m"], p["delta"]))
    table = cgo.sample_fourier_table(oracle, p["m"], p["kmax"], multilin.EpsilonSchedule.uniform(p["eps"], p["m"]))
    table.to_csv(out / "fourier.csv")
    recon = table.symmetrized().synthesize(grid)
    target = cgo.truncated_series(q, p["kmax"])
    write_field_csv(q, out / "truth.csv")
    write_field_csv(target, out / "truncated.csv")
    write_field_csv(recon, out / "recon.csv")
    checks = [_check("conjugate_defect", table.conjugate_defect(), True, "reported")]
    if target.max_abs() == 0:
        err = recon.max_abs()
        checks.append(_check("zero_control_max_abs", err, err <= 1e-3, "<= 1e-3"))
    else:
        err = cgo.relative_l2_error(recon, target)
        checks.append(_check("relative_l2_vs_truncated", err, err <= p["tolerance"], f"<= {p['tolerance']:g}"))
    return checks


# --- wave pipelines ---------------------------------------------------------------

def run_wave_fig4(cfg: ExperimentConfig, out: Path) -> list[Check]:
    p = cfg.params
    stg = wave.SpaceTimeGrid.with_courant(p["nx"], p["T"])
    qf = wave_family(p["q"], p["q_amp"], p["T"])
    oracle = wave.wave_dtn(wave.SpaceTimeField.from_function(stg, qf), p["m"], stg)
    snr = p["snr_db"]
    snr = None if snr is not None and math.isinf(snr) else snr
    rec = wave_recon.reconstruct_q_diamond(
        oracle,
        wave_recon.DiamondRegion(stg),
        p["spacing"],
        snr_db=snr,
        seed=p["seed"],
        truth=qf,
        width=p["sigma_p"],
        sched=multilin.EpsilonSchedule.uniform(p["eps"], 2),
        m=p["m"],
        noise_stage=p["noise_stage"],
    )
    rec.write_triptych(out)
    err = rec.relative_l2()
    _write_rows(
        out / "summary.csv",
        ["points", "snr_db", "noise_stage", "relative_l2", "max_abs_error"],
        [(len(rec.recon), "none" if snr is None else repr(snr), p["noise_stage"], err, rec.max_abs_error())],
    )
    return [_check("relative_l2_on_diamond", err, err <= p["tolerance"], f"<= {p['tolerance']:g}")]


def run_wave_sweep(cfg: ExperimentConfig, out: Path) -> list[Check]:
    p = cfg.params
    stg = wave.SpaceTimeGrid.with_courant(p["nx"], p["T"])
    q1 = wave.SpaceTimeField.from_function(stg, wave_family(p["q"], p["q_amp"], p["T"]))
    q2 = wave.SpaceTimeField.from_function(stg, wave_family(p["q2"], p["q2_amp"], p["T"]))
    rows = wave_recon.stability_sweep(
        q1, q2, p["deltas"], p["spacing"], p["m"], p["sigma_p"],
        multilin.EpsilonSchedule.uniform(p["eps"], 2), p["s"], p["sigma_m"],
    )
    wave_recon.write_sweep_csv(rows, out / "sweep.csv")
    slope, sig = rows[0].fitted_slope, rows[0].sigma_theory
    return [
        _check("fitted_slope", slope, slope > 0, "> 0"),
        _check("sigma_theory", sig, True, "reported"),
    ]


# --- passive geometry -------------------------------------------------------------

def run_passive_cone(cfg: ExperimentConfig, out: Path) -> list[Check]:
    p = cfg.params
    amp = p["c_amp"]
    metric = passive.MetricField.from_function(p["M"], lambda a, b: 1 + amp * np.sin(2 * np.pi * a) + 0 * b)
    rng = np.random.default_rng(p["seed"])
    obs = passive.ObserverSet.random(metric, p["observers"], int(rng.integers(2**31)))
    X = rng.random((p["sources"], 2))
    fam = passive.build_distance_difference_family(metric, obs, X)
    metric.write_csv(out / "metric.csv")
    fam.write_csv(out / "family.csv")
    sep = passive.verify_injectivity(fam)
    checks = [_check("injectivity_separation", sep, sep > 0, "> 0")]

    full = 0
    rank_rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonsmoothWarning)
        for x in rng.random((p["rank_samples"], 2)):
            c = passive.obs_coordinates((0.0, x), (0, 1, 2), metric, obs)
            full += c.full_rank
            rank_rows.append((x[0], x[1], c.rank, c.singular_values[-1], int(c.nonsmooth)))
    _write_rows(out / "coordinates.csv", ["x1", "x2", "rank", "min_singular_value", "nonsmooth"], rank_rows)
    frac = full / p["rank_samples"]
    checks.append(_check("coordinates_full_rank_fraction", frac, frac >= p["rank_fraction"], f">= {p['rank_fraction']:g}"))

    cone_obs = passive.ObserverSet.random(metric, p["cone_observers"], int(rng.integers(2**31)))
    cone_rows = []
    for k, x in enumerate(rng.random((p["test_points"], 2))):
        fit = passive.fit_light_cone((0.0, x), cone_obs, metric)
        cone_rows.append((x[0], x[1], fit.c, fit.deviation, fit.used, *fit.spatial_block.ravel()[[0, 1, 3]]))
        checks.append(_check(f"cone_deviation_{k}", fit.deviation, fit.deviation <= p["cone_tolerance"], f"<= {p['cone_tolerance']:g}"))
    _write_rows(out / "cone.csv", ["x1", "x2", "c", "deviation", "used", "G11", "G12", "G22"], cone_rows)
    return checks


RUNNERS = {
    "identity-suite": run_identity_suite,
    "elliptic-recon": run_elliptic_recon,
    "wave-fig4": run_wave_fig4,
    "wave-sweep": run_wave_sweep,
    "passive-cone": run_passive_cone,
}


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out: Path | str | None = None) -> tuple[Path, list[Check]]:
    """Run a pipeline, write ``checks.csv`` and a ``manifest`` of ``path<TAB>sha256`` lines."""
    out = Path(out or cfg.output or f"runs/{cfg.pipeline}")
    out.mkdir(parents=True, exist_ok=True)
    checks = RUNNERS[cfg.pipeline](cfg, out)
    _write_rows(
        out / "checks.csv",
        ["check", "value", "threshold", "passed"],
        [(c.name, c.value, c.threshold, int(c.passed)) for c in checks],
    )
    files = sorted(f for f in out.iterdir() if f.is_file() and f.name != "manifest")
    manifest = out / "manifest"
    manifest.write_text("".join(f"{f.name}\t{sha256(f)}\n" for f in files))
    return manifest, checks
