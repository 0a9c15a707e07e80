import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlip.errors import ConditioningError, RegionError
from nlip.multilin import EpsilonSchedule
from nlip.noise import snr_db
from nlip.wave import BoundaryTimeData, SpaceTimeField, SpaceTimeGrid, solve_wave, wave_dtn
from nlip.wave_recon import (
    DiamondRegion,
    PointSampler,
    _noisy,
    design_pulses,
    interaction_pairing,
    margin_for,
    node_values,
    point_sample_q,
    reconstruct_q_diamond,
    sigma_exponent,
    stability_sweep,
    write_sweep_csv,
)

from oracles import gaussian_triple_overlap, stability_exponent


def smooth_q(T):
    return lambda t, x: 1 + 0.5 * np.sin(2 * np.pi * x) * np.sin(np.pi * t / T)


def oracle_for(nx, T, qf):
    stg = SpaceTimeGrid.with_courant(nx, T)
    return wave_dtn(SpaceTimeField.from_function(stg, qf), 2, stg)


@given(st.floats(0, 0.3), st.sampled_from([2.0, 3.0, 4.0]))
def test_diamond_mask_invariant(margin, T):
    stg = SpaceTimeGrid.with_courant(32, T)
    region = DiamondRegion(stg, margin)
    t, x = stg.mesh()
    d = np.minimum(x, 1 - x)
    inside = t[region.mask], d[region.mask]
    assert np.all(inside[0] > inside[1]) and np.all(T - inside[0] > inside[1])
    for _, _, tp, xp in region.scan_points(0.25):
        assert region.contains(tp, xp)


def test_pulses_for_central_target():
    T = 4.0
    p = design_pulses(T / 2, 0.5, 0.05, T)
    assert p.directions == ("R", "L", "R")
    assert p.centers == pytest.approx((T / 2 - 0.5,) * 3)


@given(st.floats(0.35, 0.65), st.floats(1.3, 2.7))
def test_pulses_cross_at_target(x0, t0):
    p = design_pulses(t0, x0, 0.05, 4.0)
    for j in range(3):
        assert p.profile(j)(t0, x0) == pytest.approx(1.0, abs=1e-12)


def test_product_mass_matches_gaussian_overlap():
    stg = SpaceTimeGrid.with_courant(256, 4.0)
    p = design_pulses(2.0, 0.5, 0.05, 4.0)
    prod = p.field(0, stg).values * p.field(1, stg).values * p.field(2, stg).values
    mass = SpaceTimeField(stg, prod).integral()
    exact = gaussian_triple_overlap(0.05)
    assert abs(mass - exact) <= 0.05 * exact
    assert p.analytic_mass() == pytest.approx(exact, rel=1e-9)


def test_disjoint_characteristics_have_no_product():
    stg = SpaceTimeGrid.with_courant(256, 4.0)
    p = design_pulses(2.0, 0.5, 0.05, 4.0)
    shifted = type(p)(p.t0, p.x0, p.width, p.directions, (p.centers[0], p.centers[1], p.centers[2] + 0.6))
    prod = p.field(0, stg).values * p.field(1, stg).values * shifted.field(2, stg).values
    assert np.abs(prod).max() <= 1e-15


def test_pulses_are_transparent_travelling_waves():
    stg = SpaceTimeGrid.with_courant(128, 4.0)
    p = design_pulses(2.0, 0.4, 0.05, 4.0)
    for j in range(3):
        u = solve_wave(None, 2, p.control(j, stg), stg)
        assert np.abs(u.values - p.field(j, stg).values).max() <= 1e-12


def test_target_outside_diamond_rejected():
    with pytest.raises(RegionError):
        design_pulses(0.2, 0.5, 0.05, 4.0)
    with pytest.raises(RegionError):
        design_pulses(3.9, 0.5, 0.05, 4.0)


def test_sample_of_zero_potential():
    oracle = oracle_for(128, 2.0, lambda t, x: 0 * t)
    assert abs(point_sample_q(oracle, 1.0, 0.5)) <= 1e-10


def test_sample_of_unit_potential_is_one():
    oracle = oracle_for(128, 2.0, lambda t, x: 1 + 0 * t)
    sampler = PointSampler(oracle, reference=oracle)
    assert sampler.sample(1.0, 0.45) == 1.0


def test_point_samples_of_smooth_potential():
    T = 4.0
    qf = smooth_q(T)
    oracle = oracle_for(256, T, qf)
    sampler = PointSampler(oracle)
    for t0, x0 in ((2.0, 0.5), (2.0, 0.25), (1.6, 0.7), (2.5, 0.4), (1.2, 0.5)):
        assert abs(sampler.sample(t0, x0) - qf(t0, x0)) <= 0.1


def test_sample_is_local():
    T = 3.0
    qf = smooth_q(T)
    far = lambda t, x: qf(t, x) + 0.8 * np.exp(-((t - 0.9) ** 2 + (x - 0.5) ** 2) / (2 * 0.05**2))
    near_target = (1.8, 0.5)
    a = point_sample_q(oracle_for(256, T, qf), *near_target)
    b = point_sample_q(oracle_for(256, T, far), *near_target)
    assert abs(a - b) <= 0.01 * abs(a)
    # a change at the target itself is picked up
    close = lambda t, x: qf(t, x) + 0.8 * np.exp(-((t - 1.8) ** 2 + (x - 0.5) ** 2) / (2 * 0.05**2))
    c = point_sample_q(oracle_for(256, T, close), *near_target)
    assert abs(c - a) > 0.1


def test_degenerate_calibration_reported():
    oracle = oracle_for(128, 2.0, lambda t, x: 1 + 0 * t)
    with pytest.raises(ConditioningError):
        PointSampler(oracle, min_mass_fraction=10.0).sample(1.0, 0.5)


def test_raw_noise_hits_requested_snr_per_output():
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    clean = wave_dtn(SpaceTimeField.from_function(stg, lambda t, x: 1 + 0 * t), 2, stg)
    noisy = _noisy(clean, 12.0, 5)
    f = BoundaryTimeData.from_functions(stg, lambda t: 0.01 * np.exp(-((t - 0.5) / 0.05) ** 2))
    for _ in range(3):
        out = noisy(f)
        ref = clean(f)
        assert abs(snr_db(ref.values, out.values - ref.values) - 12.0) <= 0.1


def test_noise_stage_validation():
    oracle = oracle_for(64, 2.0, lambda t, x: 1 + 0 * t)
    with pytest.raises(ValueError):
        interaction_pairing(oracle, design_pulses(1.0, 0.5, 0.05, 2.0), EpsilonSchedule.uniform(1e-2, 2),
                            noise_stage="fields")


def test_diamond_reconstruction_of_zero_potential():
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    oracle = wave_dtn(SpaceTimeField.zeros(stg), 2, stg)
    rec = reconstruct_q_diamond(oracle, DiamondRegion(stg), 0.1, truth=lambda t, x: 0 * t, width=0.08)
    assert len(rec.recon) > 0
    assert np.abs(rec.recon).max() <= 1e-10


def test_seeded_noise_is_reproducible(tmp_path):
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    qf = smooth_q(2.0)
    oracle = wave_dtn(SpaceTimeField.from_function(stg, qf), 2, stg)
    region = DiamondRegion(stg)
    run = lambda seed: reconstruct_q_diamond(oracle, region, 0.1, 12.0, seed, qf, width=0.08)
    a, b, c = run(1), run(1), run(2)
    np.testing.assert_array_equal(a.recon, b.recon)
    assert not np.array_equal(a.recon, c.recon)
    paths = a.write_triptych(tmp_path)
    assert [p.name for p in paths] == ["truth.csv", "recon.csv", "error.csv"]
    assert paths[0].read_text().splitlines()[0] == "t,x,value"


def test_threaded_scan_matches_sequential():
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    qf = smooth_q(2.0)
    oracle = wave_dtn(SpaceTimeField.from_function(stg, qf), 2, stg)
    region = DiamondRegion(stg)
    a = reconstruct_q_diamond(oracle, region, 0.1, 12.0, 3, qf, width=0.08, threads=1)
    b = reconstruct_q_diamond(oracle, region, 0.1, 12.0, 3, qf, width=0.08, threads=3)
    np.testing.assert_array_equal(a.recon, b.recon)


def test_seed_required_with_noise():
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    oracle = wave_dtn(SpaceTimeField.zeros(stg), 2, stg)
    with pytest.raises(ValueError):
        reconstruct_q_diamond(oracle, DiamondRegion(stg), 0.1, snr_db=12.0, width=0.08)


def test_error_non_increasing_under_joint_refinement():
    T = 3.0
    qf = smooth_q(T)
    oracle = oracle_for(256, T, qf)
    region = DiamondRegion(oracle.grid, margin_for(0.1))
    errs = [
        reconstruct_q_diamond(oracle, region, spacing, truth=qf, width=width).relative_l2()
        for width, spacing in ((0.1, 0.2), (0.07, 0.14), (0.05, 0.1))
    ]
    assert all(b <= a for a, b in zip(errs[:-1], errs[1:])), errs


def test_sigma_exponent_reference_value():
    assert sigma_exponent(1, 4, 1) == pytest.approx(24 / 487, rel=1e-15)
    assert sigma_exponent(1, 4, 1) == pytest.approx(0.0493, abs=5e-5)


@given(st.floats(0, 5), st.integers(2, 8), st.integers(1, 3))
def test_sigma_exponent_formula(s, m, n):
    assert sigma_exponent(s, m, n) == pytest.approx(stability_exponent(s, m, n), rel=1e-14)


def test_sweep_with_equal_potentials_sits_at_floor(tmp_path):
    stg = SpaceTimeGrid.with_courant(64, 2.0)
    q = SpaceTimeField.from_function(stg, smooth_q(2.0))
    rows = stability_sweep(q, q, [1e-2, 1e-1, 1.0], spacing=0.2, width=0.08)
    assert len({r.error for r in rows}) == 1
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    assert path.read_text().splitlines()[0] == "delta,error,fitted_slope,sigma_theory"


def test_sweep_is_monotone_with_positive_slope():
    stg = SpaceTimeGrid.with_courant(128, 3.0)
    q1 = SpaceTimeField.from_function(stg, smooth_q(3.0))
    q2 = SpaceTimeField.from_function(stg, lambda t, x: 2 + 0 * t)
    rows = stability_sweep(q1, q2, [1e-3, 1e-2, 1e-1, 1.0], spacing=0.2)
    errs = [r.error for r in rows]
    assert all(b >= a for a, b in zip(errs[:-1], errs[1:])), errs
    assert rows[0].fitted_slope > 0
    assert rows[0].sigma_theory == pytest.approx(24 / 487)


def test_node_lookup():
    stg = SpaceTimeGrid.with_courant(16, 2.0)
    q = SpaceTimeField.from_function(stg, lambda t, x: t + 10 * x)
    assert node_values(q)(stg.t[5], stg.x[3]) == pytest.approx(stg.t[5] + 10 * stg.x[3])
