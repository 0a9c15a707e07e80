import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlip.discretize import BoundaryData, ScalarField, build_grid, normal_derivative, volume_integral
from nlip.elliptic import EllipticProblem, linear_dtn, make_dtn
from nlip.errors import ScheduleError
from nlip.multilin import (
    EpsilonSchedule,
    convergence_table,
    integral_pairing,
    interior_integral,
    linearized_hierarchy,
    mixed_derivative_dtn,
    write_convergence_csv,
)

from oracles import poisson_series


def problem(n, qf, m=2, delta=1e-2):
    return EllipticProblem(ScalarField.from_function(build_grid(n), qf), m, delta)


def ones(g):
    return BoundaryData(g, np.ones(g.num_boundary))


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        EpsilonSchedule(())
    with pytest.raises(ScheduleError):
        EpsilonSchedule((1e-3, -1e-3))
    with pytest.raises(ScheduleError):
        EpsilonSchedule((1e-3,), refinement=1.0)
    s = EpsilonSchedule.uniform(1e-3, 3)
    assert s.k == 3 and s.halved().eps == (5e-4,) * 3


def test_inadmissible_schedule_fails_before_any_call():
    p = problem(8, lambda x, y: 1 + 0 * x)
    oracle = make_dtn(p)
    with pytest.raises(ScheduleError):
        mixed_derivative_dtn(oracle, [ones(p.grid)] * 2, EpsilonSchedule.uniform(1e-2, 2))
    assert oracle.calls == 0


def test_first_order_without_potential_is_laplace_dtn():
    p = problem(16, lambda x, y: 0 * x)
    f = BoundaryData.from_function(p.grid, lambda x, y: np.sin(2 * x) + y)
    d1 = mixed_derivative_dtn(make_dtn(p), [f], EpsilonSchedule((1e-3,)))
    lin = linear_dtn(f)
    assert (d1 - lin).max_abs() <= 1e-9 * lin.max_abs()


def test_second_order_without_potential_vanishes():
    p = problem(16, lambda x, y: 0 * x)
    f = BoundaryData.from_function(p.grid, lambda x, y: x)
    d2 = mixed_derivative_dtn(make_dtn(p), [f, f], EpsilonSchedule.uniform(1e-3, 2))
    assert d2.max_abs() <= 1e-6


def test_second_order_matches_hierarchy_at_first_order_in_eps():
    p = problem(16, lambda x, y: 1 + 0 * x)
    f = BoundaryData.from_function(p.grid, lambda x, y: x)
    _, w = linearized_hierarchy(p, [f, f])
    exact = normal_derivative(w)
    oracle = make_dtn(p)
    sched = EpsilonSchedule.uniform(4e-3, 2)
    errs = []
    for _ in range(4):
        errs.append((mixed_derivative_dtn(oracle, [f, f], sched) - exact).norm())
        sched = sched.halved()
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    assert all(1.8 <= r <= 2.2 for r in ratios), ratios


def test_hierarchy_vanishes_without_potential():
    p = problem(12, lambda x, y: 0 * x)
    f = BoundaryData.from_function(p.grid, lambda x, y: np.exp(x))
    _, w = linearized_hierarchy(p, [f, f])
    assert w.max_abs() == 0


def test_hierarchy_torsion_against_series():
    p = problem(64, lambda x, y: 1 + 0 * x)
    _, w = linearized_hierarchy(p, [ones(p.grid)] * 2)
    X, Y = p.grid.mesh()
    ref = poisson_series(X, Y, f0=2.0)
    assert np.abs(w.values - ref).max() <= 1e-4
    # Lap w = -2 doubles the unit-load torsion value 0.0736714 at the centre
    assert poisson_series(0.5, 0.5, f0=1.0) == pytest.approx(0.0736714, abs=1e-7)
    assert w.values[32, 32].real == pytest.approx(2 * 0.0736714, abs=5e-5)


def test_hierarchy_probe_swap_is_bit_identical():
    p = problem(16, lambda x, y: 1 + x)
    f1 = BoundaryData.from_function(p.grid, lambda x, y: np.exp(1j * x + y))
    f2 = BoundaryData.from_function(p.grid, lambda x, y: np.cos(3 * y) + x)
    np.testing.assert_array_equal(linearized_hierarchy(p, [f1, f2])[1].values,
                                  linearized_hierarchy(p, [f2, f1])[1].values)


def test_pairing_without_potential_is_zero():
    p = problem(16, lambda x, y: 0 * x)
    g = p.grid
    assert abs(integral_pairing(make_dtn(p), [ones(g)] * 2, ones(g), EpsilonSchedule.uniform(1e-3, 2))) <= 1e-6


@pytest.mark.parametrize("qf,expected", [
    (lambda x, y: 1 + 0 * x, 1.0),
    (lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), 4 / np.pi**2),
])
def test_pairing_estimates_volume_integral(qf, expected):
    errs = []
    for n in (16, 32, 64):
        p = problem(n, qf)
        g = p.grid
        est = integral_pairing(make_dtn(p), [ones(g)] * 2, ones(g), EpsilonSchedule.uniform(1e-3, 2))
        errs.append(abs(est - expected))
    # O(eps) + O(h^2): the grid term dominates at eps = 1e-3
    assert errs[-1] <= 3e-3
    assert all(a / b >= 3.0 for a, b in zip(errs[:-1], errs[1:])), errs


@given(st.permutations(range(3)))
def test_permutation_symmetry_is_bit_identical(perm):
    p = problem(8, lambda x, y: 1 + x * y, m=3)
    g = p.grid
    probes = [
        BoundaryData.from_function(g, lambda x, y: x),
        BoundaryData.from_function(g, lambda x, y: np.cos(y) + 0.5j * x),
        ones(g),
    ]
    eps = [1e-3, 2e-3, 5e-4]
    oracle = make_dtn(p)
    base = mixed_derivative_dtn(oracle, probes, EpsilonSchedule(tuple(eps)))
    out = mixed_derivative_dtn(oracle, [probes[i] for i in perm], EpsilonSchedule(tuple(eps[i] for i in perm)))
    np.testing.assert_array_equal(out.values, base.values)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_homogeneity(c):
    # the oracle sees identical inputs, and the divided difference is linear in each probe
    p = problem(12, lambda x, y: 1 + np.sin(x))
    g = p.grid
    f1 = BoundaryData.from_function(g, lambda x, y: x - y)
    f2 = BoundaryData.from_function(g, lambda x, y: np.cos(2 * y))
    oracle = make_dtn(p)
    base = mixed_derivative_dtn(oracle, [f1, f2], EpsilonSchedule((1e-3, 1e-3)))
    out = mixed_derivative_dtn(oracle, [f1.scaled(c), f2], EpsilonSchedule((1e-3 / c, 1e-3)))
    assert oracle.calls == 8
    assert (out - base.scaled(c)).max_abs() <= 1e-10 * base.max_abs()
    assert (out.scaled(1 / c) - base).max_abs() <= 1e-10 * base.max_abs()


def test_complex_probes_expand_multilinearly():
    p = problem(10, lambda x, y: 2 + x)
    g = p.grid
    a = BoundaryData.from_function(g, lambda x, y: x)
    b = BoundaryData.from_function(g, lambda x, y: y * y)
    c = ones(g)
    oracle = make_dtn(p)
    sched = EpsilonSchedule.uniform(1e-3, 2)
    z = BoundaryData(g, a.values + 1j * b.values)
    lhs = mixed_derivative_dtn(oracle, [z, c], sched)
    rhs = mixed_derivative_dtn(oracle, [a, c], sched).values + 1j * mixed_derivative_dtn(oracle, [b, c], sched).values
    np.testing.assert_allclose(lhs.values, rhs, rtol=0, atol=1e-12 * np.abs(rhs).max())


@pytest.mark.parametrize("qf", [
    lambda x, y: 0 * x,
    lambda x, y: 1 + 0 * x,
    lambda x, y: 3 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y),
    lambda x, y: 5 * np.exp(-20 * ((x - 0.4) ** 2 + (y - 0.6) ** 2)),
])
def test_first_linearization_carries_no_potential(qf):
    p = problem(32, qf)
    f = BoundaryData.from_function(p.grid, lambda x, y: 0.5 * (x + np.cos(np.pi * y)))
    eps = 1e-3
    d1 = mixed_derivative_dtn(make_dtn(p), [f], EpsilonSchedule((eps,)))
    assert (d1 - linear_dtn(f)).norm() <= 10 * eps


def test_threaded_evaluation_matches_sequential():
    p = problem(12, lambda x, y: 1 + x)
    g = p.grid
    probes = [BoundaryData.from_function(g, lambda x, y: x), ones(g)]
    oracle = make_dtn(p)
    sched = EpsilonSchedule.uniform(1e-3, 2)
    seq = mixed_derivative_dtn(oracle, probes, sched, threads=1)
    par = mixed_derivative_dtn(oracle, probes, sched, threads=4)
    np.testing.assert_array_equal(seq.values, par.values)


def test_distinct_inputs_are_evaluated_once():
    p = problem(8, lambda x, y: 1 + 0 * x, m=3)
    g = p.grid
    oracle = make_dtn(p)
    f = BoundaryData.from_function(g, lambda x, y: x)
    mixed_derivative_dtn(oracle, [f, ones(g), f.scaled(0.5)], EpsilonSchedule.uniform(1e-3, 3))
    # 2^3 subsets, the empty one included
    assert oracle.calls == 8


def test_convergence_table_rates(tmp_path):
    q = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    rows = convergence_table(q, 2, [1e-6], [16, 32, 64])
    res = [r.identity_residual for r in rows]
    ratios = [a / b for a, b in zip(res[:-1], res[1:])]
    assert all(3.5 <= r <= 4.5 for r in ratios), ratios
    path = write_convergence_csv(rows, tmp_path / "c.csv")
    assert path.read_text().splitlines()[0] == "eps,h,identity_residual"


def test_interior_integral_is_quadrature_of_product():
    p = problem(16, lambda x, y: 1 + x)
    g = p.grid
    f = BoundaryData.from_function(g, lambda x, y: x + y)
    val = interior_integral(p, [f, ones(g)], ones(g))
    X, Y = g.mesh()
    assert val == pytest.approx(volume_integral(ScalarField(g, (1 + X) * (X + Y))), abs=1e-12)


def test_subset_enumeration_covers_power_set():
    calls = []
    p = problem(8, lambda x, y: 0 * x, m=2)
    g = p.grid
    oracle = make_dtn(p)
    f = BoundaryData.from_function(g, lambda x, y: x)
    h = ones(g)
    orig = oracle._evaluator
    oracle._evaluator = lambda b: calls.append(b.values.copy()) or orig(b)
    mixed_derivative_dtn(oracle, [f, h], EpsilonSchedule((1e-3, 2e-3)))
    expect = [a * 1e-3 * f.values + b * 2e-3 * h.values for a, b in itertools.product((0, 1), repeat=2)]
    for e in expect:
        assert any(np.array_equal(c, e) for c in calls)
