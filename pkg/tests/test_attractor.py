import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmnse import attractor as at
from gmnse import integrator as it
from gmnse import rhs
from gmnse import spectral as sp
from gmnse.errors import ContractViolation, ProtocolError


@pytest.fixture(scope="module")
def p8():
    g = sp.make_grid(8)
    return rhs.SimParams(g, 1.0, 2.0, rhs.taylor_green_forcing(g, 0.5), dt=0.05)


@pytest.fixture(scope="module")
def p8_free():
    return rhs.SimParams(sp.make_grid(8), 1.0, 2.0, dt=0.05)


def _rand(grid, seed, norm=1.0, exponent=1.0):
    return sp.random_field(grid, np.random.default_rng(seed), exponent, norm=norm)


# ---------------------------------------------------------------------------
# absorbing ball
# ---------------------------------------------------------------------------

def test_absorbing_radius_unforced(p8_free):
    assert at.absorbing_radius(p8_free) == 1.0


def test_absorbing_radius_formula(p8):
    expect = math.sqrt(1.0 + p8.forcing_norm_Hm12 ** 2 / (1.0 * 1.0))
    assert at.absorbing_radius(p8) == pytest.approx(expect, rel=1e-15)


@pytest.mark.parametrize("r, expect", [(0.5, 0.0), (1.0, 0.0), (math.e, 2.0)])
def test_entry_time(p8, r, expect):
    assert at.entry_time(p8, r) == pytest.approx(expect)


def test_transient_time(p8):
    # eps^2 lambda1 nu^2 / r^2 = 1e-6 / e^2
    assert at.transient_time(p8, math.e, 1e-3) == pytest.approx(2.0 + 6 * math.log(10))
    assert at.transient_time(p8, 0.0) == 0.0
    assert at.transient_time(p8, 1e6, 1.0) == pytest.approx(at.entry_time(p8, 1e6))


def test_absorbing_bound_holds(p8):
    r = 3 * at.absorbing_radius(p8)
    traj = it.integrate(_rand(p8.grid, 1, norm=r), p8, 4.0, keep_snapshots=False)
    rep = at.absorbing_bound_check(traj)
    assert rep.passed, rep.line()
    assert rep.metrics["entry_time"] <= rep.metrics["T_B"] + p8.dt
    assert rep.metrics["worst_margin"] <= 0.0


def test_absorbing_bound_detects_violation(p8):
    traj = it.integrate(_rand(p8.grid, 2, norm=2.0), p8, 1.0, keep_snapshots=False)
    traj.diagnostics["norm_H"] = traj.diagnostics["norm_H"].copy()
    traj.diagnostics["norm_H"][10] = 100.0
    rep = at.absorbing_bound_check(traj)
    assert not rep.passed
    assert rep.failures[0]["t"] == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# weak metric and semidistance
# ---------------------------------------------------------------------------

def test_weak_metric_unit_mode(grid8):
    u = sp.shear_field(grid8, 2.0)
    # |k| = 1, so the H_{-1/2} and H norms agree
    assert at.weak_metric(u, sp.SpectralField.zeros(grid8)) == pytest.approx(sp.norm_H(u))


@given(a=st.integers(0, 10 ** 6), b=st.integers(0, 10 ** 6), c=st.integers(0, 10 ** 6))
def test_weak_metric_axioms(a, b, c):
    g = sp.make_grid(8)
    u, v, w = _rand(g, a), _rand(g, b), _rand(g, c)
    assert at.weak_metric(u, u) == 0.0
    assert at.weak_metric(u, v) == pytest.approx(at.weak_metric(v, u), rel=1e-14)
    assert at.weak_metric(u, w) <= at.weak_metric(u, v) + at.weak_metric(v, w) + 1e-12
    assert at.weak_metric(u, v) <= sp.norm_H(u - v) * (1 + 1e-12)


def test_semidistance_hand_example(grid8):
    s = sp.shear_field(grid8)
    A = [s * 0.0, s * 3.0]
    B = [s * 1.0, s * 2.0]
    unit = sp.norm_H(s)
    val, i, j = at.semidistance_detail(A, B)
    assert val == pytest.approx(unit)
    # 0 -> nearest 1 (distance 1); 3 -> nearest 2 (distance 1); tie goes to a=0
    assert (i, j) == (0, 0)
    assert at.hausdorff_semidistance(B, A) == pytest.approx(unit)
    assert at.hausdorff_semidistance([s], [s * 0.0, s]) == 0.0


def test_semidistance_asymmetric(grid8):
    s = sp.shear_field(grid8)
    A, B = [s], [s, s * 5.0]
    assert at.hausdorff_semidistance(A, B) == 0.0
    assert at.hausdorff_semidistance(B, A) == pytest.approx(4 * sp.norm_H(s))


def test_semidistance_matches_pairwise(grid8):
    A = [_rand(grid8, i) for i in range(4)]
    B = [_rand(grid8, 10 + i) for i in range(5)]
    brute = max(min(at.weak_metric(a, b) for b in B) for a in A)
    assert at.hausdorff_semidistance(A, B) == pytest.approx(brute, rel=1e-12)


def test_semidistance_errors(grid8, grid16):
    with pytest.raises(ValueError):
        at.hausdorff_semidistance([], [sp.shear_field(grid8)])
    with pytest.raises(sp.GridMismatchError):
        at.hausdorff_semidistance([sp.shear_field(grid8), sp.shear_field(grid16)],
                                  [sp.shear_field(grid8)])


# ---------------------------------------------------------------------------
# clouds
# ---------------------------------------------------------------------------

def test_ensemble_members(p8):
    ens = at.Ensemble(7, 4, radius=5.0)
    a = list(ens.members(p8))
    b = list(ens.members(p8))
    assert [s for s, _ in a] == [700000, 700001, 700002, 700003]
    for (_, u), (_, v) in zip(a, b):
        assert u.bitwise_equal(v)
        assert 2.5 <= sp.norm_H(u) <= 5.0 + 1e-12
        assert u.is_divergence_free()
    assert at.Ensemble(7, 1).radius_for(p8) == at.absorbing_radius(p8)
    with pytest.raises(ValueError):
        at.Ensemble(1, 0)


def test_sample_attractor(p8):
    ens = at.Ensemble(3, 2)
    T = 2.0
    cloud = at.sample_attractor(p8, 2.0, ens, T, offsets=(0.0, 0.2))
    assert len(cloud) == 4
    assert [m.seed for m in cloud.meta] == [300000, 300000, 300001, 300001]
    assert [m.t for m in cloud.meta] == pytest.approx([2.0, 2.2, 2.0, 2.2])
    assert cloud.max_norm() <= at.absorbing_radius(p8)
    _, u0 = next(ens.members(p8))
    assert cloud.samples[1].bitwise_equal(it.advance(u0, p8, 2.2))


def test_sample_attractor_eps_raises_transient(p8):
    ens = at.Ensemble(3, 1)
    cloud = at.sample_attractor(p8, 2.0, ens, 2.0, eps=1e-2)
    t = at.transient_time(p8, at.absorbing_radius(p8), 1e-2)
    assert cloud.transient >= t
    assert cloud.transient - t < p8.dt + 1e-12


def test_sample_attractor_rejects_short_transient(p8):
    ens = at.Ensemble(3, 1, radius=10.0)
    with pytest.raises(ContractViolation):
        at.sample_attractor(p8, 2.0, ens, 0.1)


def test_sample_attractor_reports_escape(p8, monkeypatch):
    monkeypatch.setattr(at, "absorbing_radius", lambda p: 1e-3)
    with pytest.raises(ProtocolError):
        at.sample_attractor(p8, 2.0, at.Ensemble(3, 1, radius=0.5), 0.1)


def test_union_contains_members(p8):
    ens = at.Ensemble(4, 1)
    union = at.build_A_union(p8, [0.05, 4.0], [2.0], ens)
    single = at.sample_attractor(p8, 4.0, ens, 2.0)
    assert len(union) == 2
    assert at.cloud_contains(union, single)
    assert not at.cloud_contains(single, union)
    with pytest.raises(ValueError):
        at.build_A_union(p8, [1.0, 2.0], [0.5, 1.0, 1.5], ens)


def test_cloud_sorted_and_diameter(grid8):
    s = sp.shear_field(grid8)
    metas = [at.SampleMeta(4.0, 1.0, 2), at.SampleMeta(1.0, 2.0, 5), at.SampleMeta(1.0, 1.0, 5)]
    cloud = at.AttractorCloud([s * 1.0, s * 2.0, s * 3.0], metas, "c").sorted()
    assert [m.taper_N for m in cloud.meta] == [1.0, 1.0, 4.0]
    assert [m.t for m in cloud.meta] == [1.0, 2.0, 1.0]
    assert cloud.diameter() == pytest.approx(2 * sp.norm_H(s))
    with pytest.raises(ValueError):
        at.AttractorCloud([s], [], "bad")


# ---------------------------------------------------------------------------
# semicontinuity
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("vals, rel, ab, expect", [
    ([3, 2, 1], 0.0, 0.0, True),
    ([1, 1.05, 1], 0.1, 0.0, True),
    ([1, 1.2], 0.1, 0.0, False),
    ([0.0, 1e-7], 0.1, 1e-6, True),
    ([5.0], 0.0, 0.0, True),
])
def test_nonincreasing_within(vals, rel, ab, expect):
    assert at.nonincreasing_within(vals, rel, ab) is expect


def test_semicontinuity_unforced(p8_free):
    ens = at.Ensemble(1, 2, radius=1.0)
    ref = at.build_A_union(p8_free, [32.0], [3.0], at.Ensemble(2, 2, radius=1.0))
    res = at.semicontinuity_experiment(p8_free, [4.0, 1.0, 2.0], ref, ens, 3.0)
    assert res.N == [1.0, 2.0, 4.0]
    # everything decays to the trivial attractor
    assert max(res.dist_w) <= 0.1
    assert len(res.rows()) == 3
    assert 0.0 <= res.trend <= 1.0


def test_positive_invariance_trivial(p8_free):
    cloud = at.sample_attractor(p8_free, 1.0, at.Ensemble(0, 3, radius=1.0), 3.0)
    rep = at.positive_invariance_shadow(cloud, p8_free, [1.0, 4.0], 0.5)
    assert rep.passed, rep.line()
    assert rep.metrics["n_moved"] == 6


# ---------------------------------------------------------------------------
# energy inequality
# ---------------------------------------------------------------------------

def test_energy_inequality(p8):
    u0 = _rand(p8.grid, 11, norm=4.0, exponent=2.0)
    C, d1, d2 = at.calibrate_energy_tolerance(u0, p8.replace(dt=0.02), 0.4)
    assert d1 > d2 > 0
    traj = it.integrate(u0, p8.replace(dt=0.02), 0.4, keep_snapshots=False)
    rep = at.energy_inequality_check(traj, C * 0.02 ** 2)
    assert rep.passed, rep.line()


def test_energy_inequality_detects_rise(p8):
    traj = it.integrate(_rand(p8.grid, 12, norm=2.0), p8, 0.5, keep_snapshots=False)
    traj.diagnostics["norm_H"] = traj.diagnostics["norm_H"].copy()
    traj.diagnostics["norm_H"][5:] *= 1.5
    rep = at.energy_inequality_check(traj, 1e-6, equality=False)
    assert not rep.passed
    assert rep.metrics["max_rise"] > 1e-6


# ---------------------------------------------------------------------------
# agreement with the unmodified system, stationary states
# ---------------------------------------------------------------------------

def test_agreement_threshold(p8):
    res = at.nse_agreement_threshold(sp.SpectralField.zeros(p8.grid), p8,
                                     np.arange(0.5, 6.01, 0.5), 2.0)
    assert math.isfinite(res.threshold)
    assert res.threshold >= res.sup_l4
    assert res.nonincreasing
    for N, d in res.distances.items():
        assert (d == 0.0) == (N >= res.threshold)


def test_stationary_solution(grid8):
    p = rhs.SimParams(grid8, 2.0, 1.0, rhs.taylor_green_forcing(grid8, 0.5), dt=0.05)
    u = at.stationary_solution(p)
    assert sp.norm_H(rhs.gmnse_rhs(u, p)) <= 1e-11 * sp.norm_H(p.forcing)
    # the time stepper preserves the steady state up to its own defect
    assert sp.norm_H(it.advance(u, p, 1.0) - u) <= 1e-5 * sp.norm_H(u)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def test_write_cloud(tmp_path, grid8):
    s = sp.shear_field(grid8)
    cloud = at.AttractorCloud([s, s * 0.5],
                              [at.SampleMeta(math.inf, 1.0, 3), at.SampleMeta(2.0, 1.5, 4)], "c")
    paths = at.write_cloud(cloud, tmp_path, "r1", 0.05)
    assert [p.name for p in paths] == ["snap_r1-0000_000000020.fld", "snap_r1-0001_000000030.fld",
                                       "cloud_r1.json"]
    entries = json.loads(paths[-1].read_text())
    assert entries[0] == {"file": paths[0].name, "N": "inf", "t": 1.0, "seed": 3,
                          "norm_H": sp.norm_H(s)}
    assert set(entries[1]) == {"file", "N", "t", "seed", "norm_H"}
    assert sp.read_snapshot(paths[1]).bitwise_equal(s * 0.5)


def test_write_distances_csv(tmp_path):
    path = tmp_path / "d.csv"
    at.write_distances_csv([(1.0, 0.5), (math.inf, 0.0)], path)
    rows = list(csv.reader(open(path)))
    assert rows == [["N", "dist_w"], ["1", "0.5"], ["inf", "0"]]
    with pytest.raises(ValueError):
        at.write_distances_csv([], tmp_path / "e.csv")
