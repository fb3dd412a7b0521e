import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from gmnse import analysis as an
from gmnse import integrator as it
from gmnse import rhs
from gmnse import spectral as sp
from gmnse.errors import DivergenceError


# ---------------------------------------------------------------------------
# mesh and problem validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("T", [0.1, 1.0, 7.0])
def test_graded_mesh(T):
    m = an.graded_mesh(T)
    assert m[0] == pytest.approx(1e-4 * T)
    assert m[-1] == T
    assert np.all(np.diff(m) > 0)
    assert np.diff(m).max() <= T / 2000 * (1 + 1e-9)


@pytest.mark.parametrize("kw", [{"a": -1.0}, {"c": -0.1}, {"gamma": 1.0}, {"gamma": -0.1},
                                {"alpha": 1.0}, {"beta": 1.2}, {"T": 0.0},
                                {"mesh": np.array([0.5, 1.0])}])
def test_problem_validation(kw):
    args = dict(a=1.0, b=1.0, c=1.0, alpha=0.4, beta=0.2, gamma=0.5, T=1.0)
    args.update(kw)
    with pytest.raises(ValueError):
        an.GronwallProblem(**args)


def test_negative_exponents_admitted():
    p = an.GronwallProblem(1.0, 1.0, 0.1, 0.375, -0.125, 0.875, 1.0)
    env = an.gronwall_envelope(p)
    assert np.all(env.u >= p.forcing_terms())


# ---------------------------------------------------------------------------
# envelope oracles
# ---------------------------------------------------------------------------

def test_envelope_without_coupling_is_forcing():
    p = an.GronwallProblem(1.0, 2.0, 0.0, 0.4, 0.2, 0.5, 1.0)
    env = an.gronwall_envelope(p)
    np.testing.assert_array_equal(env.u, p.forcing_terms())
    assert env.iterations == 0


def test_envelope_classical_exponential():
    p = an.GronwallProblem(1.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0)
    env = an.gronwall_envelope(p)
    np.testing.assert_allclose(env.u, 1.5 * np.exp(env.t), rtol=1e-6)


@pytest.mark.parametrize("a, c", [(1.0, 1.0), (0.3, 2.0)])
def test_envelope_mittag_leffler(a, c):
    # u = a t^-1/2 + c int (t-s)^-1/2 u solves to a G t^-1/2 E_{1/2,1/2}(c G t^1/2), G = Gamma(1/2)
    p = an.GronwallProblem(a, 0.0, c, 0.5, 0.0, 0.5, 1.0)
    env = an.gronwall_envelope(p)
    G = math.sqrt(math.pi)
    z = c * G * np.sqrt(env.t)
    exact = a * G * env.t ** -0.5 * (1.0 / G + z * special.erfcx(-z))
    assert np.max(np.abs(env.u / exact - 1.0)) <= 1e-4
    assert env.residual <= 1e-7


def test_envelope_overflow_raises():
    p = an.GronwallProblem(1.0, 1.0, 3.0, 0.375, -0.125, 0.875, 1.0)
    with pytest.raises(DivergenceError):
        an.gronwall_envelope(p)


@given(c1=st.floats(0.0, 2.0), dc=st.floats(0.0, 1.0))
def test_envelope_monotone_in_c(c1, dc):
    base = an.GronwallProblem(1.0, 1.0, c1, 0.4, 0.2, 0.5, 1.0)
    more = an.GronwallProblem(1.0, 1.0, c1 + dc, 0.4, 0.2, 0.5, 1.0, base.mesh)
    assert np.all(an.gronwall_envelope(more).u >= an.gronwall_envelope(base).u * (1 - 1e-9))


def test_envelope_linear_in_data():
    p = an.GronwallProblem(1.0, 2.0, 1.0, 0.4, 0.2, 0.5, 1.0)
    u = an.gronwall_envelope(p).u
    ua = an.gronwall_envelope(p.with_ab(1.0, 0.0)).u
    ub = an.gronwall_envelope(p.with_ab(0.0, 2.0)).u
    # the first-cell power law depends on which terms are present, so
    # linearity holds to discretization accuracy only
    np.testing.assert_allclose(u, ua + ub, rtol=1e-4)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def test_least_K_uncoupled():
    p = an.GronwallProblem(1.0, 0.0, 0.0, 0.4, 0.2, 0.5, 1.0)
    # t^-alpha <= K t^-alpha / (1 - alpha) needs K = 1 - alpha
    assert an.least_K(p) == pytest.approx(0.6, abs=1e-6)
    assert an.least_K(p.with_ab(0.0, 0.0)) == 0.0


def test_gronwall_bound_check_passes():
    p = an.GronwallProblem(1.0, 1.0, 1.0, 0.4, 0.2, 0.5, 1.0)
    rep = an.gronwall_bound_check(p, scales=(0.5, 2.0))
    assert rep.passed, rep.line()
    assert rep.metrics["K_point_max"] <= rep.metrics["K"] * (1 + 1e-4)
    d = an.gronwall_report_dict(rep)
    assert set(d) == {"K", "alpha", "beta", "gamma", "c", "T", "mesh_size", "residual"}


def test_K_grows_with_horizon():
    K = [an.least_K(an.GronwallProblem(1.0, 0.0, 1.0, 0.4, 0.2, 0.5, T)) for T in (0.5, 1.0, 2.0)]
    assert K[0] < K[1] < K[2]


def test_gronwall_controls():
    rep = an.gronwall_controls()
    assert rep.passed, rep.line()


@pytest.mark.parametrize("order", [0.375, 0.875])
def test_semigroup_constant(order):
    nu = 0.7
    lam = np.linspace(1e-3, 100.0, 200_001)
    t = 0.9
    sup = np.max(lam ** order * np.exp(-nu * lam * t))
    assert an.semigroup_constant(nu, order) * t ** -order == pytest.approx(sup, rel=1e-6)


def test_h38_envelope_problem(grid16):
    p = rhs.SimParams(grid16, 1.0, 0.5, rhs.taylor_green_forcing(grid16, 2.0))
    u0 = sp.shear_field(grid16)
    prob = an.h38_envelope_problem(u0, p, 1.0)
    assert (prob.alpha, prob.beta, prob.gamma) == (0.375, -0.125, 0.875)
    assert prob.c == pytest.approx(an.semigroup_constant(1.0, 0.875) * 0.5
                                   * sp.embedding_constant_bound(grid16))
    with pytest.raises(ValueError):
        an.h38_envelope_problem(u0, p.replace(taper_N=math.inf), 1.0)


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

def _fake_traj(grid, times, h38, snaps=None):
    d = {"norm_H38": np.asarray(h38)}
    return it.Trajectory(params=rhs.SimParams(grid, 1.0, dt=times[1] - times[0]),
                         times=np.asarray(times), diagnostics=d,
                         snapshots=snaps or [], snapshot_times=np.asarray(times))


def test_smoothing_fit_recovers_power(grid8):
    t = np.linspace(1e-4, 0.2, 2000)
    fit = an.smoothing_rate_fit(_fake_traj(grid8, t, 3.0 * t ** -0.3))
    assert fit.slope == pytest.approx(-0.3, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-9)
    assert fit.passed
    assert fit.bound == pytest.approx(-0.475)
    assert set(fit.to_dict()) == {"slope", "intercept", "window", "n_points"}


def test_smoothing_fit_rejects(grid8):
    t = np.linspace(0.5, 1.0, 50)
    with pytest.raises(ValueError):
        an.smoothing_rate_fit(_fake_traj(grid8, t, t))
    with pytest.raises(ValueError):
        an.smoothing_rate_fit(_fake_traj(grid8, t, t), theta=0.6)


def test_time_derivative_exact_on_quadratics(grid8):
    s = sp.shear_field(grid8)
    t = np.linspace(0.0, 0.1, 11)
    snaps = [s * (tt ** 2 + 1.0) for tt in t]
    _, d = an.time_derivative_norms(_fake_traj(grid8, t, t, snaps))
    exact = 2 * t * sp.fractional_norm(s, -0.375)
    np.testing.assert_allclose(d, exact, rtol=1e-8, atol=1e-12)


def test_rough_field(grid16):
    u = an.rough_field(grid16, 1, 2.0)
    assert sp.norm_H(u) == pytest.approx(2.0)
    assert u.is_divergence_free()
    assert an.rough_field(grid16, 1, 2.0).bitwise_equal(u)
    # a rougher field carries relatively more high-mode energy
    smooth = an.rough_field(grid16, 1, 2.0, exponent=3.0)
    assert sp.fractional_norm(u, 0.5) > sp.fractional_norm(smooth, 0.5)


def test_rates_on_short_run(grid16):
    p = rhs.SimParams(grid16, 1.0, 4.0, dt=1e-3)
    traj = it.integrate(an.rough_field(grid16, 0, 1.0), p, 0.05)
    fit = an.smoothing_rate_fit(traj, 0.375, (1e-3, 5e-2))
    assert -0.475 <= fit.slope < 0
    der = an.derivative_rate_fit(traj, 0.1, (1e-3, 5e-2))
    assert der.slope < 0
    assert der.extra["Lp_norm"] > 0
    assert "Lp_norm" in der.to_dict()
