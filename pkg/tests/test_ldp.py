import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlwlab.dynamics import make_model
from nlwlab.errors import ConfigurationError
from nlwlab.ldp import (admissible_interval, beta0_for, check_pressure_regularity, conjugate, convexify,
                        estimate_pressure, fit_tail, legendre, one_sided_derivatives, path_integrals)
from nlwlab.observables import (check_observable, constant_observable, cos_mode, occupation_average, tanh_mode,
                                truncated_quadratic, velocity_tanh)
from nlwlab.spectral import State
from nlwlab.streams import split_stream


@pytest.fixture(scope="module")
def model():
    return make_model(n_modes=2, gamma=0.5, dt=0.1)


# --- observables --------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 4.0))
def test_observables_respect_declared_bounds(seed, spread):
    rng = np.random.default_rng(seed)
    states = State(rng.normal(size=(300, 3)) * spread, rng.normal(size=(300, 3)) * spread)
    for obs in (tanh_mode(1), tanh_mode(2, 2.0, 0.5, 0.3), cos_mode(1, 1.5), truncated_quadratic(2, 2.0),
                velocity_tanh(3), tanh_mode(1).scaled(-2.0).shifted(1.0)):
        assert check_observable(obs, states, rng=rng).passed, obs.name


def test_observable_needs_enough_modes():
    with pytest.raises(ValueError):
        tanh_mode(3)(State.zeros(2))


def test_constant_observable_metadata():
    c = constant_observable(0.7)
    assert c.is_constant and c.constant == 0.7 and c.nonnegative
    assert c.scaled(2.0).constant == pytest.approx(1.4)
    assert np.all(c(State.zeros(2, (4,))) == 0.7)


def test_occupation_average_constant_and_half_window():
    t = np.linspace(0, 4, 41)
    assert occupation_average(t, np.full(41, 2.5)) == pytest.approx(2.5)
    step = (t >= 2).astype(float)
    # trapezoid on the grid smears the jump over one cell
    assert occupation_average(t, step) == pytest.approx(0.5 + 0.05 / 4 * 1, abs=0.02)
    with pytest.raises(ValueError):
        occupation_average(np.array([1.0]), np.array([1.0]))


# --- pressure estimator -------------------------------------------------------

def test_beta0_for():
    assert beta0_for(0.1, 1.0) == pytest.approx(0.025)
    with pytest.raises(ValueError):
        beta0_for(0.0, 1.0)


def test_pressure_refuses_beta_beyond_budget(model):
    with pytest.raises(ConfigurationError):
        estimate_pressure(model, tanh_mode(1), [0.0, 0.6], 1.0, 10, split_stream(0, 0), delta=0.5)


def test_pressure_zero_at_zero_and_regular(model):
    psi = tanh_mode(1)
    curve = estimate_pressure(model, psi, np.linspace(-2, 2, 21), 10.0, 2000, split_stream(1, 0), delta=2.0,
                              t_burn=2.0)
    assert curve.q[10] == 0.0
    assert check_pressure_regularity(curve).passed
    J = admissible_interval(curve, beta0=0.5)
    assert J.contains_mean


def test_pressure_of_constant_is_linear(model):
    curve = estimate_pressure(model, constant_observable(0.3), np.linspace(-1, 1, 11), 5.0, 50,
                              split_stream(2, 0), delta=0.5)
    np.testing.assert_allclose(curve.q, 0.3 * curve.beta, atol=1e-14)
    assert np.all(curve.ci == 0)
    rep = check_pressure_regularity(curve)
    assert rep.passed
    rf = legendre(curve)
    assert rf(0.3)[0] == pytest.approx(0.0, abs=1e-12)
    assert rf(0.5)[0] == pytest.approx(0.2, abs=1e-12)   # slope max|beta| = 1 away from the constant


def test_pressure_sign_for_nonnegative_observable(model):
    curve = estimate_pressure(model, truncated_quadratic(1, 1.0), np.linspace(-0.5, 0.5, 11), 5.0, 500,
                              split_stream(3, 0), delta=0.5)
    assert np.all(curve.q[curve.beta > 0] >= -curve.ci[curve.beta > 0])
    assert check_pressure_regularity(curve).passed


def test_path_integrals_of_constant(model):
    I = path_integrals(model, State.zeros(2), constant_observable(2.0), [0.0, 1.0, 3.0], 4, split_stream(0, 0))
    np.testing.assert_allclose(I, np.array([[0.0] * 4, [2.0] * 4, [6.0] * 4]), atol=1e-12)


# --- convex analysis -----------------------------------------------------------

def test_legendre_of_quadratic():
    beta = np.linspace(-3, 3, 601)
    rf = legendre(beta, 0.5 * beta**2)
    p = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(rf(p), 0.5 * p**2, atol=1e-4)
    assert rf.argmin == pytest.approx(0.0, abs=1e-12)
    assert min(rf.i) == 0.0


def test_kink_has_one_sided_derivatives():
    beta = np.linspace(-1, 1, 21)
    dm, dp = one_sided_derivatives(beta, np.abs(beta))
    k = 10
    assert dm[k] == pytest.approx(-1.0) and dp[k] == pytest.approx(1.0)
    rf = legendre(beta, np.abs(beta))
    assert rf.J == pytest.approx((-1.0, 1.0))
    assert np.all(rf(np.array([-0.5, 0.0, 0.5])) == pytest.approx(0.0, abs=1e-12))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=15))
def test_convexify_gives_convex_curve_and_keeps_anchor(vals):
    beta = np.linspace(-1, 1, len(vals) + 1)
    q = np.concatenate([[0.0], np.asarray(vals)])
    q = q - q[np.argmin(np.abs(beta))]
    qc = convexify(beta, q)
    slopes = np.diff(qc) / np.diff(beta)
    assert np.all(np.diff(slopes) >= -1e-9)
    k = int(np.argmin(np.abs(beta)))
    assert qc[k] == pytest.approx(q[k], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=4, max_size=12))
def test_biconjugate_recovers_convex_curve(slope_incr):
    beta = np.linspace(-1, 1, len(slope_incr) + 1)
    slopes = np.cumsum(slope_incr) - 1.5
    q = np.concatenate([[0.0], np.cumsum(slopes * np.diff(beta))])
    rf = legendre(beta, q)
    back = conjugate(rf.p, rf.i + rf.shift, beta)
    np.testing.assert_allclose(back, rf.q_convex, atol=1e-9)


def test_convexify_is_identity_on_convex():
    beta = np.linspace(-1, 1, 11)
    q = np.exp(beta) - 1
    np.testing.assert_allclose(convexify(beta, q), q, atol=1e-12)


# --- tails -------------------------------------------------------------------

def test_fit_tail_recovers_synthetic_rate():
    rng = np.random.default_rng(0)
    t = np.arange(5.0, 41.0, 5.0)
    M = 200_000
    p = 0.5 * np.exp(-0.1 * t) / np.sqrt(t)
    hits = rng.random((t.size, M)) < p[:, None]
    averages = np.where(hits, 0.2, 0.0)
    fit = fit_tail(t, averages, [(0.1, 0.3)])
    assert fit.status == "ok"
    assert fit.slope == pytest.approx(-0.1, abs=3 * fit.slope_se + 1e-3)
    raw = fit_tail(t, averages, [(0.1, 0.3)], prefactor=False)
    assert raw.slope < fit.slope


def test_fit_tail_without_hits_is_inconclusive():
    fit = fit_tail(np.array([1.0, 2.0, 3.0]), np.zeros((3, 10)), [(0.5, 1.0)])
    assert fit.status == "inconclusive" and np.isnan(fit.slope)
