import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlwlab.control import (ControlPath, blend, blend_d, blend_dd, control_to_target, feedback_stabilize,
                            solve_steady_state)
from nlwlab.dynamics import f_coeffs, make_model
from nlwlab.errors import ConvergenceError
from nlwlab.nonlinearity import Nonlinearity
from nlwlab.spectral import State

ZERO = Nonlinearity("zero")


def test_blend_endpoint_conditions():
    a, b, c = blend(np.array([0.0, 1.0]))
    da, db, dc = blend_d(np.array([0.0, 1.0]))
    assert (a[0], b[0], c[0]) == (1, 0, 0) and (a[1], b[1], c[1]) == (0, 1, 0)
    assert (da[0], db[0], dc[0]) == (0, 0, 0) and (da[1], db[1], dc[1]) == (0, 0, 1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99))
def test_blend_derivatives_match_finite_differences(t):
    eps = 1e-6
    for f, df in ((blend, blend_d), (blend_d, blend_dd)):
        hi, lo, d = f(t + eps), f(t - eps), df(t)
        for x, y, z in zip(hi, lo, d):
            assert (x - y) / (2 * eps) == pytest.approx(float(z), abs=1e-6)


def test_steady_state_zero_forcing_klein_gordon():
    m = make_model(n_modes=8, nl=Nonlinearity("klein_gordon", rho=1.0, lam=1.0))
    v = solve_steady_state(m.domain, m.nl, np.zeros(8))
    assert np.all(v == 0)


def test_steady_state_linear_is_h_over_lambda():
    m = make_model(n_modes=8, nl=ZERO)
    h = np.linspace(1, 0.1, 8)
    v = solve_steady_state(m.domain, m.nl, h)
    np.testing.assert_allclose(v, h / m.domain.eigenvalues, rtol=1e-12)


def test_steady_state_sine_gordon_residual():
    m = make_model(n_modes=8)
    h = 0.3 * np.r_[1, 0.5, 0.2, np.zeros(5)]
    v = solve_steady_state(m.domain, m.nl, h)
    res = m.domain.eigenvalues * v + f_coeffs(m.domain, m.nl, v) - h
    assert np.linalg.norm(res) <= 1e-10


def test_steady_state_reports_history_on_failure():
    m = make_model(n_modes=4)
    with pytest.raises(ConvergenceError) as exc:
        solve_steady_state(m.domain, m.nl, np.ones(4), max_iter=0, tol=1e-30)
    assert len(exc.value.history) >= 1


def test_control_reaches_target_sine_gordon():
    h = 0.3 * np.r_[1, 0.5, 0.2, np.zeros(5)]
    m = make_model(n_modes=8, h=h)
    v_hat = solve_steady_state(m.domain, m.nl, h)
    rng = np.random.default_rng(0)
    j = np.arange(1, 9)
    target = State(rng.normal(size=8) / j**2, rng.normal(size=8) / j)
    res = control_to_target(m, v_hat, target, T=1.0)
    assert res.endpoint_error <= 1e-8


def test_control_of_start_onto_itself():
    m = make_model(n_modes=4, nl=ZERO)
    v_hat = np.zeros(4)
    res = control_to_target(m, v_hat, State(v_hat, np.zeros(4)), T=1.0)
    assert res.endpoint_error <= 1e-12
    assert np.allclose(res.control.phi(1.0), 0.0)


def test_linear_control_closed_form():
    # for f = 0, h = 0, v_hat = 0 the control integrates to u' + gamma u + lam int u at t = T
    m = make_model(n_modes=3, nl=ZERO, gamma=0.5)
    u1, u2 = np.array([1.0, -0.5, 0.25]), np.array([0.2, 0.0, -0.3])
    cp = ControlPath(m, np.zeros(3), u1, u2, T=1.0)
    lam = m.domain.eigenvalues
    # int_0^1 of the blend path: int b = 1/2, int c = -1/12
    int_u = 0.5 * u1 - u2 / 12
    expected = u2 + 0.5 * u1 + lam * int_u
    np.testing.assert_allclose(cp.phi(1.0), expected, atol=1e-10)


def test_feedback_rates_and_minimal_level():
    nl = Nonlinearity("klein_gordon", rho=1.0, lam=3.0)
    m = make_model(n_modes=8, nl=nl, gamma=0.5, dt=0.05)
    v_hat = np.zeros(8)
    rng = np.random.default_rng(1)
    starts = State(rng.normal(size=(5, 8)) * 0.3 / np.arange(1, 9), rng.normal(size=(5, 8)) * 0.3)
    rep = feedback_stabilize(m, starts, v_hat, range(0, 5), 30.0)
    assert rep.N_min is not None and rep.N_min >= 1
    assert not rep.decays[0]
    rates = [rep.rates[N] for N in range(0, 5)]
    # more feedback never slows the decay (up to fitting jitter)
    assert all(b >= a * (1 - 1e-3) for a, b in zip(rates, rates[1:]))
    assert all(rep.decays[N] for N in range(rep.N_min, 5))
