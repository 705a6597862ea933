import numpy as np
import pytest
from scipy.integrate import quad

from nlwlab.dynamics import energy, make_model
from nlwlab.errors import ConfigurationError
from nlwlab.nonlinearity import Nonlinearity, calibrate_C, check_conditions, F_eval, f_eval
from nlwlab.spectral import State, h_norm_sq

KG1 = Nonlinearity("klein_gordon", rho=1.0, lam=0.0)


def test_klein_gordon_values():
    assert f_eval(KG1, 2.0) == pytest.approx(4.0)
    assert F_eval(KG1, 2.0) == pytest.approx(8.0 / 3.0)
    assert f_eval(Nonlinearity("klein_gordon", rho=1.0, lam=1.0), 1.0) == 0.0


@pytest.mark.parametrize("nl", [Nonlinearity("sine_gordon"), KG1,
                                Nonlinearity("klein_gordon", rho=0.6, lam=-0.7),
                                Nonlinearity("zero")])
def test_primitive_and_derivatives(nl):
    assert f_eval(nl, 0.0) == 0.0 and F_eval(nl, 0.0) == 0.0
    u = np.linspace(-4, 4, 41)
    u = u[np.abs(u) > 0.05]
    h = 1e-5
    np.testing.assert_allclose((nl.F(u + h) - nl.F(u - h)) / (2 * h), nl.f(u), atol=1e-7)
    np.testing.assert_allclose((nl.f(u + h) - nl.f(u - h)) / (2 * h), nl.df(u), atol=1e-7)
    np.testing.assert_allclose((nl.df(u + h) - nl.df(u - h)) / (2 * h), nl.d2f(u), atol=1e-6)


def test_unknown_kind_and_rho_rejected():
    with pytest.raises(ConfigurationError):
        Nonlinearity("phi4")
    with pytest.raises(ConfigurationError):
        Nonlinearity("klein_gordon", rho=2.5)


def test_sine_gordon_sweep_passes_when_damping_and_gap_are_large():
    # lambda1 = pi^2 (L=1), gamma = 3: nu = 0.01 * min(lambda1, gamma) = 0.03
    nl = Nonlinearity("sine_gordon", C=10.0, nu=0.01 * min(np.pi**2, 3.0))
    assert check_conditions(nl, (-20, 20)).passed


def test_sine_gordon_sweep_fails_for_small_nu():
    # lambda1 = 1, gamma = 0.5: u sin u - (1 - cos u) ~ -|u| defeats nu u^2 + 10 near |u| ~ 17
    r = check_conditions(Nonlinearity("sine_gordon", C=10.0, nu=0.005), (-20, 20))
    assert not r.passed
    assert r.failures[0][0] == "virial"
    assert 8 < abs(r.failures[0][1]) < 20


def test_klein_gordon_passes_with_large_constant():
    assert check_conditions(KG1.with_constants(C=30.0, nu=0.01)).passed
    c = calibrate_C(KG1.with_constants(nu=0.01))
    assert check_conditions(KG1.with_constants(C=c, nu=0.01)).passed
    assert not check_conditions(KG1.with_constants(C=0.99 * c, nu=0.01)).passed


def test_zero_constant_fails():
    r = check_conditions(KG1.with_constants(C=0.0, nu=0.01))
    assert not r.passed


def test_energy_zero_state_and_linear_case():
    m = make_model(n_modes=6)
    assert energy(State.zeros(6), m.domain, m.nl, m.norm) == 0.0
    rng = np.random.default_rng(2)
    s = State(rng.normal(size=6), rng.normal(size=6))
    mz = make_model(n_modes=6, nl=Nonlinearity("zero"))
    assert energy(s, mz.domain, mz.nl, mz.norm) == h_norm_sq(s, mz.domain, mz.norm)


@pytest.mark.parametrize("a", [0.3, 1.5, 4.0])
def test_sine_gordon_energy_matches_adaptive_quadrature(a):
    m = make_model(length=np.pi, n_modes=16)
    L = m.domain.length
    u = np.zeros(16)
    u[0] = a
    s = State(u, np.zeros(16))
    ref, _ = quad(lambda x: 1 - np.cos(a * np.sqrt(2 / L) * np.sin(np.pi * x / L)), 0, L,
                  epsabs=1e-14, epsrel=1e-14)
    expected = h_norm_sq(s, m.domain, m.norm) + 2 * ref
    assert energy(s, m.domain, m.nl, m.norm) == pytest.approx(expected, rel=1e-12)
