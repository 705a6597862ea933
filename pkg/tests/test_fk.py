import numpy as np
import pytest

from nlwlab.dynamics import make_model
from nlwlab.errors import ConfigurationError, WeightCollapseError
from nlwlab.fk import (PotentialV, check_eigen_relation, ess_of, estimate_h, run_cloning, systematic_resample,
                       verify_moment_bound)
from nlwlab.ldp import estimate_pressure
from nlwlab.observables import constant_observable, cos_mode, tanh_mode
from nlwlab.spectral import State
from nlwlab.streams import split_stream


@pytest.fixture(scope="module")
def model():
    return make_model(n_modes=4, gamma=0.5, dt=0.1)


@pytest.fixture(scope="module")
def cos_run(model):
    V = PotentialV(cos_mode(1).scaled(0.2), delta=1.0)
    return V, run_cloning(model, V, 4000, 20.0, split_stream(11, 0), burn_in=5.0)


def test_systematic_resample_counts():
    rng = np.random.default_rng(0)
    logw = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
    idx = systematic_resample(np.repeat(logw, 250), rng)
    counts = np.bincount(idx // 250, minlength=4)
    np.testing.assert_allclose(counts, [100, 200, 300, 400], atol=1)


def test_ess_bounds():
    assert ess_of(np.zeros(50)) == pytest.approx(50)
    assert ess_of(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1)


def test_zero_potential_gives_unit_eigenvalue_and_eigenfunction(model):
    V = PotentialV(constant_observable(0.0))
    res = run_cloning(model, V, 200, 5.0, split_stream(0, 0))
    assert res.lam_hat == 1.0
    probes = State(np.array([[0.0] * 4, [1.5, 0, 0, 0]]), np.zeros((2, 4)))
    h = estimate_h(model, V, res.lam_hat, probes, 1.0, res.mu_particles, split_stream(0, 1), reps=10)
    assert np.all(h.values == 1.0)


def test_constant_potential_gives_exponential(model):
    res = run_cloning(model, PotentialV(constant_observable(0.3)), 200, 5.0, split_stream(0, 0))
    assert res.log_lam == pytest.approx(0.3, abs=1e-12)


def test_shift_moves_log_eigenvalue_by_constant(model):
    base = tanh_mode(1, amplitude=0.2)
    r0 = run_cloning(model, PotentialV(base), 500, 6.0, split_stream(5, 0))
    r1 = run_cloning(model, PotentialV(base.shifted(0.5)), 500, 6.0, split_stream(5, 0))
    assert r1.log_lam - r0.log_lam == pytest.approx(0.5, abs=1e-9)


def test_cloning_matches_pressure(model, cos_run):
    V, res = cos_run
    curve = estimate_pressure(model, V.obs, [1.0], 20.0, 4000, split_stream(12, 0), delta=1.0, t_burn=5.0)
    gap = abs(res.log_lam - curve.q[0])
    assert gap <= 3 * np.hypot(res.log_lam_ci, curve.ci[0]) + 1e-3


def test_eigenfunction_positive_and_stable_in_horizon(model, cos_run):
    V, res = cos_run
    probes = State(np.array([[0.0] * 4, [1.5, 0, 0, 0]]), np.zeros((2, 4)))
    h1 = estimate_h(model, V, res.lam_hat, probes, 3.0, res.mu_particles, split_stream(13, 0), reps=2000)
    h2 = estimate_h(model, V, res.lam_hat, probes, 6.0, res.mu_particles, split_stream(13, 1), reps=2000)
    assert np.all(h1.values > 0)
    np.testing.assert_allclose(h1.values, h2.values, rtol=0.05)


def test_eigen_relation_holds(model, cos_run):
    V, res = cos_run
    psis = [constant_observable(1.0), cos_mode(1), tanh_mode(1, shift=2.0)]
    rel = check_eigen_relation(model, V, res.lam_hat, res.mu_particles, psis, 2.0, split_stream(14, 0))
    assert rel.passed, rel.rel_error


def test_potential_oscillation_budget(model, cos_run):
    V, res = cos_run
    assert V.validate(res.mu_particles) < 1.0
    with pytest.raises(ConfigurationError):
        PotentialV(cos_mode(1), delta=0.1).validate(res.mu_particles)


def test_weight_collapse_raises(model):
    V = PotentialV(tanh_mode(1, amplitude=50.0))
    with pytest.raises(WeightCollapseError) as exc:
        run_cloning(model, V, 100, 5.0, split_stream(0, 0), period=5.0, ess_floor=50,
                    state0=State(np.random.default_rng(0).normal(size=(100, 4)), np.zeros((100, 4))))
    assert exc.value.ess < 50


def test_cloning_rejects_bad_periods(model):
    V = PotentialV(constant_observable(0.0))
    with pytest.raises(ConfigurationError):
        run_cloning(model, V, 10, 5.0, split_stream(0, 0), period=0.05)
    with pytest.raises(ConfigurationError):
        run_cloning(model, V, 10, 5.5, split_stream(0, 0), period=1.0)


def test_moment_bound_stable_and_monotone(model, cos_run):
    _, res = cos_run
    mb = verify_moment_bound(model, res.mu_particles, m_values=(1, 2, 4), kappa=0.0)
    assert mb.stable and mb.monotone_in_m
    assert np.all(mb.exp_moment == 1.0)
