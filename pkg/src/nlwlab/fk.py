"""Particle estimation of the Feynman-Kac eigenvalue, eigenfunction and eigenmeasure.

Particles evolve under the dynamics, carry log-weights ``int V``, and are
systematically resampled at a fixed period.  The per-period log growth of
the mean weight averages to ``log lambda_V`` per unit time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .dynamics import Integrator, Model, n_steps_for, weights
from .errors import ConfigurationError, WeightCollapseError
from .ldp import Z95
from .observables import Observable
from .spectral import State, hs_norm_sq


@dataclass(frozen=True)
class PotentialV:
    """Potential of the form ``F o P_N`` with an oscillation budget."""
    obs: Observable
    delta: float = np.inf

    def __call__(self, state: State) -> np.ndarray:
        return self.obs(state)

    def oscillation(self, states: State) -> float:
        vals = self.obs(states)
        return float(np.max(vals) - np.min(vals))

    def validate(self, states: State) -> float:
        osc = self.oscillation(states)
        if osc >= self.delta:
            raise ConfigurationError(f"oscillation {osc:.4g} of V is not below delta={self.delta:g}")
        return osc

    @property
    def is_zero(self) -> bool:
        return self.obs.constant == 0.0


def ess_of(logw: np.ndarray) -> float:
    return float(np.exp(2 * logsumexp(logw) - logsumexp(2 * logw)))


def systematic_resample(logw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    M = logw.size
    w = np.exp(logw - logw.max())
    c = np.cumsum(w)
    c /= c[-1]
    pos = (rng.random() + np.arange(M)) / M
    return np.minimum(np.searchsorted(c, pos, side="right"), M - 1)


@dataclass
class ParticleEnsemble:
    particles: State
    log_weights: np.ndarray
    generation: int = 0
    growth: list = field(default_factory=list)       # per-period log mean-weight growth
    ess_history: list = field(default_factory=list)


@dataclass
class CloningResult:
    lam_hat: float
    log_lam: float
    log_lam_ci: float
    ensemble: ParticleEnsemble
    period: float
    burn_in: int

    @property
    def mu_particles(self) -> State:
        return self.ensemble.particles


def _advance(integ: Integrator, s: State, V: PotentialV, n_steps: int, rng, t0: float):
    """Propagate and return (state, trapezoid integral of V)."""
    h = integ.model.dt
    prev = V(s)
    acc = np.zeros(s.batch_shape)
    for k in range(1, n_steps + 1):
        s = integ.step(s, rng, t=t0 + k * h)
        cur = V(s)
        acc += 0.5 * h * (prev + cur)
        prev = cur
    return s, acc


def _batch_means_ci(x: np.ndarray, n_batches: int = 10) -> float:
    if x.size < 2:
        return np.inf
    nb = min(n_batches, x.size)
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    if nb < 2:
        return np.inf
    return float(Z95 * means.std(ddof=1) / np.sqrt(nb))


def run_cloning(model: Model, V: PotentialV, M: int, T: float, rng: np.random.Generator,
                period: float = 1.0, state0: State | None = None, burn_in: float = 0.0,
                ess_floor: float | None = None) -> CloningResult:
    """Cloning estimator of ``lambda_V`` and a particle sample of ``mu_V``."""
    if period < model.dt:
        raise ConfigurationError("resampling period shorter than dt")
    n_per = n_steps_for(period, model.dt)
    n_periods = int(round(T / period))
    if abs(n_periods * period - T) > 1e-9 * max(1.0, T):
        raise ConfigurationError("T must be a multiple of the resampling period")
    n_burn = int(round(burn_in / period))
    if n_burn >= n_periods:
        raise ConfigurationError("burn-in consumes the whole run")
    ess_floor = M / 100 if ess_floor is None else ess_floor
    integ = Integrator(model)
    s = (state0 if state0 is not None else State.zeros(model.domain.n_modes))
    s = s if s.batch_shape == (M,) else s.broadcast((M,))
    ens = ParticleEnsemble(s, np.zeros(M))
    for k in range(n_periods):
        s, a = _advance(integ, ens.particles, V, n_per, rng, k * period)
        lw = ens.log_weights + a
        g = float(logsumexp(lw) - np.log(M))
        ess = ess_of(lw)
        ens.ess_history.append(ess)
        if ess < ess_floor:
            raise WeightCollapseError(f"ESS {ess:.1f} fell below {ess_floor:.1f} in period {k}", ess=ess,
                                      generation=k)
        ens.growth.append(g)
        if np.all(lw == lw[0]):
            idx = np.arange(M)
        else:
            idx = systematic_resample(lw, rng)
        ens.particles = s[idx]
        ens.log_weights = np.zeros(M)
        ens.generation += 1
    g = np.asarray(ens.growth[n_burn:])
    log_lam = float(g.mean() / period)
    ci = _batch_means_ci(g) / period
    return CloningResult(float(np.exp(log_lam)), log_lam, ci, ens, period, n_burn)


@dataclass
class HEstimate:
    values: np.ndarray
    ci: np.ndarray
    raw: np.ndarray
    mu_average: float
    t: float
    variance_flag: np.ndarray


def _log_fk_moment(model, V, starts: State, t, rng, reps: int):
    """log E_x exp(int_0^t V) for each start, with reps trajectories per start; returns (log mean, rel SE)."""
    integ = Integrator(model)
    n = n_steps_for(t, model.dt)
    B = starts.batch_shape[0]
    s = State(np.repeat(starts.u, reps, axis=0), np.repeat(starts.v, reps, axis=0))
    _, a = _advance(integ, s, V, n, rng, 0.0)
    a = a.reshape(B, reps)
    lm = logsumexp(a, axis=1) - np.log(reps)
    w = np.exp(a - lm[:, None])
    rel_se = w.std(axis=1, ddof=1) / np.sqrt(reps) if reps > 1 else np.full(B, np.inf)
    return lm, rel_se, a


def estimate_h(model: Model, V: PotentialV, lam_hat: float, probes: State, t: float, mu: State,
               rng: np.random.Generator, reps: int = 1000, mu_reps: int = 1, max_rel_se: float = 0.2) -> HEstimate:
    """Eigenfunction values at probe states, normalised to unit mean under mu.

    ``h(x) = lambda^{-t} E_x exp(int_0^t V)``; dividing by its mu-average
    cancels lambda, which makes the normalisation exact by construction.
    """
    if probes.batch_shape == ():
        probes = probes.broadcast((1,))
    log_lam = np.log(lam_hat)
    lm, rel_se, _ = _log_fk_moment(model, V, probes, t, rng, reps)
    raw = np.exp(lm - log_lam * t)
    lmu, _, amu = _log_fk_moment(model, V, mu, t, rng, mu_reps)
    flat = amu.reshape(-1)
    mu_avg = float(np.exp(logsumexp(flat) - np.log(flat.size) - log_lam * t))
    wmu = np.exp(flat - flat.max())
    mu_rel_se = wmu.std(ddof=1) / wmu.mean() / np.sqrt(flat.size) if flat.size > 1 else 0.0
    vals = raw / mu_avg
    ci = Z95 * vals * np.sqrt(rel_se**2 + mu_rel_se**2)
    if V.is_zero:
        vals = np.ones_like(vals)
        ci = np.zeros_like(vals)
    return HEstimate(vals, ci, raw, mu_avg, t, rel_se > max_rel_se)


def normalise_h(values: np.ndarray, mu_values: np.ndarray) -> np.ndarray:
    """Scale h so that its average over the mu sample is exactly one."""
    return values / np.mean(mu_values)


@dataclass
class EigenRelation:
    names: list
    lhs: np.ndarray
    rhs: np.ndarray
    rel_error: np.ndarray
    rel_ci: np.ndarray
    passed: bool
    tol: float


def check_eigen_relation(model: Model, V: PotentialV, lam_hat: float, mu: State, psis: Sequence[Observable],
                         t: float, rng: np.random.Generator, tol: float = 0.1) -> EigenRelation:
    """``<P_t^V psi, mu> = lambda^t <psi, mu>`` with the left side from propagating mu."""
    integ = Integrator(model)
    n = n_steps_for(t, model.dt)
    end, a = _advance(integ, mu, V, n, rng, 0.0)
    w = np.exp(a - np.log(lam_hat) * t)  # weights relative to lambda^t
    M = w.size
    lhs, rhs, rel, rel_ci, names = [], [], [], [], []
    for psi in psis:
        x = psi(end) * w
        y = psi(mu)
        L, R = float(x.mean()), float(y.mean())
        lhs.append(L)
        rhs.append(R)
        r = L / R - 1.0
        # delta method for the ratio of two means of independent-ish samples
        se = abs(L / R) * np.sqrt((x.std(ddof=1) / L) ** 2 / M + (y.std(ddof=1) / R) ** 2 / M) if R != 0 else np.inf
        rel.append(abs(r))
        rel_ci.append(Z95 * se)
        names.append(psi.name)
    rel = np.asarray(rel)
    return EigenRelation(names, np.asarray(lhs), np.asarray(rhs), rel, np.asarray(rel_ci), bool(np.all(rel <= tol)), tol)


@dataclass
class MomentBound:
    sizes: list
    power_means: dict          # m -> array over sizes of (E |u|^m)^(1/m)
    moments: dict              # m -> array over sizes of E(1 + |u|^m)
    ses: dict
    exp_moment: np.ndarray
    exp_saturated: bool
    stable: bool
    monotone_in_m: bool


def verify_moment_bound(model: Model, mu: State, m_values=(1, 2, 4), kappa: float = 0.0, n_doublings: int = 4,
                        z: float = 3.0) -> MomentBound:
    """Moments of mu on nested subsamples of doubling size.

    Stable means consecutive estimates agree within z combined standard
    errors.  Monotonicity in m is asserted on the power means
    ``(E|u|^m)^(1/m)``, which are nondecreasing by Lyapunov's inequality.
    """
    M = mu.batch_shape[0]
    sizes = [M // 2**k for k in range(n_doublings - 1, -1, -1)]
    sizes = [s for s in sizes if s >= 2]
    d, p = model.domain, model.norm
    r = np.sqrt(hs_norm_sq(mu, d, p))
    rep = weights(mu, d, model.nl, p, m=1, kappa=kappa)
    sat = bool(np.any(rep.saturated))
    pm, mom, ses = {}, {}, {}
    stable = True
    for m in m_values:
        vals = 1.0 + r**m
        mom[m] = np.array([vals[:s].mean() for s in sizes])
        ses[m] = np.array([vals[:s].std(ddof=1) / np.sqrt(s) for s in sizes])
        pm[m] = np.array([np.mean(r[:s] ** m) ** (1.0 / m) for s in sizes])
        for i in range(len(sizes) - 1):
            if abs(mom[m][i + 1] - mom[m][i]) > z * np.hypot(ses[m][i], ses[m][i + 1]):
                stable = False
    expm = np.array([np.mean(np.exp(np.minimum(rep.log_exp_term[:s], 700.0))) for s in sizes])
    ms = sorted(m_values)
    mono = all(np.all(pm[ms[i + 1]] >= pm[ms[i]] * (1 - 1e-12)) for i in range(len(ms) - 1))
    return MomentBound(sizes, pm, mom, ses, expm, sat, stable and not sat, mono)
