"""Galerkin-truncated stochastic damped wave equation.

Per mode ``j`` the linear part is the damped oscillator

    d[u, v] = ([v, -lam_j u - gamma v] + [0, h_j]) dt + [0, b_j] dW_j,

which is integrated exactly (matrix exponential plus the exact Ito covariance
of the stochastic convolution).  The nonlinearity enters through a
pseudo-spectral kick ``v <- v - dt * f(u)`` sandwiched between two linear
half steps (Strang splitting).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, DivergenceError
from .nonlinearity import Nonlinearity, max_slope
from .spectral import (
    NormParams,
    SpectralDomain,
    State,
    from_collocation,
    h_norm_sq,
    hs_norm_sq,
    integrate_grid,
    to_collocation,
)

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class NoiseSpec:
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 1:
            raise ConfigurationError("noise amplitudes must be a vector")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ConfigurationError("noise amplitudes must be finite and nonnegative")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @classmethod
    def power_law(cls, n_modes, b0=1.0, decay=1.5) -> "NoiseSpec":
        j = np.arange(1, n_modes + 1, dtype=float)
        return cls(b0 * j ** (-decay))

    @classmethod
    def zero(cls, n_modes) -> "NoiseSpec":
        return cls(np.zeros(n_modes))

    @property
    def B(self) -> float:
        return float(np.sum(self.b**2))

    def B1(self, domain: SpectralDomain) -> float:
        return float(np.sum(domain.eigenvalues * self.b**2))

    @property
    def nondegenerate(self) -> bool:
        return bool(np.all(self.b > 0))


@dataclass(frozen=True)
class SimParams:
    gamma: float
    h: np.ndarray
    dt: float
    t_final: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).copy()
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        if not self.gamma > 0:
            raise ConfigurationError(f"damping gamma must be positive, got {self.gamma}")
        if not self.dt > 0:
            raise ConfigurationError(f"time step must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ConfigurationError(f"t_final must be nonnegative, got {self.t_final}")


@dataclass(frozen=True)
class Model:
    """Everything needed to advance a (batched) state by one step."""

    domain: SpectralDomain
    nl: Nonlinearity
    noise: NoiseSpec
    sim: SimParams
    norm: NormParams

    def __post_init__(self):
        n = self.domain.n_modes
        if self.noise.b.shape != (n,):
            raise ConfigurationError(f"noise has {self.noise.b.shape[0]} modes, domain has {n}")
        if self.sim.h.shape != (n,):
            raise ConfigurationError(f"forcing has {self.sim.h.shape[0]} modes, domain has {n}")

    @property
    def gamma(self) -> float:
        return self.sim.gamma

    @property
    def dt(self) -> float:
        return self.sim.dt

    @property
    def alpha(self) -> float:
        return self.norm.alpha

    def replace(self, **changes) -> "Model":
        """Copy with some of nl/noise/norm/domain swapped, or sim fields changed."""
        sim_keys = {"gamma", "h", "dt", "t_final"}
        sim_changes = {k: changes.pop(k) for k in list(changes) if k in sim_keys}
        sim = changes.pop("sim", self.sim)
        if sim_changes:
            sim = SimParams(**{**dict(gamma=sim.gamma, h=sim.h, dt=sim.dt, t_final=sim.t_final), **sim_changes})
        return Model(
            changes.pop("domain", self.domain),
            changes.pop("nl", self.nl),
            changes.pop("noise", self.noise),
            sim,
            changes.pop("norm", self.norm),
        )

    def stability_bound(self, amplitude: float = 10.0) -> float:
        """Step bound for the explicit kick: dt * sqrt(sup|f'|) <= 1.

        The linear substeps are exact, so only the nonlinear kick limits dt.
        """
        slope = max_slope(self.nl, amplitude)
        return math.inf if slope == 0 else 1.0 / math.sqrt(slope)


def f_coeffs(domain: SpectralDomain, nl: Nonlinearity, u: np.ndarray) -> np.ndarray:
    """Pseudo-spectral Galerkin coefficients of f(u)."""
    if nl.kind == "zero":
        return np.zeros_like(u)
    return from_collocation(domain, nl.f(to_collocation(domain, u)))


def energy(state: State, domain: SpectralDomain, nl: Nonlinearity, p: NormParams) -> np.ndarray:
    """``|u|_H^2 + 2 int F(u) dx`` with grid quadrature of the potential."""
    e = h_norm_sq(state, domain, p)
    if nl.kind == "zero":
        return e
    return e + 2.0 * integrate_grid(domain, nl.F(to_collocation(domain, state.u)))


@dataclass
class EnergyReport:
    energy: np.ndarray
    weight_w: np.ndarray
    weight_w_m: np.ndarray
    weight_wt_m: np.ndarray
    log_exp_term: np.ndarray
    saturated: np.ndarray


def default_kappa(noise: NoiseSpec, alpha: float) -> float:
    """Exponential-weight constant used by default.

    Capped by ``B / (2 alpha)``; the default additionally respects
    ``alpha / (2 B)``, which keeps stationary exponential moments finite.
    """
    B = noise.B
    if B == 0:
        return 0.0
    return min(B / (2 * alpha), alpha / (2 * B))


def weights(state: State, domain: SpectralDomain, nl: Nonlinearity, p: NormParams, m: int = 1,
            kappa: float = 0.0) -> EnergyReport:
    if m < 1 or int(m) != m:
        raise ValueError(f"m must be a positive integer, got {m}")
    e = np.asarray(energy(state, domain, nl, p))
    hs = np.asarray(hs_norm_sq(state, domain, p))
    w = 1.0 + hs + e**4
    w_m = 1.0 + hs**m + e ** (4 * m)
    log_exp = kappa * e
    saturated = log_exp > LOG_FLOAT_MAX
    with np.errstate(over="ignore"):
        exp_term = np.where(saturated, np.inf, np.exp(np.minimum(log_exp, LOG_FLOAT_MAX)))
    return EnergyReport(e, w, w_m, w_m + exp_term, log_exp, saturated)


def sample_noise_increment(noise: NoiseSpec, dt: float, rng: np.random.Generator, batch_shape=()) -> np.ndarray:
    """Brownian increments ``b_j * (beta_j(t + dt) - beta_j(t))``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = rng.standard_normal(tuple(batch_shape) + noise.b.shape)
    return noise.b * math.sqrt(dt) * z


def oscillator_generators(lam: np.ndarray, gamma: float) -> np.ndarray:
    a = np.zeros((lam.size, 2, 2))
    a[:, 0, 1] = 1.0
    a[:, 1, 0] = -lam
    a[:, 1, 1] = -gamma
    return a


def stochastic_convolution_cov(lam: np.ndarray, gamma: float, b: np.ndarray, tau: float) -> np.ndarray:
    """Ito covariance of ``int_0^tau e^{A(tau-s)} [0, b] dW_s`` per mode.

    Van Loan's block exponential on a short sub-interval, then exact doubling
    ``S(2t) = S(t) + P(t) S(t) P(t)^T``; the doubling only adds PSD terms, so
    no cancellation builds up for large ``gamma * tau``.
    """
    n = lam.size
    a = oscillator_generators(lam, gamma)
    rate = max(gamma, float(np.sqrt(np.max(lam))))
    k = max(0, int(np.ceil(np.log2(max(rate * tau, 1e-300) / 0.25))))
    t0 = tau / 2**k
    block = np.zeros((n, 4, 4))
    block[:, :2, :2] = -a
    block[:, 1, 3] = 1.0  # B B^T with B = [0, 1]; b_j^2 applied below
    block[:, 2:, 2:] = np.transpose(a, (0, 2, 1))
    e = expm(block * t0)
    f22 = e[:, 2:, 2:]
    cov = np.transpose(f22, (0, 2, 1)) @ e[:, :2, 2:]
    phi = np.transpose(f22, (0, 2, 1))
    for _ in range(k):
        cov = cov + phi @ cov @ np.transpose(phi, (0, 2, 1))
        phi = phi @ phi
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return cov * (b**2)[:, None, None]


def _cholesky2(cov: np.ndarray) -> np.ndarray:
    s11 = np.maximum(cov[:, 0, 0], 0.0)
    l11 = np.sqrt(s11)
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, cov[:, 1, 0] / l11, 0.0)
    l22 = np.sqrt(np.maximum(cov[:, 1, 1] - l21**2, 0.0))
    out = np.zeros_like(cov)
    out[:, 0, 0] = l11
    out[:, 1, 0] = l21
    out[:, 1, 1] = l22
    return out


class Integrator:
    """Precomputed Strang integrator for one :class:`Model`.

    Every step consumes ``(2, *batch, n_modes, 2)`` standard normals: one
    pair per mode for each linear half step.
    """

    def __init__(self, model: Model):
        self.model = model
        d = model.domain
        lam = d.eigenvalues
        tau = 0.5 * model.dt
        self.tau = tau
        self.prop = expm(oscillator_generators(lam, model.gamma) * tau)
        self.chol = _cholesky2(stochastic_convolution_cov(lam, model.gamma, model.noise.b, tau))
        self.u_eq = model.sim.h / lam
        self.has_noise = bool(np.any(model.noise.b > 0))

    def draw(self, rng: np.random.Generator, batch_shape=()) -> np.ndarray:
        return rng.standard_normal((2,) + tuple(batch_shape) + (self.model.domain.n_modes, 2))

    def linear_half(self, u, v, xi=None):
        p = self.prop
        du = u - self.u_eq
        nu_ = p[:, 0, 0] * du + p[:, 0, 1] * v + self.u_eq
        nv = p[:, 1, 0] * du + p[:, 1, 1] * v
        if xi is not None and self.has_noise:
            c = self.chol
            nu_ = nu_ + c[:, 0, 0] * xi[..., 0]
            nv = nv + c[:, 1, 0] * xi[..., 0] + c[:, 1, 1] * xi[..., 1]
        return nu_, nv

    def force(self, u):
        return f_coeffs(self.model.domain, self.model.nl, u)

    def step(self, state: State, rng: np.random.Generator | None = None, xi=None,
             force: Callable[[np.ndarray], np.ndarray] | None = None, t: float | None = None) -> State:
        """One Strang step.  ``force(u)`` overrides the Galerkin nonlinearity."""
        if xi is None and rng is not None and self.has_noise:
            xi = self.draw(rng, state.batch_shape)
        x0 = None if xi is None else xi[0]
        x1 = None if xi is None else xi[1]
        u, v = self.linear_half(state.u, state.v, x0)
        fu = self.force(u) if force is None else force(u)
        v1 = v - self.model.dt * fu
        u2, v2 = self.linear_half(u, v1, x1)
        out = State(u2, v2)
        if not (np.all(np.isfinite(u2)) and np.all(np.isfinite(v2))):
            # report the first stage, hence the first mode, that went bad
            check_finite(state, t)
            check_finite(State(u, v), t)
            check_finite(State(u, v1), t)
            check_finite(out, t)
        return out


def check_finite(state: State, t=None):
    bad = ~(np.isfinite(state.u) & np.isfinite(state.v))
    if np.any(bad):
        modes = np.nonzero(np.any(bad.reshape(-1, state.n_modes), axis=0))[0]
        j = int(modes[0]) + 1
        when = "" if t is None else f" at t={t:.6g}"
        raise DivergenceError(f"non-finite coefficients in mode {j}{when}", mode=j, time=t)


def step(state: State, model: Model, rng: np.random.Generator) -> State:
    return Integrator(model).step(state, rng)


def n_steps_for(t_final: float, dt: float) -> int:
    n = round(t_final / dt)
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigurationError(f"t_final={t_final} is not a multiple of dt={dt}")
    return int(n)


class Observer:
    """Records ``fn(state)`` every ``stride`` steps (and at t=0)."""

    def __init__(self, name: str, fn: Callable[[State], np.ndarray], stride: int = 1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.name = name
        self.fn = fn
        self.stride = int(stride)
        self.times: list[float] = []
        self.values: list[np.ndarray] = []

    def __call__(self, k: int, t: float, state: State):
        if k % self.stride == 0:
            self.times.append(t)
            self.values.append(np.asarray(self.fn(state)).copy())

    def as_arrays(self):
        return np.asarray(self.times), np.asarray(self.values)


def energy_observer(model: Model, stride: int = 1) -> Observer:
    return Observer("energy", lambda s: energy(s, model.domain, model.nl, model.norm), stride)


def state_observer(stride: int = 1) -> Observer:
    return Observer("state", lambda s: np.stack([s.u, s.v], axis=-2), stride)


@dataclass
class TrajectoryRecord:
    final_state: State
    t_final: float
    n_steps: int
    integrals: dict = field(default_factory=dict)
    energy_min: np.ndarray | None = None
    energy_max: np.ndarray | None = None
    observers: dict = field(default_factory=dict)


def simulate(model: Model, state0: State, rng: np.random.Generator | None, t_final: float | None = None,
             observers: Sequence[Observer] = (), integrands: dict | None = None,
             track_energy: bool = True) -> TrajectoryRecord:
    """Advance ``state0`` to ``t_final`` streaming samples to ``observers``.

    ``integrands`` maps names to state functionals whose time integrals are
    accumulated with the trapezoid rule on the step grid.
    """
    t_final = model.sim.t_final if t_final is None else t_final
    integ = Integrator(model)
    n = n_steps_for(t_final, model.dt)
    integrands = integrands or {}
    state = state0
    for obs in observers:
        obs(0, 0.0, state)
    prev = {k: np.asarray(fn(state), dtype=float) for k, fn in integrands.items()}
    acc = {k: np.zeros_like(v) for k, v in prev.items()}
    if track_energy:
        e = energy(state, model.domain, model.nl, model.norm)
        emin, emax = np.array(e, copy=True), np.array(e, copy=True)
    else:
        emin = emax = None
    h = model.dt
    for k in range(1, n + 1):
        t = k * h
        state = integ.step(state, rng, t=t)
        for name, fn in integrands.items():
            cur = np.asarray(fn(state), dtype=float)
            acc[name] = acc[name] + 0.5 * h * (prev[name] + cur)
            prev[name] = cur
        if track_energy:
            e = energy(state, model.domain, model.nl, model.norm)
            emin = np.minimum(emin, e)
            emax = np.maximum(emax, e)
        for obs in observers:
            obs(k, t, state)
    return TrajectoryRecord(state, n * h, n, acc, emin, emax, {o.name: o for o in observers})


def make_model(length=np.pi, n_modes=8, nl: Nonlinearity | None = None, gamma=0.5, dt=0.05,
               b=None, b0=1.0, decay=1.5, h=None, alpha=None, s=0.0, t_final=0.0) -> Model:
    """Assemble a :class:`Model` with the documented defaults filled in."""
    from .spectral import build_domain, default_alpha

    domain = build_domain(length, n_modes)
    nl = nl if nl is not None else Nonlinearity("sine_gordon")
    noise = NoiseSpec(b) if b is not None else NoiseSpec.power_law(n_modes, b0, decay)
    h = np.zeros(n_modes) if h is None else np.asarray(h, dtype=float)
    alpha = default_alpha(gamma, domain.lambda1) if alpha is None else alpha
    return Model(domain, nl, noise, SimParams(gamma, h, dt, t_final), NormParams(alpha, s))
