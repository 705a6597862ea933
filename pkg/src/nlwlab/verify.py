"""Ensemble checks of the Lyapunov, energy-moment and tightness bounds.

The analytic constants in these bounds are existential, so the verifiers
fit them: a decay rate and an additive plateau from ensemble means, with
bootstrap intervals over trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import logsumexp

from .dynamics import Model, Observer, energy, simulate, weights
from .spectral import State, hs_norm_sq


@dataclass
class DecayFit:
    amplitude: float
    rate: float
    plateau: float
    converged: bool
    rate_ci: tuple = (np.nan, np.nan)
    plateau_ci: tuple = (np.nan, np.nan)


def fit_decay(t: np.ndarray, y: np.ndarray) -> DecayFit:
    """Fit ``y ~ A exp(-r t) + C`` (A, r, C >= 0) by least squares in log space."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    floor = np.min(y[y > 0]) if np.any(y > 0) else 1.0
    y = np.maximum(y, 1e-12 * floor)
    span = t[-1] - t[0] if t[-1] > t[0] else 1.0
    tail = y[-max(1, len(y) // 5):].mean()
    a0 = max(y[0] - tail, 1e-12 * y[0])
    r0 = 1.0 / span
    # guess the rate from where the excess first halves
    excess = y - tail
    half = np.nonzero(excess <= 0.5 * excess[0])[0]
    if excess[0] > 0 and half.size and t[half[0]] > t[0]:
        r0 = np.log(2) / (t[half[0]] - t[0])
    x0 = np.log([a0, r0, max(tail, 1e-12 * y[0])])

    def resid(p):
        a, r, c = np.exp(p)
        return np.log(a * np.exp(-r * (t - t[0])) + c) - np.log(y)

    sol = least_squares(resid, x0, method="trf", x_scale="jac", max_nfev=2000)
    a, r, c = np.exp(sol.x)
    return DecayFit(float(a * np.exp(r * t[0])), float(r), float(c), bool(sol.success))


@dataclass
class EnsembleCurve:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    samples: np.ndarray  # (n_times, M)


def ensemble_curve(model: Model, state0: State, M: int, horizon: float, n_times: int,
                   functional: Callable[[State], np.ndarray], rng) -> EnsembleCurve:
    n_steps = int(round(horizon / model.dt))
    stride = max(1, n_steps // max(1, n_times - 1))
    start = state0 if state0.batch_shape else state0.broadcast((M,))
    obs = Observer("f", functional, stride)
    simulate(model, start, rng, t_final=horizon, observers=[obs], track_energy=False)
    times, vals = obs.as_arrays()
    vals = vals.reshape(len(times), -1)
    M_eff = vals.shape[1]
    se = vals.std(axis=1, ddof=1) / np.sqrt(M_eff) if M_eff > 1 else np.zeros(len(times))
    return EnsembleCurve(times, vals.mean(axis=1), se, vals)


def _bootstrap_fits(curve: EnsembleCurve, n_boot: int, rng) -> tuple[np.ndarray, np.ndarray]:
    M = curve.samples.shape[1]
    rates, plateaus = [], []
    for _ in range(n_boot):
        idx = rng.integers(0, M, M)
        f = fit_decay(curve.times, curve.samples[:, idx].mean(axis=1))
        rates.append(f.rate)
        plateaus.append(f.plateau)
    return np.asarray(rates), np.asarray(plateaus)


def flatness(curve: EnsembleCurve) -> float:
    """Reduced chi-square of the ensemble means against their average (about 1 when flat)."""
    se = curve.se
    if np.all(se == 0):
        return 0.0 if np.ptp(curve.mean) == 0 else np.inf
    dev = (curve.mean - curve.mean.mean()) / np.where(se > 0, se, np.inf)
    return float(np.sum(dev**2) / max(1, len(curve.times) - 1))


@dataclass
class LyapunovReport:
    status: str
    m: int
    alpha_hat: float
    alpha_ci: tuple
    C_hat: float
    C_ci: tuple
    initial_weights: list
    fits: list
    curves: list
    worst_margin: float
    flatness: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def verify_lyapunov(model: Model, initial_states: Sequence[State], m: int = 1, M: int = 1000,
                    horizon: float = 10.0, n_times: int = 41, rng=None, n_boot: int = 40,
                    z: float = 1.96) -> LyapunovReport:
    """Fit ``E w_m(u_t) <= 2 exp(-alpha m t) w_m(v) + C_m`` across initial states.

    An initial state with a batch axis is used as-is as the starting
    ensemble (e.g. stationary samples); an unbatched one is copied M times.

    alpha_hat is the smallest fitted rate over the initial states divided by
    m; C_hat is the largest fitted plateau (upper bootstrap bound).  The
    bound is then checked at every grid time against the mean minus z
    standard errors.
    """
    rng = rng if rng is not None else np.random.default_rng()
    d, nl, p = model.domain, model.nl, model.norm

    def w_m(s):
        return weights(s, d, nl, p, m=m).weight_w_m

    fits, curves, w0s, rate_boot, plat_boot, flat, diag = [], [], [], [], [], [], []
    for s0 in initial_states:
        curve = ensemble_curve(model, s0, M, horizon, n_times, w_m, rng)
        fit = fit_decay(curve.times, curve.mean)
        rb, pb = _bootstrap_fits(curve, n_boot, rng)
        fit.rate_ci = tuple(np.quantile(rb, [0.025, 0.975]))
        fit.plateau_ci = tuple(np.quantile(pb, [0.025, 0.975]))
        if not fit.converged:
            diag.append(f"fit did not converge for w_m(v)={float(np.mean(w_m(s0))):.4g}")
        fits.append(fit)
        curves.append(curve)
        w0s.append(float(np.mean(w_m(s0))))
        rate_boot.append(rb)
        plat_boot.append(pb)
        flat.append(flatness(curve))

    # only curves that start well above their plateau carry rate information
    decaying = [i for i, (f, w0) in enumerate(zip(fits, w0s)) if w0 > 2.0 * max(f.plateau_ci[1], f.plateau)]
    if not decaying:
        diag.append("no initial state starts above the fitted plateau; rate unresolved")
        alpha_hat, alpha_ci = np.nan, (np.nan, np.nan)
    else:
        k = min(decaying, key=lambda i: fits[i].rate)
        alpha_hat = fits[k].rate / m
        alpha_ci = (fits[k].rate_ci[0] / m, fits[k].rate_ci[1] / m)
    j = int(np.argmax([f.plateau for f in fits]))
    C_hat = float(max(fits[j].plateau_ci[1], fits[j].plateau))
    C_ci = fits[j].plateau_ci

    worst = np.inf
    for curve, w0 in zip(curves, w0s):
        bound = 2 * np.exp(-alpha_hat * m * curve.times) * w0 + C_hat
        worst = min(worst, float(np.min(bound - (curve.mean - z * curve.se))))
    finite = np.isfinite(C_hat) and np.isfinite(alpha_hat)
    if not finite or any(not f.converged for f in fits):
        status = "inconclusive"
    elif alpha_ci[0] > 0 and worst >= 0:
        status = "pass"
    else:
        status = "fail"
    return LyapunovReport(status, m, alpha_hat, alpha_ci, C_hat, C_ci, w0s, fits, curves, worst, flat, diag)


@dataclass
class MomentReport:
    status: str
    k: int
    rate: float
    rate_ci: tuple
    C_hat: float
    curve: EnsembleCurve
    worst_margin: float
    pathwise_ok: bool | None = None


def verify_energy_moment(model: Model, state0: State, k: int = 1, M: int = 1000, horizon: float = 10.0,
                         n_times: int = 41, rng=None, n_boot: int = 40, z: float = 1.96) -> MomentReport:
    """Check ``E E^k(u_t) <= exp(-alpha k t) E^k(v) + C`` with a fitted C.

    Without noise the inequality is checked pathwise (C = 0 when f = 0).
    """
    rng = rng if rng is not None else np.random.default_rng()
    d, nl, p = model.domain, model.nl, model.norm
    noiseless = not np.any(model.noise.b > 0)
    Mr = 1 if noiseless else M

    def ek(s):
        return energy(s, d, nl, p) ** k

    curve = ensemble_curve(model, state0, Mr, horizon, n_times, ek, rng)
    e0 = float(np.mean(ek(state0)))
    decay = np.exp(-model.alpha * k * curve.times) * e0
    if noiseless:
        excess = curve.mean - decay
        C_hat = float(max(0.0, excess.max()))
        ok = bool(np.all(curve.mean <= decay * (1 + 1e-9) + C_hat))
        fit = fit_decay(curve.times, np.maximum(curve.mean, 1e-300))
        return MomentReport("pass" if ok else "fail", k, fit.rate, (fit.rate, fit.rate), C_hat, curve,
                           float(np.min(decay + C_hat - curve.mean)), pathwise_ok=ok)
    fit = fit_decay(curve.times, curve.mean)
    rb, pb = _bootstrap_fits(curve, n_boot, rng)
    C_hat = float(np.quantile(pb, 0.975))
    margin = float(np.min(decay + C_hat - (curve.mean - z * curve.se)))
    status = "pass" if margin >= 0 and np.isfinite(C_hat) else "fail"
    return MomentReport(status, k, fit.rate, tuple(np.quantile(rb, [0.025, 0.975])), C_hat, curve, margin)


@dataclass
class TightnessReport:
    status: str
    kappa: float
    times: np.ndarray
    log_moment: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    c_hat: float
    ess: np.ndarray
    saturated: bool


def verify_exp_tightness(model: Model, state0: State, kappa: float, M: int = 1000, horizon: float = 10.0,
                         n_times: int = 11, rng=None, min_ess_frac: float = 0.01) -> TightnessReport:
    """``log E exp(int_0^t |u|_{H^s}^kappa)`` against ``log c + c t``."""
    rng = rng if rng is not None else np.random.default_rng()
    d, p = model.domain, model.norm

    def integrand(s):
        return hs_norm_sq(s, d, p) ** (0.5 * kappa)

    n_steps = int(round(horizon / model.dt))
    stride = max(1, n_steps // max(1, n_times - 1))
    # record running integral by sampling the integrand and cumulating exactly
    obs = Observer("g", integrand, 1)
    start = state0 if state0.batch_shape else state0.broadcast((M,))
    simulate(model, start, rng, t_final=horizon, observers=[obs], track_energy=False)
    times, g = obs.as_arrays()
    g = g.reshape(len(times), -1)
    h = model.dt
    cum = np.concatenate([np.zeros((1, g.shape[1])), np.cumsum(0.5 * h * (g[1:] + g[:-1]), axis=0)])
    sel = np.arange(0, len(times), stride)[1:]
    t_sel = times[sel]
    logm = np.array([logsumexp(cum[i]) - np.log(g.shape[1]) for i in sel])
    ess = np.array([np.exp(2 * logsumexp(cum[i]) - logsumexp(2 * cum[i])) for i in sel])
    A = np.vstack([np.ones_like(t_sel), t_sel]).T
    coef, res, *_ = np.linalg.lstsq(A, logm, rcond=None)
    intercept, slope = coef
    dof = max(1, len(t_sel) - 2)
    sigma2 = float(np.sum((logm - A @ coef) ** 2) / dof)
    cov = sigma2 * np.linalg.inv(A.T @ A)
    slope_se = float(np.sqrt(cov[1, 1]))
    c_hat = float(max(np.exp(intercept), 1.0, slope + 2 * slope_se))
    saturated = bool(np.any(ess < min_ess_frac * g.shape[1]))
    ok = bool(np.all(logm <= np.log(c_hat) + c_hat * t_sel + 1e-9))
    status = "saturated" if saturated else ("pass" if ok else "fail")
    return TightnessReport(status, kappa, t_sel, logm, float(slope), slope_se, float(intercept), c_hat, ess,
                           saturated)


def verify_exp_moment(model: Model, state0: State, *, k: int | None = None, kappa: float | None = None,
                      **kwargs):
    """Dispatch to the polynomial energy-moment check (``k``) or the
    exponential tightness check (``kappa``)."""
    if (k is None) == (kappa is None):
        raise ValueError("give exactly one of k or kappa")
    if k is not None:
        return verify_energy_moment(model, state0, k=k, **kwargs)
    return verify_exp_tightness(model, state0, kappa, **kwargs)
