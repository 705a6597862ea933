"""Steady states, exact control along a cubic blend, and low-mode feedback stabilisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec, solve_ivp

from .dynamics import Integrator, Model, f_coeffs, n_steps_for
from .errors import ConvergenceError
from .spectral import SpectralDomain, State, h_norm_sq, to_collocation
from .nonlinearity import Nonlinearity


def _f_jacobian(domain: SpectralDomain, nl: Nonlinearity, v: np.ndarray) -> np.ndarray:
    """Derivative of v -> P f(v); entry [i, k] is d(out_k)/d(v_i)."""
    grid = to_collocation(domain, v)
    syn = domain._synthesis          # (n, G): coeffs @ syn -> grid
    ana = domain._analysis           # (G, n): grid @ ana -> coeffs
    return (syn * nl.df(grid)) @ ana if nl.kind != "zero" else np.zeros((domain.n_modes,) * 2)


def solve_steady_state(domain: SpectralDomain, nl: Nonlinearity, h: np.ndarray, tol: float = 1e-10,
                       max_iter: int = 100, v0: np.ndarray | None = None) -> np.ndarray:
    """Damped Newton for ``lam v + P f(v) = h`` in coefficients.

    Raises :class:`ConvergenceError` with the residual history if the
    residual (Euclidean norm of coefficients) does not reach ``tol``.
    """
    lam = domain.eigenvalues
    h = np.asarray(h, dtype=float)
    v = np.zeros_like(h) if v0 is None else np.array(v0, dtype=float)

    def residual(x):
        return lam * x + f_coeffs(domain, nl, x) - h

    r = residual(v)
    hist = [float(np.linalg.norm(r))]
    for _ in range(max_iter):
        if hist[-1] <= tol:
            return v
        J = np.diag(lam) + _f_jacobian(domain, nl, v).T
        step = np.linalg.solve(J, -r)
        t = 1.0
        while True:
            cand = v + t * step
            rc = residual(cand)
            if np.linalg.norm(rc) < (1 - 1e-4 * t) * hist[-1] or t < 1e-8:
                break
            t *= 0.5
        v, r = cand, rc
        hist.append(float(np.linalg.norm(r)))
    if hist[-1] <= tol:
        return v
    raise ConvergenceError(f"Newton did not reach residual {tol:g} (last {hist[-1]:.3e})", history=hist)


# cubic blends: a(0)=1, b(1)=1, c'(1)=1, all other endpoint values/derivatives zero
def blend(t):
    t = np.asarray(t, dtype=float)
    a = 1 - 3 * t**2 + 2 * t**3
    b = 3 * t**2 - 2 * t**3
    c = t**3 - t**2
    return a, b, c


def blend_d(t):
    t = np.asarray(t, dtype=float)
    return -6 * t + 6 * t**2, 6 * t - 6 * t**2, 3 * t**2 - 2 * t


def blend_dd(t):
    t = np.asarray(t, dtype=float)
    return -6 + 12 * t, 6 - 12 * t, 6 * t - 2


@dataclass
class ControlPath:
    """Control ``phi(t) = int_0^t (u'' + gamma u' - Lap u + f(u) - h)`` along the blend."""
    model: Model
    v_hat: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    T: float = 1.0

    def path(self, t):
        s = np.asarray(t, dtype=float) / self.T
        a, b, c = blend(s)
        return np.multiply.outer(a, self.v_hat) + np.multiply.outer(b, self.u1) + self.T * np.multiply.outer(c, self.u2)

    def path_d(self, t):
        s = np.asarray(t, dtype=float) / self.T
        a, b, c = blend_d(s)
        return (np.multiply.outer(a, self.v_hat) + np.multiply.outer(b, self.u1)) / self.T + np.multiply.outer(c, self.u2)

    def path_dd(self, t):
        s = np.asarray(t, dtype=float) / self.T
        a, b, c = blend_dd(s)
        return (np.multiply.outer(a, self.v_hat) + np.multiply.outer(b, self.u1)) / self.T**2 \
            + np.multiply.outer(c, self.u2) / self.T

    def phi_dot(self, t):
        m = self.model
        u = self.path(t)
        return (self.path_dd(t) + m.gamma * self.path_d(t) + m.domain.eigenvalues * u
                + f_coeffs(m.domain, m.nl, u) - m.sim.h)

    def phi(self, t, epsabs=1e-13):
        if t == 0:
            return np.zeros_like(self.v_hat)
        val, _ = quad_vec(self.phi_dot, 0.0, float(t), epsabs=epsabs, epsrel=1e-12)
        return val


@dataclass
class ControlResult:
    control: ControlPath
    endpoint: State
    target: State
    endpoint_error: float      # |endpoint - target|_H
    nfev: int


def replay(model: Model, start: State, forcing, T: float, rtol=1e-12, atol=1e-14):
    """Integrate ``u'' + gamma u' + lam u + P f(u) = h + forcing(t)`` from ``start`` (no noise)."""
    lam = model.domain.eigenvalues
    n = lam.size

    def rhs(t, y):
        u, v = y[:n], y[n:]
        acc = -model.gamma * v - lam * u - f_coeffs(model.domain, model.nl, u) + model.sim.h + forcing(t)
        return np.concatenate([v, acc])

    sol = solve_ivp(rhs, (0.0, T), np.concatenate([start.u, start.v]), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ConvergenceError(f"replay failed: {sol.message}")
    y = sol.y[:, -1]
    return State(y[:n], y[n:]), sol.nfev


def control_to_target(model: Model, v_hat: np.ndarray, target: State, T: float = 1.0) -> ControlResult:
    """Steer ``[v_hat, 0]`` to ``target`` in time T and replay the controlled dynamics."""
    v_hat = np.asarray(v_hat, dtype=float)
    cp = ControlPath(model, v_hat, np.asarray(target.u, float), np.asarray(target.v, float), T)
    start = State(v_hat, np.zeros_like(v_hat))
    end, nfev = replay(model, start, cp.phi_dot, T)
    err = float(np.sqrt(h_norm_sq(end - target, model.domain, model.norm)))
    return ControlResult(cp, end, target, err, nfev)


@dataclass
class FeedbackReport:
    levels: list
    rates: dict               # N -> fitted decay rate of |v~ - v^|^2_H (minimum over the test set)
    decays: dict              # N -> bool, |w_t|^2 <= exp(-alpha t)|w_0|^2 at every sample on every start
    alpha: float
    N_min: int | None
    curves: dict              # N -> (times, |w_t|^2 array (n_times, n_starts))
    diverged: list


def _feedback_curve(model: Model, v_hat: np.ndarray, starts: State, N: int, horizon: float):
    integ = Integrator(model)
    d, p = model.domain, model.norm
    f_hat = f_coeffs(d, model.nl, v_hat)
    target = State(v_hat, np.zeros_like(v_hat))

    def force(u):
        out = integ.force(u)
        out[..., :N] = f_hat[:N]
        return out

    n = n_steps_for(horizon, model.dt)
    s = starts
    vals = [h_norm_sq(s - target, d, p)]
    for k in range(1, n + 1):
        s = integ.step(s, force=force, t=k * model.dt)
        vals.append(h_norm_sq(s - target, d, p))
    return np.arange(n + 1) * model.dt, np.asarray(vals)


def feedback_stabilize(model: Model, starts: State, v_hat: np.ndarray, levels, horizon: float) -> FeedbackReport:
    """Run the low-mode feedback system without noise for each N in ``levels``.

    The feedback replaces the first N Galerkin modes of f(v~) by those of
    f(v_hat); the rate is the slope of ``-log |v~ - v_hat|^2_H`` over the
    horizon, taken as the worst case over the test set.
    """
    from .errors import DivergenceError

    alpha = model.alpha
    rates, decays, curves, diverged = {}, {}, {}, []
    for N in levels:
        try:
            t, w = _feedback_curve(model, v_hat, starts, N, horizon)
        except DivergenceError:
            diverged.append(N)
            rates[N], decays[N] = -np.inf, False
            continue
        curves[N] = (t, w)
        w2 = w.reshape(len(t), -1)
        w0 = w2[0]
        with np.errstate(divide="ignore"):
            lw = np.log(w2)
        if np.all(w0 == 0):
            rates[N], decays[N] = np.inf, True
            continue
        live = w0 > 0
        A = np.vstack([np.ones_like(t), t]).T
        slopes = np.linalg.lstsq(A, lw[:, live], rcond=None)[0][1]
        rates[N] = float(-np.max(slopes))
        bound = np.log(w0[live]) - alpha * t[:, None]
        decays[N] = bool(np.all(lw[:, live] <= bound + 1e-9))
    N_min = next((N for N in sorted(levels) if decays[N]), None)
    return FeedbackReport(list(levels), rates, decays, alpha, N_min, curves, diverged)
