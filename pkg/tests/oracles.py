"""Independent closed-form references used by the tests.

Nothing here imports the integrator; these are written from the ODE/SDE
directly.
"""
import numpy as np


def damped_oscillator(u0, v0, lam, gamma, t):
    """Solution of u'' + gamma u' + lam u = 0 by the characteristic roots."""
    disc = gamma**2 - 4 * lam
    t = np.asarray(t, dtype=float)
    if disc < 0:
        w = np.sqrt(-disc) / 2
        decay = np.exp(-gamma * t / 2)
        a = u0
        bcoef = (v0 + gamma * u0 / 2) / w
        u = decay * (a * np.cos(w * t) + bcoef * np.sin(w * t))
        v = decay * ((-gamma / 2) * (a * np.cos(w * t) + bcoef * np.sin(w * t))
                     + (-a * w * np.sin(w * t) + bcoef * w * np.cos(w * t)))
        return u, v
    if disc == 0:
        r = -gamma / 2
        c2 = v0 - r * u0
        u = (u0 + c2 * t) * np.exp(r * t)
        v = (r * (u0 + c2 * t) + c2) * np.exp(r * t)
        return u, v
    sq = np.sqrt(disc)
    r1, r2 = (-gamma + sq) / 2, (-gamma - sq) / 2
    c1 = (v0 - r2 * u0) / (r1 - r2)
    c2 = u0 - c1
    u = c1 * np.exp(r1 * t) + c2 * np.exp(r2 * t)
    v = c1 * r1 * np.exp(r1 * t) + c2 * r2 * np.exp(r2 * t)
    return u, v


def transition_matrix(lam, gamma, t):
    u1, v1 = damped_oscillator(1.0, 0.0, lam, gamma, t)
    u2, v2 = damped_oscillator(0.0, 1.0, lam, gamma, t)
    return np.array([[u1, u2], [v1, v2]])


def stationary_cov(lam, gamma, b):
    """Solution of the 2x2 Lyapunov equation A S + S A^T + B B^T = 0."""
    return np.diag([b**2 / (2 * gamma * lam), b**2 / (2 * gamma)])


def finite_time_cov(lam, gamma, b, t):
    s = stationary_cov(lam, gamma, b)
    phi = transition_matrix(lam, gamma, t)
    return s - phi @ s @ phi.T


def slowest_rate(lams, gamma):
    """Slowest decay rate of the free damped oscillators (amplitude)."""
    rates = []
    for lam in lams:
        disc = gamma**2 - 4 * lam
        rates.append(gamma / 2 if disc <= 0 else (gamma - np.sqrt(disc)) / 2)
    return min(rates)
