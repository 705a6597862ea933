"""Pressure functions, Legendre transforms and empirical large-deviation rates.

Pressure is estimated as ``(1/t) log mean exp(beta int_0^t psi)`` over an
ensemble in log-sum-exp form.  On a fixed sample this is exactly convex in
beta and its slope is a weighted time average of psi, so convexity and the
Lipschitz bound hold up to roundoff; the jackknife CI measures the
Monte Carlo error of each point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import logsumexp

from .dynamics import Integrator, Model, n_steps_for
from .errors import ConfigurationError
from .observables import Observable
from .spectral import State

Z95 = 1.959963984540054


def beta0_for(delta: float, sup_norm: float) -> float:
    """Half-width of the admissible beta range: ``delta / (4 sup|psi|)``."""
    if not delta > 0 or not sup_norm > 0:
        raise ValueError("delta and sup_norm must be positive")
    return delta / (4.0 * sup_norm)


def path_integrals(model: Model, state0: State, psi: Observable, t_grid: Sequence[float], M: int,
                   rng: np.random.Generator | None) -> np.ndarray:
    """``int_0^t psi(u_tau) dtau`` for each t in ``t_grid`` and each of M trajectories.

    Returns an array of shape (len(t_grid), M).  Grid times must be
    multiples of dt.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    ks = np.array([n_steps_for(t, model.dt) for t in t_grid])
    if np.any(np.diff(ks) < 0):
        raise ValueError("time grid must be nondecreasing")
    integ = Integrator(model)
    s = state0 if state0.batch_shape == (M,) else state0.broadcast((M,))
    h = model.dt
    prev = psi(s)
    acc = np.zeros(M)
    out = np.empty((t_grid.size, M))
    j = 0
    while j < ks.size and ks[j] == 0:
        out[j] = 0.0
        j += 1
    for k in range(1, int(ks[-1]) + 1 if ks.size else 1):
        s = integ.step(s, rng, t=k * h)
        cur = psi(s)
        acc = acc + 0.5 * h * (prev + cur)
        prev = cur
        while j < ks.size and ks[j] == k:
            out[j] = acc
            j += 1
    return out


def _log_mean_exp(x: np.ndarray) -> np.ndarray:
    """log mean exp along the last axis."""
    return logsumexp(x, axis=-1) - np.log(x.shape[-1])


@dataclass
class PressureCurve:
    beta: np.ndarray
    q: np.ndarray
    ci: np.ndarray
    t: float
    M: int
    sup_norm: float
    delta: float
    beta0: float
    t_burn: float = 0.0
    ess: np.ndarray | None = None
    high_variance: np.ndarray | None = None
    constant: float | None = None
    nonnegative: bool = False
    mean_estimate: float | None = None
    mean_ci: float | None = None
    ic_max_z: float | None = None         # max |q1 - q2| / combined CI over the grid, two initial conditions
    ic_curve: np.ndarray | None = None


def _pressure_from_integrals(beta: np.ndarray, I_t: np.ndarray, I_b: np.ndarray | None, span: float) -> np.ndarray:
    lt = _log_mean_exp(np.multiply.outer(beta, I_t))
    if I_b is not None:
        lt = lt - _log_mean_exp(np.multiply.outer(beta, I_b))
    q = lt / span
    q[beta == 0] = 0.0
    return q


def _jackknife(beta, I_t, I_b, span, n_blocks):
    M = I_t.size
    blocks = np.array_split(np.arange(M), n_blocks)
    reps = []
    for blk in blocks:
        keep = np.ones(M, dtype=bool)
        keep[blk] = False
        reps.append(_pressure_from_integrals(beta, I_t[keep], None if I_b is None else I_b[keep], span))
    reps = np.asarray(reps)
    B = len(blocks)
    var = (B - 1) / B * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0)
    return np.sqrt(var)


def estimate_pressure(model: Model, psi: Observable, beta_grid: Sequence[float], t: float, M: int,
                      rng: np.random.Generator | None, state0: State | None = None, delta: float = 0.5,
                      t_burn: float = 0.0, n_blocks: int = 20, ess_min: float | None = None,
                      second_initial: State | None = None, second_rng: np.random.Generator | None = None,
                      integrals: tuple | None = None) -> PressureCurve:
    """Monte Carlo pressure curve ``beta -> Q(beta psi)`` with jackknife CI.

    With ``t_burn > 0`` the estimator is the increment
    ``[L_t(beta) - L_burn(beta)] / (t - t_burn)`` of the log moment
    generating function, which cancels the initial-condition offset.
    ``integrals`` may carry precomputed ``(I_burn, I_t)`` arrays.
    """
    beta = np.asarray(beta_grid, dtype=float)
    if beta.size == 0:
        raise ValueError("empty beta grid")
    over = np.abs(beta) * psi.sup_norm > delta * (1 + 1e-12)
    if np.any(over):
        raise ConfigurationError(
            f"|beta| sup|psi| exceeds the oscillation budget delta={delta} at beta={beta[over].tolist()}")
    if not 0 <= t_burn < t:
        raise ConfigurationError("need 0 <= t_burn < t")
    n_modes = model.domain.n_modes
    state0 = state0 if state0 is not None else State.zeros(n_modes)
    if integrals is None:
        grid = [t_burn, t] if t_burn > 0 else [t]
        I = path_integrals(model, state0, psi, grid, M, rng)
        I_b, I_t = (I[0], I[1]) if t_burn > 0 else (None, I[0])
    else:
        I_b, I_t = integrals
        if t_burn == 0:
            I_b = None
    span = t - t_burn
    q = _pressure_from_integrals(beta, I_t, I_b, span)
    ci = Z95 * _jackknife(beta, I_t, I_b, span, n_blocks)
    ci[beta == 0] = 0.0
    if psi.is_constant:
        ci[:] = 0.0
    # effective sample size of the tilting weights
    x = np.multiply.outer(beta, I_t)
    ess = np.exp(2 * logsumexp(x, axis=-1) - logsumexp(2 * x, axis=-1))
    ess_min = ess_min if ess_min is not None else max(50.0, M / 100)
    incr = I_t - (I_b if I_b is not None else 0.0)
    mean_est = float(np.mean(incr) / span)
    mean_ci = float(Z95 * np.std(incr, ddof=1) / span / np.sqrt(M)) if M > 1 else 0.0
    curve = PressureCurve(beta, q, ci, t, M, psi.sup_norm, delta, beta0_for(delta, psi.sup_norm), t_burn, ess,
                          ess < ess_min, psi.constant, psi.nonnegative, mean_est, mean_ci)
    if second_initial is not None:
        other = estimate_pressure(model, psi, beta, t, M, second_rng, second_initial, delta, t_burn, n_blocks,
                                  ess_min)
        comb = np.hypot(curve.ci, other.ci)
        diff = np.abs(curve.q - other.q)
        z = np.where(comb > 0, diff / np.where(comb > 0, comb, 1.0), np.where(diff > 0, np.inf, 0.0))
        curve.ic_max_z = float(np.max(z))
        curve.ic_curve = other.q
    return curve


# --- convex analysis on grids ----------------------------------------------

def convexify(beta: np.ndarray, q: np.ndarray, anchor: float = 0.0) -> np.ndarray:
    """Convex curve through isotonic regression of the segment slopes.

    Slopes are fitted nondecreasing with segment-length weights and
    reintegrated from the grid point closest to ``anchor``, which keeps its
    value (so Q(0) = 0 survives).
    """
    beta = np.asarray(beta, dtype=float)
    q = np.asarray(q, dtype=float)
    if beta.size < 3:
        return q.copy()
    db = np.diff(beta)
    slopes = np.diff(q) / db
    iso = isotonic_regression(slopes, weights=db, increasing=True).x
    out = np.concatenate([[0.0], np.cumsum(iso * db)])
    k = int(np.argmin(np.abs(beta - anchor)))
    return out - out[k] + q[k]


def conjugate(x: np.ndarray, f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Discrete Legendre transform ``g(y) = max_x (x y - f(x))`` over the grid x."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    finite = np.isfinite(f)
    return np.max(np.multiply.outer(y, x[finite]) - f[finite], axis=-1)


def one_sided_derivatives(beta: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(D-, D+) at each grid point; -inf / +inf outside the grid ends."""
    beta = np.asarray(beta, dtype=float)
    q = np.asarray(q, dtype=float)
    if beta.size < 2:
        return np.array([-np.inf]), np.array([np.inf])
    s = np.diff(q) / np.diff(beta)
    dminus = np.concatenate([[-np.inf], s])
    dplus = np.concatenate([s, [np.inf]])
    return dminus, dplus


@dataclass
class RateFunction:
    p: np.ndarray
    i: np.ndarray
    J: tuple
    beta: np.ndarray = field(repr=False, default=None)
    q_convex: np.ndarray = field(repr=False, default=None)
    constant: float | None = None
    shift: float = 0.0          # subtracted so that min I = 0 exactly

    def __call__(self, p):
        """Conjugate of the convexified pressure at arbitrary p."""
        return conjugate(self.beta, self.q_convex, np.atleast_1d(p)) - self.shift

    def inf_over(self, intervals: Sequence[tuple]) -> float:
        """``inf I`` over a finite union of intervals (piecewise-linear convex I)."""
        best = np.inf
        for a, b in intervals:
            pts = [a, b]
            # the infimum of a convex function on [a, b] sits at an end or at its minimiser
            pmin = self.argmin
            if a <= pmin <= b:
                pts.append(pmin)
            best = min(best, float(np.min(self(np.array(pts)))))
        return best

    @property
    def argmin(self) -> float:
        """Slope of the convexified pressure at beta = 0 (midpoint of the subdifferential)."""
        k = int(np.argmin(np.abs(self.beta)))
        dm, dp = one_sided_derivatives(self.beta, self.q_convex)
        lo = dm[k] if np.isfinite(dm[k]) else dp[k]
        hi = dp[k] if np.isfinite(dp[k]) else dm[k]
        return 0.5 * (lo + hi)


def legendre(curve_or_beta, q=None, p_grid: np.ndarray | None = None, n_p: int = 201) -> RateFunction:
    """Rate function on a p grid from a (convexified) pressure curve.

    Pressure is +infinity off the beta grid, so I grows linearly with slope
    max|beta| beyond the extreme slopes.  The p grid always contains every
    segment slope of the convexified curve, which makes the double transform
    reproduce that curve at the grid vertices.
    """
    if isinstance(curve_or_beta, PressureCurve):
        beta, qv, const = curve_or_beta.beta, curve_or_beta.q, curve_or_beta.constant
    else:
        beta, qv, const = np.asarray(curve_or_beta, float), np.asarray(q, float), None
    if beta.size == 0:
        raise ValueError("empty grid")
    order = np.argsort(beta)
    beta, qv = beta[order], qv[order]
    qc = convexify(beta, qv)
    dm, dp = one_sided_derivatives(beta, qc)
    slopes = np.diff(qc) / np.diff(beta) if beta.size > 1 else np.array([0.0])
    lo, hi = float(slopes.min()), float(slopes.max())
    J = (float(dp[0]) if beta.size > 1 else -np.inf, float(dm[-1]) if beta.size > 1 else np.inf)
    if p_grid is None:
        pad = max(hi - lo, 1e-3 * max(1.0, abs(lo), abs(hi)))
        p_grid = np.linspace(lo - 0.5 * pad, hi + 0.5 * pad, n_p)
    p = np.unique(np.concatenate([np.asarray(p_grid, float), slopes]))
    raw = conjugate(beta, qc, p)
    rf = RateFunction(p, raw, J, beta, qc, const)
    rf.shift = float(min(raw.min(), rf(rf.argmin)[0]))
    rf.i = raw - rf.shift
    return rf


@dataclass
class AdmissibleInterval:
    lower: float
    upper: float
    beta0: float
    constant: bool
    contains_mean: bool | None

    @property
    def empty(self) -> bool:
        return not self.lower < self.upper


def admissible_interval(curve: PressureCurve, beta0: float | None = None,
                        mean: float | None = None) -> AdmissibleInterval:
    """``J = (D+Q(-beta0), D-Q(beta0))`` from the convexified curve."""
    beta0 = curve.beta0 if beta0 is None else beta0
    sel = np.abs(curve.beta) <= beta0 * (1 + 1e-12)
    beta, q = curve.beta[sel], curve.q[sel]
    order = np.argsort(beta)
    beta, q = beta[order], q[order]
    if beta.size < 2:
        raise ValueError("need at least two grid points inside [-beta0, beta0]")
    qc = convexify(beta, q)
    dm, dp = one_sided_derivatives(beta, qc)
    lo, hi = float(dp[0]), float(dm[-1])
    if curve.constant is not None:
        return AdmissibleInterval(lo, hi, beta0, True, None)
    m = curve.mean_estimate if mean is None else mean
    contains = None if m is None else bool(lo < m < hi)
    return AdmissibleInterval(lo, hi, beta0, False, contains)


# --- regularity --------------------------------------------------------------

@dataclass
class RegularityReport:
    passed: bool
    q0_exact: bool
    convexity_violations: list
    lipschitz_violations: list
    sign_violations: list


def check_pressure_regularity(curve: PressureCurve) -> RegularityReport:
    """Convexity, Lipschitz (scaled by sup|psi|), Q(0) = 0 and sign checks, each within pooled CI."""
    order = np.argsort(curve.beta)
    b, q, ci = curve.beta[order], curve.q[order], curve.ci[order]
    zero = b == 0
    q0_ok = bool(np.all(q[zero] == 0.0)) if zero.any() else True
    conv, lip, sign = [], [], []
    for i in range(1, b.size - 1):
        w = (b[i] - b[i - 1]) / (b[i + 1] - b[i - 1])
        interp = (1 - w) * q[i - 1] + w * q[i + 1]
        slack = np.sqrt(ci[i - 1] ** 2 + ci[i] ** 2 + ci[i + 1] ** 2) + 1e-12 * (1 + abs(q[i]))
        if q[i] > interp + slack:
            conv.append(float(b[i]))
    for i in range(b.size):
        for j in range(i + 1, b.size):
            bound = abs(b[j] - b[i]) * curve.sup_norm + np.hypot(ci[i], ci[j]) + 1e-12 * (1 + abs(q[i]) + abs(q[j]))
            if abs(q[j] - q[i]) > bound:
                lip.append((float(b[i]), float(b[j])))
    if curve.nonnegative:
        # beta psi >= 0 for beta >= 0 and <= 0 for beta <= 0
        for i in range(b.size):
            if b[i] > 0 and q[i] < -ci[i] - 1e-15:
                sign.append(float(b[i]))
            if b[i] < 0 and q[i] > ci[i] + 1e-15:
                sign.append(float(b[i]))
    if curve.constant is not None:
        bad = np.abs(q - b * curve.constant) > 1e-12 * (1 + np.abs(b * curve.constant))
        sign.extend(float(x) for x in b[bad])
    ok = q0_ok and not conv and not lip and not sign
    return RegularityReport(ok, q0_ok, conv, lip, sign)


# --- empirical tails ---------------------------------------------------------

@dataclass
class TailFit:
    t: np.ndarray
    p_hat: np.ndarray
    hits: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    status: str               # "ok", "few_hits" or "inconclusive"
    prefactor: bool

    @property
    def slope_ci(self) -> float:
        return Z95 * self.slope_se


def in_set(x: np.ndarray, intervals: Sequence[tuple]) -> np.ndarray:
    hit = np.zeros(np.shape(x), dtype=bool)
    for a, b in intervals:
        hit |= (x > a) & (x < b)
    return hit


def _tail_wls(t, hits, M, prefactor):
    use = hits > 0
    p = hits[use] / M
    y = np.log(p) + (0.5 * np.log(t[use]) if prefactor else 0.0)
    w = M * p / (1 - p)
    A = np.vstack([np.ones(use.sum()), t[use]]).T
    Aw = A * w[:, None]
    cov = np.linalg.inv(A.T @ Aw)
    coef = cov @ (Aw.T @ y)
    return coef, cov, y - A @ coef, w, use


def fit_tail(t: np.ndarray, averages: np.ndarray, intervals: Sequence[tuple], min_hits: int = 50,
             prefactor: bool = True, n_boot: int = 0, rng: np.random.Generator | None = None) -> TailFit:
    """Weighted fit of ``log P(zeta_t in O) (+ 0.5 log t)`` against t.

    ``averages`` has shape (len(t), M).  The optional half-log correction
    accounts for the ``t^{-1/2}`` prefactor of a deviation probability on a
    set bounded away from the mean.  The grid times share trajectories, so
    with ``n_boot > 0`` the slope standard error comes from resampling whole
    paths instead of the independent-binomial formula.
    """
    t = np.asarray(t, dtype=float)
    M = averages.shape[1]
    inside = in_set(averages, intervals)
    hits = inside.sum(axis=1)
    p = hits / M
    if hits[-1] == 0:
        return TailFit(t, p, hits, np.nan, np.nan, np.nan, "inconclusive", prefactor)
    coef, cov, resid, w, use = _tail_wls(t, hits, M, prefactor)
    dof = max(1, use.sum() - 2)
    scale = max(1.0, float(np.sum(w * resid**2) / dof))
    se = float(np.sqrt(cov[1, 1] * scale))
    if n_boot > 0:
        rng = rng if rng is not None else np.random.default_rng()
        boot = []
        for _ in range(n_boot):
            hb = inside[:, rng.integers(0, M, M)].sum(axis=1)
            if hb[-1] > 0:
                boot.append(_tail_wls(t, hb, M, prefactor)[0][1])
        se = float(np.std(boot, ddof=1)) if len(boot) > 1 else np.inf
    status = "ok" if hits.min() >= min_hits else "few_hits"
    return TailFit(t, p, hits, float(coef[1]), se, float(coef[0]), status, prefactor)


@dataclass
class TailRateReport:
    fits: list                 # one TailFit per initial condition
    predicted: float           # -inf_O I
    rel_discrepancy: float
    ic_z: float | None         # slope difference over combined CI
    status: str


def empirical_tail_rate(model: Model, psi: Observable, intervals: Sequence[tuple], t_grid: Sequence[float], M: int,
                        rngs: Sequence[np.random.Generator], rate: RateFunction,
                        initial_states: Sequence[State] | None = None, min_hits: int = 50,
                        prefactor: bool = True, n_boot: int = 0) -> TailRateReport:
    """Compare fitted tail slopes with ``-inf_O I`` for one or more initial conditions."""
    t_grid = np.asarray(t_grid, dtype=float)
    inits = list(initial_states) if initial_states is not None else [State.zeros(model.domain.n_modes)]
    fits = []
    for s0, rng in zip(inits, rngs):
        I = path_integrals(model, s0, psi, t_grid, M, rng)
        fits.append(fit_tail(t_grid, I / t_grid[:, None], intervals, min_hits, prefactor, n_boot, rng))
    predicted = -rate.inf_over(intervals)
    slopes = np.array([f.slope for f in fits])
    rel = float(np.max(np.abs(slopes - predicted)) / abs(predicted)) if predicted != 0 else np.inf
    ic_z = None
    if len(fits) >= 2:
        comb = np.hypot(fits[0].slope_ci, fits[1].slope_ci)
        ic_z = float(abs(fits[0].slope - fits[1].slope) / comb) if comb > 0 else np.inf
    status = "inconclusive" if any(f.status == "inconclusive" for f in fits) else (
        "few_hits" if any(f.status == "few_hits" for f in fits) else "ok")
    return TailRateReport(fits, float(predicted), rel, ic_z, status)
