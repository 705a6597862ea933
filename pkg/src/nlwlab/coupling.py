"""Coupled trajectories, Foias-Prodi checks, Girsanov cost and mixing rates.

The secondary process of a coupled pair feels the force
``Q_N f(v) + P_N f(u)``: its low modes are driven by the primary's
nonlinearity, and both processes share every noise increment.  The low-mode
difference then follows the free damped wave equation exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import Integrator, Model, energy, f_coeffs, n_steps_for
from .errors import ConfigurationError
from .spectral import State, h_norm_sq, project_modes


@dataclass
class CoupledPair:
    primary: State
    secondary: State
    N: int
    stream_id: int = 0
    t: float = 0.0

    def __post_init__(self):
        if self.primary.n_modes != self.secondary.n_modes:
            raise ValueError("coupled states live on different truncations")
        if not 0 <= self.N <= self.primary.n_modes:
            raise ValueError(f"coupling level N={self.N} outside [0, {self.primary.n_modes}]")

    @property
    def difference(self) -> State:
        return self.secondary - self.primary


def step_intermediate(pair: CoupledPair, integ: Integrator, rng: np.random.Generator | None = None,
                      xi=None) -> tuple[CoupledPair, np.ndarray]:
    """Advance both members with one shared noise draw.

    Returns the new pair and the low-mode drift ``P_N[f(u) - f(v)]``
    applied to the secondary during the kick (needed for Girsanov cost).
    """
    if xi is None and rng is not None and integ.has_noise:
        xi = integ.draw(rng, pair.primary.batch_shape)
    N = pair.N
    fu_cache = {}

    def primary_force(u):
        fu_cache["fu"] = integ.force(u)
        return fu_cache["fu"]

    drift = {}

    def secondary_force(v):
        fv = integ.force(v)
        out = fv.copy()
        out[..., :N] = fu_cache["fu"][..., :N]
        drift["d"] = out - fv
        return out

    t = pair.t + integ.model.dt
    u = integ.step(pair.primary, xi=xi, force=primary_force, t=t)
    v = integ.step(pair.secondary, xi=xi, force=secondary_force, t=t)
    return CoupledPair(u, v, N, pair.stream_id, t), drift["d"]


@dataclass
class CoupledRun:
    """Per-step samples along a batch of coupled paths (time axis first)."""
    times: np.ndarray
    diff_sq: np.ndarray        # |v - u|_H^2
    proj_diff_sq: np.ndarray   # |P_N(v - u)|_H^2
    grad_int_u: np.ndarray     # int_0^t |grad u|^2
    grad_int_v: np.ndarray
    girsanov: np.ndarray       # running int |b^{-1} P_N(f(u) - f(v))|^2
    final: CoupledPair
    N: int
    alpha: float


def run_coupled(model: Model, z: State, z2: State, N: int, rng: np.random.Generator | None,
                t_final: float, stream_id: int = 0) -> CoupledRun:
    """Integrate a (batched) coupled pair, sampling the Foias-Prodi quantities every step."""
    integ = Integrator(model)
    d, p = model.domain, model.norm
    lam = d.eigenvalues
    b = model.noise.b
    if N > 0 and np.any(b[:N] == 0):
        # the Girsanov ledger is undefined; the dynamics themselves are fine
        inv_b2 = None
    else:
        inv_b2 = np.zeros_like(b)
        inv_b2[:N] = 1.0 / b[:N] ** 2
    n = n_steps_for(t_final, model.dt)
    pair = CoupledPair(z, z2, N, stream_id)
    batch = np.broadcast_shapes(z.batch_shape, z2.batch_shape)
    if z.batch_shape != batch:
        pair.primary = z.broadcast(batch)
    if z2.batch_shape != batch:
        pair.secondary = z2.broadcast(batch)

    def grad_sq(s):
        return np.sum(lam * s.u**2, axis=-1)

    times = np.arange(n + 1) * model.dt
    diff = np.empty((n + 1,) + batch)
    proj = np.empty_like(diff)
    gu = np.zeros_like(diff)
    gv = np.zeros_like(diff)
    cost = np.zeros_like(diff)
    w = pair.difference
    diff[0] = h_norm_sq(w, d, p)
    proj[0] = h_norm_sq(project_modes(w, N), d, p)
    pu, pv = grad_sq(pair.primary), grad_sq(pair.secondary)
    h = model.dt
    for k in range(1, n + 1):
        pair, drift = step_intermediate(pair, integ, rng)
        w = pair.difference
        diff[k] = h_norm_sq(w, d, p)
        proj[k] = h_norm_sq(project_modes(w, N), d, p)
        cu, cv = grad_sq(pair.primary), grad_sq(pair.secondary)
        gu[k] = gu[k - 1] + 0.5 * h * (pu + cu)
        gv[k] = gv[k - 1] + 0.5 * h * (pv + cv)
        pu, pv = cu, cv
        if inv_b2 is not None:
            cost[k] = cost[k - 1] + h * np.sum(inv_b2 * drift**2, axis=-1)
        else:
            cost[k] = np.nan
    return CoupledRun(times, diff, proj, gu, gv, cost, pair, N, model.alpha)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _worst_excess(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``max_t (a(t) - min_{s<=t} b(s))`` along axis 0 (per path)."""
    run_min = np.minimum.accumulate(b, axis=0)
    with np.errstate(invalid="ignore"):
        ex = a - run_min
    ex = np.where(np.isneginf(a), -np.inf, ex)
    return np.max(ex, axis=0)


@dataclass
class ProjectedCheck:
    passed: bool
    worst_ratio: float
    worst_path: int
    worst_time: float
    tolerance: float
    ratios: np.ndarray = field(repr=False, default=None)


def foias_prodi_projected_check(run: CoupledRun, tol: float = 1e-8) -> ProjectedCheck:
    """``|P_N(v_t - u_t)|^2 <= exp(-alpha (t - s)) |v_s - u_s|^2`` for all sampled s <= t."""
    a = _log(run.proj_diff_sq) + run.alpha * run.times.reshape((-1,) + (1,) * (run.diff_sq.ndim - 1))
    bb = _log(run.diff_sq) + run.alpha * run.times.reshape((-1,) + (1,) * (run.diff_sq.ndim - 1))
    worst_log = np.atleast_1d(_worst_excess(a, bb))
    ratios = np.exp(worst_log)
    i = int(np.argmax(ratios))
    # time of the worst sample on the worst path
    a_i = a.reshape(len(run.times), -1)[:, i]
    b_i = np.minimum.accumulate(bb.reshape(len(run.times), -1)[:, i])
    with np.errstate(invalid="ignore"):
        ex = np.where(np.isneginf(a_i), -np.inf, a_i - b_i)
    k = int(np.argmax(ex))
    worst = float(ratios[i])
    return ProjectedCheck(bool(np.all(ratios <= 1 + tol)), worst, i, float(run.times[k]), tol, ratios)


def flux_condition(run: CoupledRun, K: float, l: float) -> np.ndarray:
    """Per-path truth of ``int_s^t |grad z|^2 <= l + K (t - s)`` for z = u and z = v."""
    tt = run.times.reshape((-1,) + (1,) * (run.diff_sq.ndim - 1))
    ok = np.ones(run.diff_sq.shape[1:], dtype=bool)
    for g in (run.grad_int_u, run.grad_int_v):
        gk = g - K * tt
        ok &= np.atleast_1d(_worst_excess(gk, gk)) <= l
    return ok


def full_inequality(run: CoupledRun, eps: float, l: float) -> np.ndarray:
    """Per-path truth of ``|v_t - u_t|^2 <= exp(-alpha (t - s) + eps l) |v_s - u_s|^2``."""
    tt = run.times.reshape((-1,) + (1,) * (run.diff_sq.ndim - 1))
    hgt = _log(run.diff_sq) + run.alpha * tt
    return np.atleast_1d(_worst_excess(hgt, hgt)) <= eps * l + 1e-12


@dataclass
class FullCheck:
    eps: float
    K: float
    l: float
    N_star: int | None
    fractions: dict          # N -> fraction of qualifying paths satisfying the inequality
    qualifying: dict         # N -> number of qualifying paths
    excluded: dict           # N -> number of paths failing the flux condition
    threshold: float

    @property
    def found(self) -> bool:
        return self.N_star is not None


def foias_prodi_full_check(runs: dict, eps: float, K: float, l: float, threshold: float = 0.99) -> FullCheck:
    """Smallest N from which the full contraction holds on ``threshold`` of qualifying paths.

    ``runs`` maps coupling levels N to :class:`CoupledRun` objects built on
    the same noise streams.  The estimate is the smallest N such that every
    level N' >= N meets the threshold.
    """
    fractions, qual, excl = {}, {}, {}
    for N in sorted(runs):
        run = runs[N]
        ok_flux = flux_condition(run, K, l)
        holds = full_inequality(run, eps, l)
        nq = int(ok_flux.sum())
        qual[N] = nq
        excl[N] = int(ok_flux.size - nq)
        fractions[N] = float(holds[ok_flux].mean()) if nq else np.nan
    N_star = None
    for N in sorted(runs, reverse=True):
        fr = fractions[N]
        if np.isnan(fr) or fr < threshold:
            break
        N_star = N
    return FullCheck(eps, K, l, N_star, fractions, qual, excl, threshold)


def coupled_sweep(model: Model, z: State, z2: State, levels: Sequence[int], stream: Callable[[], np.random.Generator],
                  t_final: float) -> dict:
    """Run the same noise (one fresh generator per level from ``stream``) at several coupling levels."""
    return {N: run_coupled(model, z, z2, N, stream(), t_final) for N in levels}


@dataclass
class GirsanovLedger:
    cost: np.ndarray        # per path
    horizon: float
    N: int

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.cost))

    def tv_pinsker(self) -> float:
        """Total-variation bound from Pinsker with KL = cost / 2."""
        return float(np.sqrt(self.mean_cost / 4.0))

    def tv_chi2(self) -> float:
        """``(1/2) sqrt(E exp(cost) - 1)``, the exponential surrogate."""
        return float(0.5 * np.sqrt(np.mean(np.expm1(self.cost))))


def girsanov_cost(run: CoupledRun, window: tuple | None = None) -> GirsanovLedger:
    """Cost accumulated on ``window = (t0, t1)`` (defaults to the whole run)."""
    if np.any(np.isnan(run.girsanov)):
        raise ConfigurationError("Girsanov cost needs b_j > 0 on every driven mode")
    t = run.times
    i0, i1 = 0, len(t) - 1
    if window is not None:
        i0 = int(np.argmin(np.abs(t - window[0])))
        i1 = int(np.argmin(np.abs(t - window[1])))
        if i1 < i0:
            raise ValueError("window end before start")
    return GirsanovLedger(np.atleast_1d(run.girsanov[i1] - run.girsanov[i0]), float(t[i1] - t[i0]), run.N)


@dataclass
class ShapeFit:
    log_k: float
    power: float
    log_x: np.ndarray
    log_cost: np.ndarray


def tv_bound_shape(costs: Sequence[float], diffs_sq: Sequence[float], energies: Sequence[tuple]) -> ShapeFit:
    """Fit ``cost ~ k * x**p`` with ``x = |z - z'|^2 exp(|E(z)| + |E(z')|)`` (log scale)."""
    log_x = np.log(np.asarray(diffs_sq, dtype=float)) + np.array([abs(a) + abs(b) for a, b in energies])
    log_c = np.log(np.asarray(costs, dtype=float))
    A = np.vstack([np.ones_like(log_x), log_x]).T
    (lk, pw), *_ = np.linalg.lstsq(A, log_c, rcond=None)
    return ShapeFit(float(lk), float(pw), log_x, log_c)


# --- mixing -----------------------------------------------------------------

@dataclass
class TestFunction:
    """Bounded Lipschitz function on phase space with ``sup + Lip <= 1`` in the H metric."""
    name: str
    fn: Callable[[State], np.ndarray]


def default_dictionary(model: Model, n_low: int = 4, scales=(1.0, 3.0), energy_radius: float | None = None):
    """tanh of linear functionals of the first modes, plus a clipped squared norm.

    A functional ``k (cos t x1 + sin t x2)`` in the coordinates
    ``x1 = sqrt(lam) u``, ``x2 = v + alpha u`` has dual norm k, so
    ``tanh(.)/(1 + k)`` has ``sup + Lip <= 1``.
    """
    d, p = model.domain, model.norm
    lam = d.eigenvalues
    a = p.alpha
    out = []
    for j in range(min(n_low, d.n_modes)):
        sl = np.sqrt(lam[j])
        for th in (0.0, 0.25 * np.pi, 0.5 * np.pi, 0.75 * np.pi):
            for k in scales:
                cu = k * (np.cos(th) * sl + np.sin(th) * a)
                cv = k * np.sin(th)

                def fn(s, j=j, cu=cu, cv=cv, k=k):
                    return np.tanh(cu * s.u[..., j] + cv * s.v[..., j]) / (1.0 + k)

                out.append(TestFunction(f"tanh_m{j + 1}_th{th:.3f}_k{k:g}", fn))
    R = energy_radius if energy_radius is not None else 2.0 * np.sqrt(max(model.noise.B, 1e-12) / model.alpha)

    def clip_norm(s, R=R):
        return np.clip(h_norm_sq(s, d, p) / R**2, 0.0, 1.0) / (1.0 + 2.0 / R)

    out.append(TestFunction("clipped_norm", clip_norm))
    return out


@dataclass
class MixingFit:
    times: np.ndarray
    distance: np.ndarray
    floor: np.ndarray
    window: tuple
    kappa: float
    kappa_ci: tuple
    log_C: float
    decay_factor: float
    resolvable: bool


def _distance(diffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """diffs: (n_times, n_dict, M) paired differences -> (max |mean|, SE of the argmax)."""
    M = diffs.shape[-1]
    mean = diffs.mean(axis=-1)
    se = diffs.std(axis=-1, ddof=1) / np.sqrt(M)
    i = np.argmax(np.abs(mean), axis=1)
    rows = np.arange(diffs.shape[0])
    return np.abs(mean[rows, i]), se[rows, i]


def _fit_window(t, dist, lo, hi):
    tt, y = t[lo:hi], np.log(dist[lo:hi])
    A = np.vstack([np.ones_like(tt), tt]).T
    (c, s), *_ = np.linalg.lstsq(A, y, rcond=None)
    return -s, c


def estimate_mixing(model: Model, z: State, z2: State, M: int, horizon: float, rng: np.random.Generator,
                    dictionary: Sequence[TestFunction] | None = None, n_times: int = 41, n_boot: int = 200,
                    floor_factor: float = 3.0) -> MixingFit:
    """Dual-Lipschitz distance between the laws started at z and z2, and its decay rate.

    Both ensembles are driven by common random numbers, which leaves each
    mean unbiased and shrinks the variance of their difference.  The fit
    uses the early window on which the distance exceeds ``floor_factor``
    standard errors.
    """
    dictionary = dictionary if dictionary is not None else default_dictionary(model)
    integ = Integrator(model)
    n = n_steps_for(horizon, model.dt)
    stride = max(1, n // max(1, n_times - 1))
    a, b = z.broadcast((M,)), z2.broadcast((M,))
    times, diffs = [], []

    def record(k):
        times.append(k * model.dt)
        diffs.append(np.stack([tf.fn(a) - tf.fn(b) for tf in dictionary]))

    record(0)
    for k in range(1, n + 1):
        xi = integ.draw(rng, (M,)) if integ.has_noise else None
        a = integ.step(a, xi=xi, t=k * model.dt)
        b = integ.step(b, xi=xi, t=k * model.dt)
        if k % stride == 0:
            record(k)
    t = np.asarray(times)
    D = np.asarray(diffs)
    dist, se = _distance(D)
    floor = floor_factor * se
    above = dist > floor
    # first time the distance drops into the noise floor closes the window
    end = int(np.argmin(above)) if not above.all() else len(t)
    lo = 0
    if end - lo < 3:
        return MixingFit(t, dist, floor, (t[0], t[max(end - 1, 0)]), np.nan, (np.nan, np.nan), np.nan, 1.0, False)
    kappa, logC = _fit_window(t, dist, lo, end)
    boot = []
    for _ in range(n_boot):
        idx = rng.integers(0, M, M)
        db, _ = _distance(D[lo:end, :, idx])
        if np.all(db > 0):
            boot.append(_fit_window(t[lo:end], db, 0, end - lo)[0])
    ci = tuple(np.quantile(boot, [0.025, 0.975])) if boot else (np.nan, np.nan)
    win = (float(t[lo]), float(t[end - 1]))
    return MixingFit(t, dist, floor, win, float(kappa), ci, float(logC),
                     float(np.exp(kappa * (win[1] - win[0]))), True)


def energies_of(model: Model, *states: State) -> list[float]:
    return [float(energy(s, model.domain, model.nl, model.norm)) for s in states]


def lowmode_drift(model: Model, u: State, v: State, N: int) -> np.ndarray:
    """``P_N[f(u) - f(v)]`` in coefficients (used by tests and diagnostics)."""
    d = model.domain
    out = f_coeffs(d, model.nl, u.u) - f_coeffs(d, model.nl, v.u)
    out[..., N:] = 0.0
    return out
