"""Bounded Hoelder observables of finitely many modes and occupation averages."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import State


@dataclass(frozen=True)
class Observable:
    """``F(u_1..u_N, v_1..v_N)`` with a declared sup bound and Hoelder data.

    ``func`` receives the low-mode position and velocity arrays (trailing
    axis of length N) and must broadcast over leading axes.  The Hoelder
    bound is with respect to the Euclidean distance of the 2N coordinates.
    """
    n_low_modes: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sup_norm: float
    holder_exp: float = 1.0
    holder_const: float = 1.0
    name: str = "psi"
    constant: float | None = None
    nonnegative: bool = False

    def __post_init__(self):
        if self.n_low_modes < 0:
            raise ValueError("n_low_modes must be nonnegative")
        if not self.sup_norm > 0:
            raise ValueError("sup_norm must be positive")
        if not 0 < self.holder_exp <= 1:
            raise ValueError("Hoelder exponent must lie in (0, 1]")

    def __call__(self, state: State) -> np.ndarray:
        N = self.n_low_modes
        if N > state.n_modes:
            raise ValueError(f"observable needs {N} modes, state has {state.n_modes}")
        return np.asarray(self.func(state.u[..., :N], state.v[..., :N]), dtype=float)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def shifted(self, c: float) -> "Observable":
        f = self.func
        const = None if self.constant is None else self.constant + c
        return Observable(self.n_low_modes, lambda u, v: f(u, v) + c, self.sup_norm + abs(c), self.holder_exp,
                          self.holder_const, f"{self.name}+{c:g}", const, self.nonnegative and c >= 0)

    def scaled(self, a: float) -> "Observable":
        f = self.func
        const = None if self.constant is None else a * self.constant
        return Observable(self.n_low_modes, lambda u, v: a * f(u, v), abs(a) * self.sup_norm, self.holder_exp,
                          abs(a) * self.holder_const, f"{a:g}*{self.name}", const, self.nonnegative and a >= 0)


def constant_observable(c: float) -> Observable:
    return Observable(0, lambda u, v: np.full(u.shape[:-1], float(c)), max(abs(float(c)), 1e-300), 1.0, 0.0,
                      f"const{c:g}", float(c), c >= 0)


def tanh_mode(j: int, scale: float = 1.0, amplitude: float = 1.0, shift: float = 0.0) -> Observable:
    """``amplitude * tanh(scale * u_j) + shift`` (j is 1-based)."""
    k = j - 1

    def f(u, v):
        return amplitude * np.tanh(scale * u[..., k]) + shift

    return Observable(j, f, abs(amplitude) + abs(shift), 1.0, abs(amplitude * scale), f"tanh_u{j}")


def cos_mode(j: int, scale: float = 1.0) -> Observable:
    k = j - 1
    return Observable(j, lambda u, v: np.cos(scale * u[..., k]), 1.0, 1.0, abs(scale), f"cos_u{j}")


def truncated_quadratic(j: int, cap: float = 1.0) -> Observable:
    """``min(u_j^2, cap)``: nonnegative, Lipschitz with constant 2 sqrt(cap)."""
    k = j - 1
    return Observable(j, lambda u, v: np.minimum(u[..., k] ** 2, cap), cap, 1.0, 2 * np.sqrt(cap),
                      f"quad_u{j}", nonnegative=True)


def velocity_tanh(j: int, scale: float = 1.0) -> Observable:
    k = j - 1
    return Observable(j, lambda u, v: np.tanh(scale * v[..., k]), 1.0, 1.0, abs(scale), f"tanh_v{j}")


@dataclass
class ObservableCheck:
    passed: bool
    max_abs: float
    worst_holder_ratio: float


def check_observable(obs: Observable, states: State, n_pairs: int = 2000, rng=None) -> ObservableCheck:
    """Empirical check of the sup bound and the Hoelder bound on sampled states."""
    rng = rng if rng is not None else np.random.default_rng(0)
    vals = obs(states).reshape(-1)
    N = obs.n_low_modes
    x = np.concatenate([states.u[..., :N], states.v[..., :N]], axis=-1).reshape(vals.size, -1)
    i = rng.integers(0, vals.size, n_pairs)
    j = rng.integers(0, vals.size, n_pairs)
    dist = np.linalg.norm(x[i] - x[j], axis=-1)
    dv = np.abs(vals[i] - vals[j])
    keep = dist > 0
    ratio = dv[keep] / (obs.holder_const * dist[keep] ** obs.holder_exp) if obs.holder_const > 0 else dv[keep]
    worst = float(ratio.max()) if ratio.size else 0.0
    max_abs = float(np.abs(vals).max())
    limit = 1.0 if obs.holder_const > 0 else 0.0
    ok = max_abs <= obs.sup_norm * (1 + 1e-12) and worst <= limit + 1e-12
    return ObservableCheck(bool(ok), max_abs, worst)


def occupation_average(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``(1/t) int_0^t psi(u_tau) dtau`` by the trapezoid rule on the sample times (axis 0)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2 or times[-1] <= times[0]:
        raise ValueError("occupation average needs a path of positive length")
    dt = np.diff(times).reshape((-1,) + (1,) * (values.ndim - 1))
    integral = np.sum(0.5 * dt * (values[1:] + values[:-1]), axis=0)
    return integral / (times[-1] - times[0])
