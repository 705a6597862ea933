"""Nonlinear terms f, their primitives F, and the growth/dissipativity checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

KINDS = ("sine_gordon", "klein_gordon", "zero")


@dataclass(frozen=True)
class Nonlinearity:
    """One of the shipped nonlinearities with its condition constants.

    ``rho`` is the growth exponent in ``|f''(u)| <= C(|u|^(rho-1) + 1)``.  For
    sine-Gordon any rho in (0, 2) works; it is kept because it fixes the
    admissible smoothness range ``s < 1 - rho/2``.
    """

    kind: str = "sine_gordon"
    rho: float = 1.0
    lam: float = 0.0
    C: float = 10.0
    nu: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown nonlinearity kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.rho < 2.0:
            raise ConfigurationError(f"growth exponent rho must lie in (0, 2), got {self.rho}")

    def f(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "sine_gordon":
            return np.sin(u)
        if self.kind == "klein_gordon":
            return np.abs(u) ** self.rho * u - self.lam * u
        return np.zeros_like(u)

    def F(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "sine_gordon":
            # 1 - cos u, written to avoid cancellation near 0
            return 2.0 * np.sin(0.5 * u) ** 2
        if self.kind == "klein_gordon":
            return np.abs(u) ** (self.rho + 2) / (self.rho + 2) - 0.5 * self.lam * u**2
        return np.zeros_like(u)

    def df(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "sine_gordon":
            return np.cos(u)
        if self.kind == "klein_gordon":
            return (self.rho + 1) * np.abs(u) ** self.rho - self.lam
        return np.zeros_like(u)

    def d2f(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "sine_gordon":
            return -np.sin(u)
        if self.kind == "klein_gordon":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = (self.rho + 1) * self.rho * np.abs(u) ** (self.rho - 1) * np.sign(u)
            return np.where(u == 0, 0.0, out)
        return np.zeros_like(u)

    def with_constants(self, C=None, nu=None) -> "Nonlinearity":
        return Nonlinearity(
            self.kind, self.rho, self.lam,
            self.C if C is None else C,
            self.nu if nu is None else nu,
        )


def f_eval(nl: Nonlinearity, u):
    return nl.f(u)


def F_eval(nl: Nonlinearity, u):
    return nl.F(u)


@dataclass
class ConditionReport:
    passed: bool
    growth_margin: float
    dissipativity_margin: float
    virial_margin: float
    worst_u: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def _margins(nl: Nonlinearity, u: np.ndarray):
    C, nu, rho = nl.C, nl.nu, nl.rho
    au = np.abs(u)
    with np.errstate(divide="ignore"):
        growth_rhs = C * (au ** (rho - 1) + 1.0)
    growth = growth_rhs - np.abs(nl.d2f(u))
    if C > 0:
        diss = nl.F(u) - (np.abs(nl.df(u)) ** ((rho + 2) / rho) / C - nu * u**2 - C)
    else:
        diss = np.full_like(u, -np.inf)
    virial = nl.f(u) * u - nl.F(u) + nu * u**2 + C
    return growth, diss, virial


def check_conditions(nl: Nonlinearity, sample_range=(-20.0, 20.0), n_samples=20001) -> ConditionReport:
    """Sweep the growth and dissipativity inequalities on a uniform sample.

    Margins are ``rhs - lhs`` style slacks; a negative worst margin means the
    configured constants are too small for this nonlinearity on the range.
    """
    u = np.linspace(sample_range[0], sample_range[1], int(n_samples))
    if 0.0 not in u:
        u = np.sort(np.append(u, 0.0))
    margins = _margins(nl, u)
    names = ("growth", "dissipativity", "virial")
    worst = {}
    failures = []
    values = []
    for name, m in zip(names, margins):
        i = int(np.argmin(m))
        values.append(float(m[i]))
        worst[name] = float(u[i])
        if m[i] < 0:
            failures.append((name, float(u[i]), float(m[i])))
    return ConditionReport(not failures, *values, worst_u=worst, failures=failures)


def calibrate_C(nl: Nonlinearity, sample_range=(-20.0, 20.0), n_samples=20001, c_max=1e6) -> float:
    """Smallest C (to 1e-6 relative) passing :func:`check_conditions` at the given nu."""
    lo, hi = 0.0, 1.0
    while not check_conditions(nl.with_constants(C=hi), sample_range, n_samples).passed:
        lo, hi = hi, 2 * hi
        if hi > c_max:
            raise ConfigurationError(f"no C <= {c_max} satisfies the conditions at nu={nl.nu}")
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if check_conditions(nl.with_constants(C=mid), sample_range, n_samples).passed:
            hi = mid
        else:
            lo = mid
    return hi


def max_slope(nl: Nonlinearity, amplitude: float) -> float:
    """sup |f'(u)| over |u| <= amplitude (for step-size bookkeeping)."""
    u = np.linspace(-amplitude, amplitude, 2001)
    return float(np.max(np.abs(nl.df(u))))
