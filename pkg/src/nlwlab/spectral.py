"""Dirichlet sine spectrum on an interval, phase-space norms and transforms.

Coefficient fields are plain numpy arrays whose trailing axis runs over the
modes ``j = 1..n_modes``; any leading axes are ensemble/batch axes.  The
basis is ``e_j(x) = sqrt(2/L) sin(j pi x / L)``, orthonormal in L^2(0, L).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SpectralDomain:
    length: float
    n_modes: int

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        j = np.arange(1, self.n_modes + 1, dtype=float)
        lam = (j * np.pi / self.length) ** 2
        lam.setflags(write=False)
        return lam

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def grid_size(self) -> int:
        # interior nodes; 2n+1 keeps quadratic products alias-free
        return 2 * self.n_modes + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        k = np.arange(1, self.grid_size + 1)
        return k * self.length / (self.grid_size + 1)

    @cached_property
    def _synthesis(self) -> np.ndarray:
        # (n_modes, G): values = coeffs @ S  (DST-I as a dense matrix)
        g = self.grid_size
        j = np.arange(1, self.n_modes + 1)[:, None]
        k = np.arange(1, g + 1)[None, :]
        s = np.sqrt(2.0 / self.length) * np.sin(np.pi * j * k / (g + 1))
        s.setflags(write=False)
        return s

    @cached_property
    def _analysis(self) -> np.ndarray:
        # (G, n_modes): coeffs = values @ T, exact inverse on the span
        g = self.grid_size
        t = self._synthesis.T * (self.length / (g + 1))
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        return t

    @property
    def quadrature_weight(self) -> float:
        """Trapezoid weight on the uniform grid (boundary values are zero)."""
        return self.length / (self.grid_size + 1)


@dataclass(frozen=True)
class State:
    """Phase point ``[u, u_dot]``; arrays share shape ``(..., n_modes)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape:
            raise ValueError(f"position shape {u.shape} != velocity shape {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n_modes(self) -> int:
        return self.u.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.u.shape[:-1]

    @classmethod
    def zeros(cls, n_modes, batch_shape=()):
        shape = tuple(batch_shape) + (n_modes,)
        return cls(np.zeros(shape), np.zeros(shape))

    def broadcast(self, batch_shape) -> "State":
        shape = tuple(batch_shape) + (self.n_modes,)
        return State(np.broadcast_to(self.u, shape).copy(), np.broadcast_to(self.v, shape).copy())

    def __getitem__(self, idx) -> "State":
        return State(self.u[idx], self.v[idx])

    def __sub__(self, other: "State") -> "State":
        return State(self.u - other.u, self.v - other.v)

    def __add__(self, other: "State") -> "State":
        return State(self.u + other.u, self.v + other.v)

    def scale(self, c) -> "State":
        return State(c * self.u, c * self.v)


@dataclass(frozen=True)
class NormParams:
    alpha: float
    s: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.s < 1.0:
            raise ConfigurationError(f"smoothness s must lie in [0, 1), got {self.s}")


def build_domain(length: float, n_modes: int) -> SpectralDomain:
    violations = []
    if not (np.isfinite(length) and length > 0):
        violations.append(f"length must be positive, got {length}")
    if int(n_modes) != n_modes or n_modes < 1:
        violations.append(f"n_modes must be a positive integer, got {n_modes}")
    if violations:
        raise ConfigurationError("; ".join(violations), violations)
    return SpectralDomain(float(length), int(n_modes))


def default_alpha(gamma: float, lambda1: float) -> float:
    return min(gamma, lambda1 / gamma) / 4.0


def contraction_holds(domain: SpectralDomain, gamma: float, alpha: float) -> bool:
    """True when the free damped wave flow contracts the |.|_H norm at rate alpha.

    Per mode the condition is negative semi-definiteness of
    d/dt|z|^2 + alpha|z|^2, i.e. ``lam(2 gamma - 3 alpha) >= alpha (gamma - alpha)^2``.
    """
    lam = domain.eigenvalues
    if 2 * gamma - 3 * alpha <= 0:
        return False
    return bool(np.all(lam * (2 * gamma - 3 * alpha) >= alpha * (gamma - alpha) ** 2))


def _check_dims(state: State, domain: SpectralDomain):
    if state.n_modes != domain.n_modes:
        raise ValueError(f"state has {state.n_modes} modes, domain has {domain.n_modes}")


def h_norm_sq(state: State, domain: SpectralDomain, p: NormParams) -> np.ndarray:
    """``|u|_1^2 + |v + alpha u|^2`` over the trailing mode axis."""
    _check_dims(state, domain)
    lam = domain.eigenvalues
    w = state.v + p.alpha * state.u
    return np.sum(lam * state.u**2, axis=-1) + np.sum(w**2, axis=-1)


def hs_norm_sq(state: State, domain: SpectralDomain, p: NormParams) -> np.ndarray:
    """``|u|_{s+1}^2 + |v + alpha u|_s^2``; reduces to :func:`h_norm_sq` at s=0."""
    if p.s == 0.0:
        return h_norm_sq(state, domain, p)
    _check_dims(state, domain)
    lam = domain.eigenvalues
    ls = lam**p.s
    w = state.v + p.alpha * state.u
    return np.sum(ls * lam * state.u**2, axis=-1) + np.sum(ls * w**2, axis=-1)


def plain_norm_sq(state: State, domain: SpectralDomain) -> np.ndarray:
    """Untwisted ``|u|_1^2 + |v|^2``."""
    return np.sum(domain.eigenvalues * state.u**2, axis=-1) + np.sum(state.v**2, axis=-1)


def norm_equivalence_constants(domain: SpectralDomain, alpha: float) -> tuple[float, float]:
    """Constants ``m, M`` with ``m * plain <= h_norm_sq <= M * plain``."""
    c = alpha / np.sqrt(domain.eigenvalues)
    root = np.sqrt(c**4 + 4 * c**2)
    lo = (2 + c**2 - root) / 2
    hi = (2 + c**2 + root) / 2
    return float(lo.min()), float(hi.max())


def project_modes(state: State, n: int) -> State:
    if n < 0 or n > state.n_modes:
        raise ValueError(f"projection level {n} outside [0, {state.n_modes}]")
    u = state.u.copy()
    v = state.v.copy()
    u[..., n:] = 0.0
    v[..., n:] = 0.0
    return State(u, v)


def to_collocation(domain: SpectralDomain, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != domain.n_modes:
        raise ValueError(f"expected {domain.n_modes} coefficients, got {coeffs.shape[-1]}")
    return coeffs @ domain._synthesis


def from_collocation(domain: SpectralDomain, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] == 0:
        raise ValueError("empty collocation grid")
    if values.shape[-1] != domain.grid_size:
        raise ValueError(f"expected {domain.grid_size} grid values, got {values.shape[-1]}")
    return values @ domain._analysis


def integrate_grid(domain: SpectralDomain, values: np.ndarray) -> np.ndarray:
    """Trapezoid integral over (0, L) of grid samples (zero at the walls)."""
    return domain.quadrature_weight * np.sum(values, axis=-1)
