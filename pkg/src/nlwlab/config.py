"""Experiment configuration: strict schema, cross-field validation, model assembly."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .dynamics import Model, NoiseSpec, SimParams, default_kappa
from .errors import ConfigurationError
from .nonlinearity import Nonlinearity, calibrate_C, check_conditions
from .observables import (Observable, constant_observable, cos_mode, tanh_mode, truncated_quadratic,
                          velocity_tanh)
from .spectral import NormParams, build_domain, contraction_holds, default_alpha

U64_MAX = 2**64 - 1
KINDS = ("simulate", "pressure", "ldp", "couple", "eigen", "verify")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainCfg(Strict):
    length: float = float(np.pi)
    n_modes: int = 8


class NonlinearityCfg(Strict):
    kind: Literal["sine_gordon", "klein_gordon", "zero"] = "sine_gordon"
    rho: float = 1.0
    lam: float = 0.0
    C: Optional[float] = None     # None: smallest C passing the condition sweep
    nu: Optional[float] = None    # None: 0.9 of the admissible bound


class NoiseCfg(Strict):
    b: Optional[list[float]] = None
    b0: float = 1.0
    decay: float = 1.5


class SimCfg(Strict):
    gamma: float = 0.5
    dt: float = 0.05
    t_final: float = 10.0
    h: Optional[list[float]] = None


class NormCfg(Strict):
    alpha: Optional[float] = None
    s: float = 0.0


class InitialCfg(Strict):
    u: Optional[list[float]] = None
    v: Optional[list[float]] = None


class ObservableCfg(Strict):
    kind: Literal["tanh_mode", "cos_mode", "truncated_quadratic", "velocity_tanh", "constant"] = "tanh_mode"
    mode: int = 1
    scale: float = 1.0
    amplitude: float = 1.0
    shift: float = 0.0
    cap: float = 1.0
    value: float = 0.0


class SimulateCfg(Strict):
    ensemble: int = 1
    stride: int = 1
    chunk: int = 0                 # trajectories per RNG stream; 0 means one stream for all
    initial: InitialCfg = Field(default_factory=InitialCfg)


class PressureCfg(Strict):
    observable: ObservableCfg = Field(default_factory=ObservableCfg)
    delta: float = 0.5
    n_beta: int = 21
    beta: Optional[list[float]] = None
    t: float = 20.0
    t_burn: float = 0.0
    ensemble: int = 1000
    chunk: int = 0
    n_blocks: int = 20
    initial: InitialCfg = Field(default_factory=InitialCfg)
    second_initial: Optional[InitialCfg] = None


class TailCfg(Strict):
    intervals: list[tuple[float, float]] = Field(default_factory=lambda: [(0.15, 0.3)])
    t_grid: list[float] = Field(default_factory=lambda: [12.0, 16.0, 20.0, 24.0, 28.0, 32.0])
    ensemble: int = 10000
    chunk: int = 0
    min_hits: int = 50
    n_boot: int = 200
    tolerance: float = 0.15
    second_initial: Optional[InitialCfg] = None


class LdpCfg(Strict):
    pressure: PressureCfg = Field(default_factory=PressureCfg)
    tails: TailCfg = Field(default_factory=TailCfg)


class CoupleCfg(Strict):
    pairs: int = 100
    levels: Optional[list[int]] = None
    t_final: float = 20.0
    amplitude: float = 0.5
    eps: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    K: float = 4.0
    l: float = 4.0
    threshold: float = 0.99


class EigenCfg(Strict):
    potential: ObservableCfg = Field(default_factory=lambda: ObservableCfg(amplitude=0.2))
    delta: float = 1.0
    ensemble: int = 10000
    T: float = 40.0
    period: float = 1.0
    burn_in: float = 10.0
    relation_t: float = 2.0
    tolerance: float = 0.1


class VerifyCfg(Strict):
    m: int = 1
    ensemble: int = 1000
    horizon: float = 20.0
    n_times: int = 41
    amplitudes: list[float] = Field(default_factory=lambda: [0.5, 2.0, 4.0])
    kappa: Optional[float] = None


class ExperimentConfig(Strict):
    kind: Literal["simulate", "pressure", "ldp", "couple", "eigen", "verify"] = "simulate"
    seed: int = 0
    domain: DomainCfg = Field(default_factory=DomainCfg)
    nonlinearity: NonlinearityCfg = Field(default_factory=NonlinearityCfg)
    noise: NoiseCfg = Field(default_factory=NoiseCfg)
    sim: SimCfg = Field(default_factory=SimCfg)
    norm: NormCfg = Field(default_factory=NormCfg)
    simulate: SimulateCfg = Field(default_factory=SimulateCfg)
    pressure: PressureCfg = Field(default_factory=PressureCfg)
    ldp: LdpCfg = Field(default_factory=LdpCfg)
    couple: CoupleCfg = Field(default_factory=CoupleCfg)
    eigen: EigenCfg = Field(default_factory=EigenCfg)
    verify: VerifyCfg = Field(default_factory=VerifyCfg)

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# --- parsing and validation ----------------------------------------------------

def _is_multiple(t: float, dt: float) -> bool:
    n = round(t / dt)
    return abs(n * dt - t) <= 1e-9 * max(1.0, t)


def build_observable(cfg: ObservableCfg) -> Observable:
    if cfg.kind == "tanh_mode":
        return tanh_mode(cfg.mode, cfg.scale, cfg.amplitude, cfg.shift)
    if cfg.kind == "cos_mode":
        obs = cos_mode(cfg.mode, cfg.scale)
        obs = obs.scaled(cfg.amplitude) if cfg.amplitude != 1 else obs
        return obs.shifted(cfg.shift) if cfg.shift else obs
    if cfg.kind == "truncated_quadratic":
        return truncated_quadratic(cfg.mode, cfg.cap)
    if cfg.kind == "velocity_tanh":
        return velocity_tanh(cfg.mode, cfg.scale)
    return constant_observable(cfg.value)


def _resolved_nonlinearity(cfg: ExperimentConfig, lam1: float) -> Nonlinearity:
    nc = cfg.nonlinearity
    bound = min(lam1, cfg.sim.gamma) / 8
    nu = nc.nu if nc.nu is not None else 0.9 * bound
    nl = Nonlinearity(nc.kind, rho=nc.rho, lam=nc.lam, C=1.0, nu=nu)
    C = nc.C if nc.C is not None else calibrate_C(nl)
    return nl.with_constants(C=C)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every cross-field rule; returns the list of violations (empty if valid)."""
    v: list[str] = []
    d, nc, sim, nm = cfg.domain, cfg.nonlinearity, cfg.sim, cfg.norm
    if not 0 <= cfg.seed <= U64_MAX:
        v.append(f"seed must be an unsigned 64-bit integer, got {cfg.seed}")
    if not d.length > 0:
        v.append(f"domain.length must be positive, got {d.length}")
    if d.n_modes < 1:
        v.append(f"domain.n_modes must be >= 1, got {d.n_modes}")
    if not sim.gamma > 0:
        v.append(f"sim.gamma must be positive, got {sim.gamma}")
    if not sim.dt > 0:
        v.append(f"sim.dt must be positive, got {sim.dt}")
    if sim.t_final < 0:
        v.append("sim.t_final must be nonnegative")
    if v:
        return v  # later rules need a valid domain and time step
    lam1 = (np.pi / d.length) ** 2
    if nc.kind == "klein_gordon" and not 0 < nc.rho < 2:
        v.append(f"nonlinearity.rho must lie in (0, 2), got {nc.rho}")
    nu_bound = min(lam1, sim.gamma) / 8
    if nc.nu is not None and not 0 < nc.nu < nu_bound:
        v.append(f"nonlinearity.nu={nc.nu} violates 0 < nu < (lambda1 ^ gamma)/8 = {nu_bound:.6g}")
    if nc.C is not None and not nc.C > 0:
        v.append(f"nonlinearity.C must be positive, got {nc.C}")
    if not 0 <= nm.s < 1:
        v.append(f"norm.s={nm.s} must lie in [0, 1)")
    if nm.s >= 1 - nc.rho / 2:
        v.append(f"norm.s={nm.s} violates s < 1 - rho/2 = {1 - nc.rho / 2:.6g}")
    domain = build_domain(d.length, d.n_modes)
    alpha = nm.alpha if nm.alpha is not None else default_alpha(sim.gamma, lam1)
    if not alpha > 0:
        v.append(f"norm.alpha must be positive, got {alpha}")
    elif not contraction_holds(domain, sim.gamma, alpha):
        v.append(f"norm.alpha={alpha:.6g} too large: the linear flow does not contract the H norm at rate alpha")
    n = d.n_modes
    if cfg.noise.b is not None:
        if len(cfg.noise.b) != n:
            v.append(f"noise.b has {len(cfg.noise.b)} entries, expected {n}")
        elif any(x < 0 for x in cfg.noise.b):
            v.append("noise.b entries must be nonnegative")
        elif cfg.kind in ("couple", "pressure", "ldp", "eigen") and any(x == 0 for x in cfg.noise.b):
            v.append(f"kind={cfg.kind} needs every b_j > 0 (nondegenerate noise)")
    if sim.h is not None and len(sim.h) != n:
        v.append(f"sim.h has {len(sim.h)} entries, expected {n}")
    if not _is_multiple(sim.t_final, sim.dt):
        v.append(f"sim.t_final={sim.t_final} is not a multiple of dt={sim.dt}")
    if not v:
        nl = None
        if nc.nu is None or 0 < nc.nu < nu_bound:
            try:
                nl = _resolved_nonlinearity(cfg, lam1)
            except (ValueError, ConfigurationError) as exc:
                v.append(f"nonlinearity: {exc}")
        if nl is not None:
            rep = check_conditions(nl)
            if not rep.passed:
                v.append(f"nonlinearity constants C={nl.C:.6g}, nu={nl.nu:.6g} fail the growth/dissipativity sweep: "
                         + "; ".join(f"{name} at u={u:.3g}" for name, u, _ in rep.failures))
            stab = build_model(cfg).stability_bound()
            if sim.dt > stab:
                v.append(f"sim.dt={sim.dt} exceeds the stability bound {stab:.6g}")
    v.extend(_kind_rules(cfg, n))
    return v


def _kind_rules(cfg: ExperimentConfig, n: int) -> list[str]:
    v = []
    dt = cfg.sim.dt
    k = cfg.kind

    def times(label, *ts):
        for t in ts:
            if t < 0 or not _is_multiple(t, dt):
                v.append(f"{label}={t} must be a nonnegative multiple of dt={dt}")

    def observable(label, oc: ObservableCfg, need_modes=True):
        if oc.kind != "constant" and not 1 <= oc.mode <= n:
            v.append(f"{label}.mode={oc.mode} outside 1..{n}")

    def initial(label, ic: InitialCfg | None):
        if ic is None:
            return
        for name in ("u", "v"):
            x = getattr(ic, name)
            if x is not None and len(x) != n:
                v.append(f"{label}.{name} has {len(x)} entries, expected {n}")

    if k == "simulate":
        if cfg.simulate.ensemble < 1 or cfg.simulate.stride < 1:
            v.append("simulate.ensemble and simulate.stride must be >= 1")
        initial("simulate.initial", cfg.simulate.initial)
    if k in ("pressure", "ldp"):
        pc = cfg.pressure if k == "pressure" else cfg.ldp.pressure
        label = "pressure" if k == "pressure" else "ldp.pressure"
        observable(f"{label}.observable", pc.observable)
        times(f"{label}.t", pc.t)
        times(f"{label}.t_burn", pc.t_burn)
        if not 0 <= pc.t_burn < pc.t:
            v.append(f"{label}: need 0 <= t_burn < t")
        if not pc.delta > 0:
            v.append(f"{label}.delta must be positive")
        if pc.ensemble < 2:
            v.append(f"{label}.ensemble must be >= 2")
        if pc.beta is not None:
            sup = build_observable(pc.observable).sup_norm
            bad = [b for b in pc.beta if abs(b) * sup > pc.delta]
            if bad:
                v.append(f"{label}.beta values {bad} exceed the oscillation budget |beta| sup|psi| <= delta")
        initial(f"{label}.initial", pc.initial)
        initial(f"{label}.second_initial", pc.second_initial)
        if k == "ldp":
            tc = cfg.ldp.tails
            times("ldp.tails.t_grid", *tc.t_grid)
            if sorted(tc.t_grid) != list(tc.t_grid) or len(tc.t_grid) < 3 or min(tc.t_grid) <= 0:
                v.append("ldp.tails.t_grid must be increasing, positive, with at least 3 points")
            if not tc.intervals or any(not a < b for a, b in tc.intervals):
                v.append("ldp.tails.intervals must be nonempty (a, b) pairs with a < b")
            initial("ldp.tails.second_initial", tc.second_initial)
    if k == "couple":
        cc = cfg.couple
        times("couple.t_final", cc.t_final)
        if cc.levels is not None and any(not 0 <= x <= n for x in cc.levels):
            v.append(f"couple.levels must lie in 0..{n}")
        if cc.pairs < 1 or cc.K <= 0 or cc.l <= 0 or any(e <= 0 for e in cc.eps):
            v.append("couple: pairs >= 1 and K, l, eps > 0 required")
    if k == "eigen":
        ec = cfg.eigen
        observable("eigen.potential", ec.potential)
        times("eigen.period", ec.period)
        times("eigen.relation_t", ec.relation_t)
        if ec.period <= 0 or not _is_multiple(ec.T, ec.period) or not _is_multiple(ec.burn_in, ec.period):
            v.append("eigen.T and eigen.burn_in must be multiples of eigen.period")
        if ec.burn_in >= ec.T:
            v.append("eigen.burn_in must be shorter than eigen.T")
        pot = build_observable(ec.potential)
        osc = 2 * pot.sup_norm if pot.constant is None else 0.0
        if osc >= ec.delta:
            v.append(f"eigen.potential oscillation bound {osc:.4g} is not below delta={ec.delta}")
    if k == "verify":
        vc = cfg.verify
        times("verify.horizon", vc.horizon)
        if vc.m < 1:
            v.append("verify.m must be >= 1")
        if vc.kappa is not None:
            alpha = cfg.norm.alpha if cfg.norm.alpha is not None else default_alpha(
                cfg.sim.gamma, (np.pi / cfg.domain.length) ** 2)
            noise = _noise(cfg)
            cap = noise.B / (2 * alpha)
            if vc.kappa > cap:
                v.append(f"verify.kappa={vc.kappa} exceeds B/(2 alpha)={cap:.6g}")
    return v


def _noise(cfg: ExperimentConfig) -> NoiseSpec:
    n = cfg.domain.n_modes
    if cfg.noise.b is not None:
        return NoiseSpec(cfg.noise.b)
    return NoiseSpec.power_law(n, cfg.noise.b0, cfg.noise.decay)


def parse_config(source: Union[str, Path, dict], strict: bool = True) -> ExperimentConfig:
    """Parse YAML/JSON text, a path, or a mapping; raise ConfigurationError listing every violation."""
    if isinstance(source, dict):
        data = source
    else:
        text = None
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
            try:
                text = Path(source).read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from exc
        else:
            text = str(source)
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        msgs = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigurationError("invalid config: " + "; ".join(msgs), msgs) from exc
    violations = validate(cfg)
    if violations:
        raise ConfigurationError("invalid config: " + "; ".join(violations), violations)
    return cfg


def build_model(cfg: ExperimentConfig) -> Model:
    d = build_domain(cfg.domain.length, cfg.domain.n_modes)
    nl = _resolved_nonlinearity(cfg, d.lambda1)
    h = np.zeros(d.n_modes) if cfg.sim.h is None else np.asarray(cfg.sim.h, float)
    alpha = cfg.norm.alpha if cfg.norm.alpha is not None else default_alpha(cfg.sim.gamma, d.lambda1)
    return Model(d, nl, _noise(cfg), SimParams(cfg.sim.gamma, h, cfg.sim.dt, cfg.sim.t_final),
                 NormParams(alpha, cfg.norm.s))


def default_kappa_for(model: Model) -> float:
    return default_kappa(model.noise, model.alpha)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.canonical(), sort_keys=True)
