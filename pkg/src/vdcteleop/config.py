"""Scenario parameters, experiment presets and INI/override parsing.

Every parameter lives in a flat group (``[channel]``, ``[master]``,
``[operator]``, ``[slave]``, ``[environment]``, ``[sim]``) so it can be
addressed as ``group.key`` from the command line.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import ChannelConfig, ConfigError

# -- parameter groups ---------------------------------------------------------


@dataclass(frozen=True)
class ChannelParams:
    kappa_p: float = 1.0
    kappa_f: float = 300.0
    Lambda: float = 2.0
    A: float = 60e-6
    C: float = 35.0
    delay_T: float = 0.0

    def build(self) -> ChannelConfig:
        return ChannelConfig(self.kappa_p, self.kappa_f, self.Lambda, self.A, self.C, self.delay_T)


@dataclass(frozen=True)
class MasterParams:
    upper_arm: float = 0.20
    forearm: float = 0.27
    crank: float = 0.05
    masses: tuple = (0.15, 0.10, 0.20, 0.10, 0.20)
    q0: tuple = (np.pi / 3, -np.pi / 6)
    half_width_deg: float = 30.0
    K_m: float = 30.0
    rate_estimation: str = "filtered"


@dataclass(frozen=True)
class OperatorParams:
    M_h: float = 0.5
    D_h: float = 5.0
    K_h: float = 100.0
    basis: str = "script"
    omega0: float = 2 * np.pi
    # flattened (t_on, t_off, rise) triples for the script basis
    windows: tuple = (1.0, 11.0, 2.0, 6.0, 11.0, 3.0)
    contact_force: float = 1000.0
    approach: float = 0.05
    slide: float = 0.08
    # explicit p_true overrides the scripted task when non-empty
    p_true: tuple = ()
    p_bound: float = 50.0
    rho: float = 2000.0
    p_hat0: str = "zero"


@dataclass(frozen=True)
class SlaveParams:
    link1: float = 1.6
    link2: float = 1.6
    mass1: float = 300.0
    mass2: float = 150.0
    payload: float = 475.0
    q0: tuple = (np.deg2rad(60.0), np.deg2rad(-100.0))
    K_O2: float = 2e4
    K_1: float = 2e4
    rho_O2: float = 1e3
    theta_margin: float = 0.5
    theta_hat0_error: float = 0.0


@dataclass(frozen=True)
class EnvironmentParams:
    K_e: float = 1e5
    D_e: float = 1e3
    M_e: float = 10.0
    normal: tuple = (0.0, -1.0)
    offset: float = 0.05
    hysteresis: float = 5e-4


@dataclass(frozen=True)
class SimParams:
    duration: float = 20.0
    dt: float = 0.002
    substeps: int = 1
    engage_time: float = 0.0
    disengage_time: float = -1.0
    gravity: float = 9.81
    seed: int = 0


GROUPS = {
    "channel": ChannelParams,
    "master": MasterParams,
    "operator": OperatorParams,
    "slave": SlaveParams,
    "environment": EnvironmentParams,
    "sim": SimParams,
}


@dataclass(frozen=True)
class ScenarioConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    master: MasterParams = field(default_factory=MasterParams)
    operator: OperatorParams = field(default_factory=OperatorParams)
    slave: SlaveParams = field(default_factory=SlaveParams)
    environment: EnvironmentParams = field(default_factory=EnvironmentParams)
    sim: SimParams = field(default_factory=SimParams)
    name: str = "custom"

    def __post_init__(self):
        validate(self)

    def get(self, key: str):
        group, name = _split(key)
        return getattr(getattr(self, group), name)

    def flat(self) -> dict:
        return {f"{g}.{f.name}": getattr(getattr(self, g), f.name)
                for g in GROUPS for f in fields(GROUPS[g])}


def validate(cfg: ScenarioConfig):
    s = cfg.sim
    if not s.dt > 0:
        raise ConfigError("sim.dt must be positive")
    if s.duration < 0:
        raise ConfigError("sim.duration must be non-negative")
    n = s.duration / s.dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigError("sim.duration must be a multiple of sim.dt")
    if s.substeps < 1:
        raise ConfigError("sim.substeps must be >= 1")
    if not 0 <= s.gravity <= 20:
        raise ConfigError("sim.gravity outside [0, 20] m/s^2")
    try:
        cfg.channel.build().delay_steps(s.dt)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if cfg.operator.basis not in ("constant", "harmonic", "script"):
        raise ConfigError(f"unknown operator.basis {cfg.operator.basis!r}")
    if cfg.operator.basis == "script" and (len(cfg.operator.windows) == 0 or len(cfg.operator.windows) % 3):
        raise ConfigError("operator.windows must hold (t_on, t_off, rise) triples")
    if cfg.operator.p_hat0 not in ("zero", "true"):
        raise ConfigError("operator.p_hat0 must be 'zero' or 'true'")
    if cfg.master.rate_estimation not in ("filtered", "exact"):
        raise ConfigError("master.rate_estimation must be 'filtered' or 'exact'")
    if len(cfg.master.masses) != 5 or len(cfg.master.q0) != 2 or len(cfg.slave.q0) != 2:
        raise ConfigError("master.masses needs 5 entries, q0 needs 2")
    for g in ("M_h", "D_h", "K_h"):
        if not getattr(cfg.operator, g) > 0:
            raise ConfigError(f"operator.{g} must be positive")
    for g in ("K_e", "D_e", "M_e"):
        if not getattr(cfg.environment, g) > 0:
            raise ConfigError(f"environment.{g} must be positive")
    for k, v in [("master.K_m", cfg.master.K_m), ("slave.K_O2", cfg.slave.K_O2),
                 ("slave.K_1", cfg.slave.K_1), ("operator.rho", cfg.operator.rho),
                 ("slave.rho_O2", cfg.slave.rho_O2)]:
        if not v > 0:
            raise ConfigError(f"{k} must be positive")


# -- presets ------------------------------------------------------------------

_TABLE1 = {
    "exp1": dict(kappa_p=1.0, kappa_f=300.0, Lambda=2.0, A=60e-6, C=35.0, delay_T=0.0),
    "exp2": dict(kappa_p=4.0, kappa_f=800.0, Lambda=2.0, A=100e-6, C=35.0, delay_T=0.0),
    "exp3": dict(kappa_p=1.5, kappa_f=500.0, Lambda=1.5, A=40e-6, C=35.0, delay_T=0.080),
}

PRESETS = tuple(_TABLE1)


def experiment_preset(name: str) -> ScenarioConfig:
    """Channel parameters of one experiment plus the approach-press-slide-retract task."""
    if name not in _TABLE1:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return ScenarioConfig(channel=ChannelParams(**_TABLE1[name]), name=name)


# -- parsing ------------------------------------------------------------------


def _split(key: str):
    if "." not in key:
        raise ConfigError(f"key {key!r} must look like group.name")
    group, name = key.split(".", 1)
    if group not in GROUPS or name not in {f.name for f in fields(GROUPS[group])}:
        raise ConfigError(f"unknown config key {key!r}")
    return group, name


def _coerce(current, text: str):
    text = text.strip()
    try:
        if isinstance(current, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"cannot parse {text!r}: {e}") from e
    return text


def apply_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    """Apply ``group.key=value`` strings (or ``(key, value)`` pairs)."""
    groups = {g: getattr(cfg, g) for g in GROUPS}
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like group.key=value")
            key, value = item.split("=", 1)
        else:
            key, value = item
        group, name = _split(key.strip())
        cur = getattr(groups[group], name)
        new = _coerce(cur, value) if isinstance(value, str) else value
        groups[group] = replace(groups[group], **{name: new})
    try:
        return replace(cfg, **groups)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_ini(path: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Read an INI file. An optional ``[scenario] preset = exp1`` picks the base."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if base is None:
        preset = parser.get("scenario", "preset", fallback=None)
        base = experiment_preset(preset) if preset else ScenarioConfig()
    items = []
    for section in parser.sections():
        if section == "scenario":
            continue
        if section not in GROUPS:
            raise ConfigError(f"unknown config section [{section}]")
        items += [(f"{section}.{k}", v) for k, v in parser.items(section)]
    return apply_overrides(base, items)


def dump_ini(cfg: ScenarioConfig) -> str:
    lines = []
    for g in GROUPS:
        lines.append(f"[{g}]")
        for f in fields(GROUPS[g]):
            v = getattr(getattr(cfg, g), f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)


def is_numeric_key(cfg: ScenarioConfig, key: str) -> bool:
    v = cfg.get(key)
    return isinstance(v, (int, float)) and not isinstance(v, bool)


__all__ = [
    "ChannelParams", "MasterParams", "OperatorParams", "SlaveParams", "EnvironmentParams",
    "SimParams", "ScenarioConfig", "experiment_preset", "apply_overrides", "load_ini",
    "dump_ini", "PRESETS", "ConfigError", "validate", "is_numeric_key",
]
