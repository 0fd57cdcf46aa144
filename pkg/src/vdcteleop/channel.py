"""Bilateral channel: first-order filters, scaled desired velocities, delays, metrics."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid


class ConfigError(ValueError):
    """Invalid channel or scenario configuration."""


def _diag2(x, name: str) -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim == 0:
        m = m * np.eye(2)
    elif m.shape == (2,):
        m = np.diag(m)
    if m.shape != (2, 2) or not np.allclose(m, np.diag(np.diag(m))):
        raise ConfigError(f"{name} must be a 2x2 diagonal matrix")
    if np.any(np.diag(m) <= 0) or not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class ChannelConfig:
    kappa_p: float = 1.0
    kappa_f: float = 300.0
    Lambda: np.ndarray = 2.0
    A: np.ndarray = 60e-6
    C: np.ndarray = 35.0
    delay_T: float = 0.0

    def __post_init__(self):
        if not self.kappa_p > 0 or not self.kappa_f > 0:
            raise ConfigError("kappa_p and kappa_f must be positive")
        if not self.delay_T >= 0:
            raise ConfigError("delay_T must be non-negative")
        for name in ("Lambda", "A", "C"):
            object.__setattr__(self, name, _diag2(getattr(self, name), name))

    def delay_steps(self, dt: float) -> int:
        n = self.delay_T / dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"delay_T={self.delay_T} is not a multiple of dt={dt}")
        return int(round(n))

    @property
    def virtual_mass(self) -> np.ndarray:
        return self.kappa_p / self.kappa_f * np.linalg.inv(self.A @ self.C)

    @property
    def virtual_damping(self) -> np.ndarray:
        return self.virtual_mass @ self.Lambda


# -- filters and delays -------------------------------------------------------


@dataclass(frozen=True)
class FilterState:
    value: np.ndarray

    def __post_init__(self):
        v = np.array(self.value, dtype=float).reshape(2)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite filter state")
        object.__setattr__(self, "value", v)


def filter_step(fs: FilterState, x, C, dt: float) -> FilterState:
    """Exact zero-order-hold update of ``x~' + C x~ = C x`` over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.exp(-np.diag(np.asarray(C)) * dt)
    return FilterState(e * fs.value + (1.0 - e) * np.asarray(x, dtype=float))


def filter_derivative(fs: FilterState, x, C) -> np.ndarray:
    return np.asarray(C) @ (np.asarray(x, dtype=float) - fs.value)


class DelayLine:
    """FIFO of fixed depth; ``push`` returns the item pushed ``depth`` calls ago."""

    def __init__(self, depth: int, fill=None):
        if depth < 0:
            raise ValueError("delay depth must be non-negative")
        self.depth = int(depth)
        self._buf = deque([fill] * self.depth)

    def push(self, item):
        if self.depth == 0:
            return item
        self._buf.append(item)
        return self._buf.popleft()

    def __len__(self):
        return self.depth


# -- desired velocities -------------------------------------------------------


@dataclass(frozen=True)
class Packet:
    """Filtered velocity, position and force of one side, with their rates."""

    v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p: np.ndarray = field(default_factory=lambda: np.zeros(2))
    f: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dv: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    df: np.ndarray = field(default_factory=lambda: np.zeros(2))


ZERO_PACKET = Packet()


@dataclass(frozen=True)
class LocalSignals:
    """Unfiltered local velocity and position plus the local filtered force."""

    v: np.ndarray
    p: np.ndarray
    f: np.ndarray
    df: np.ndarray = field(default_factory=lambda: np.zeros(2))


def master_desired(local: LocalSignals, remote: Packet, cfg: ChannelConfig):
    """``(V_md, dV_md_known, dV_md_coeff)``; the rate is ``known + coeff @ df~_m``.

    The local force-rate contribution is left symbolic because it is the
    unknown of the force-estimation loop.
    """
    kp, kf, L, A = cfg.kappa_p, cfg.kappa_f, cfg.Lambda, cfg.A
    v_md = (remote.v + L @ (remote.p - kp * local.p) - A @ (remote.f + (kf - kp) * local.f)) / kp
    known = (remote.dv + L @ (remote.dp - kp * local.v) - A @ remote.df) / kp
    coeff = -(kf - kp) / kp * A
    return v_md, known, coeff


def slave_desired(local: LocalSignals, remote: Packet, cfg: ChannelConfig):
    """``(V_sd, dV_sd)`` from local slave motion and the master packet."""
    kp, kf, L, A = cfg.kappa_p, cfg.kappa_f, cfg.Lambda, cfg.A
    v_sd = kp * remote.v - L @ (local.p - kp * remote.p) - kf * A @ remote.f
    dv_sd = kp * remote.dv - L @ (local.v - kp * remote.dp) - kf * A @ remote.df
    return v_sd, dv_sd


def desired_velocities(master_local: LocalSignals, master_packet: Packet,
                       slave_local: LocalSignals, slave_packet: Packet, cfg: ChannelConfig):
    """Undelayed ``(V_md, V_sd, dV_md, dV_sd)``."""
    v_md, known, coeff = master_desired(master_local, slave_packet, cfg)
    v_sd, dv_sd = slave_desired(slave_local, master_packet, cfg)
    return v_md, v_sd, known + coeff @ master_local.df, dv_sd


def desired_velocities_delayed(master_local: LocalSignals, master_packet: Packet,
                               slave_local: LocalSignals, slave_packet: Packet,
                               cfg: ChannelConfig, to_slave: DelayLine, to_master: DelayLine):
    """Same as :func:`desired_velocities` with remote packets read through delay lines."""
    remote_s = to_master.push(slave_packet) or ZERO_PACKET
    remote_m = to_slave.push(master_packet) or ZERO_PACKET
    v_md, known, coeff = master_desired(master_local, remote_s, cfg)
    v_sd, dv_sd = slave_desired(slave_local, remote_m, cfg)
    return v_md, v_sd, known + coeff @ master_local.df, dv_sd


# -- metrics ------------------------------------------------------------------


def tracking_metrics(t, v_m, v_s, p_m, p_s, cfg: ChannelConfig) -> dict:
    """Scaled velocity/position errors, the combined error and running L2 integrals."""
    t = np.asarray(t, dtype=float)
    if t.size > 2 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-6, atol=1e-12):
        raise ValueError("tracking metrics need uniform sampling")
    kp = cfg.kappa_p
    xi_v = kp * np.asarray(v_m) - np.asarray(v_s)
    xi_p = kp * np.asarray(p_m) - np.asarray(p_s)
    Z = -xi_v - xi_p @ cfg.Lambda.T

    def l2(x):
        return cumulative_trapezoid(np.sum(x**2, axis=1), t, initial=0.0)

    return {"xi_v": xi_v, "xi_p": xi_p, "Z": Z,
            "L2_xi_v": l2(xi_v), "L2_xi_p": l2(xi_p), "L2_Z": l2(Z)}


def transparency_metrics(t, f_m_filt, f_s_filt, v_m_filt, dv_m_filt, cfg: ChannelConfig,
                         window: float | None = None) -> dict:
    """Per-axis least-squares fit of virtual mass and damping.

    Regresses ``-f~_m - f~_s / kappa_f`` on ``(dV~_m, V~_m)`` over the last
    ``window`` seconds (all samples when ``None``).
    """
    t = np.asarray(t, dtype=float)
    sel = slice(None) if window is None else t >= t[-1] - window
    y = -np.asarray(f_m_filt)[sel] - np.asarray(f_s_filt)[sel] / cfg.kappa_f
    acc, vel = np.asarray(dv_m_filt)[sel], np.asarray(v_m_filt)[sel]
    mass, damp, resid = np.zeros(2), np.zeros(2), np.zeros_like(y)
    for i in range(2):
        X = np.column_stack([acc[:, i], vel[:, i]])
        if np.linalg.matrix_rank(X, tol=1e-12 * max(1.0, np.abs(X).max())) < 2:
            raise ValueError(f"excitation insufficient on axis {i}")
        coef, *_ = np.linalg.lstsq(X, y[:, i], rcond=None)
        mass[i], damp[i] = coef
        resid[:, i] = y[:, i] - X @ coef
    return {"mass": np.diag(mass), "damping": np.diag(damp), "residual": resid,
            "predicted_mass": cfg.virtual_mass, "predicted_damping": cfg.virtual_damping}
