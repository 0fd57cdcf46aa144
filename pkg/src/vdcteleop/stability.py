"""Delay-independent stability test of the channel with operator and environment.

Each side of the channel, together with its local controller and the
impedance it is attached to, forms a loop gain ``G(s)``. If ``|G(jw)| <= 1``
on both sides for all frequencies, the loop is stable for any constant delay.
No function here takes the delay as input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig

DEFAULT_GRID = (1e-3, 1e6, 100_000)
SWEEP_TOL = 1e-12


@dataclass(frozen=True)
class SecondOrderImpedance:
    M: float = 0.0
    D: float = 0.0
    K: float = 0.0

    def __post_init__(self):
        if min(self.M, self.D, self.K) < 0:
            raise ValueError("impedance coefficients must be non-negative")

    def scaled(self, factor: float) -> "SecondOrderImpedance":
        return SecondOrderImpedance(factor * self.M, factor * self.D, factor * self.K)


@dataclass(frozen=True)
class LoopParams:
    A: float
    C: float
    Lambda: float
    kappa_p: float = 1.0
    kappa_f: float = 1.0

    def __post_init__(self):
        if min(self.A, self.C, self.Lambda, self.kappa_p, self.kappa_f) <= 0:
            raise ValueError("loop parameters must be positive")


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    margin: float
    coefficients: tuple[float, float, float]
    condition_value: float
    side: str = ""
    max_gain: float = float("nan")


def _effective(lp: LoopParams, z: SecondOrderImpedance, side: str) -> SecondOrderImpedance:
    if side == "master":
        return z.scaled(lp.kappa_f / lp.kappa_p)
    if side == "slave":
        return z
    raise ValueError(f"side must be 'master' or 'slave', got {side!r}")


def side_gain(lp: LoopParams, z: SecondOrderImpedance, side: str):
    """Numerator and denominator coefficients (highest power first) of ``G(s)``."""
    e = _effective(lp, z, side)
    A, C, L = lp.A, lp.C, lp.Lambda
    num = [-A * C * e.M, C - A * C * e.D, C * L - A * C * e.K]
    den = [1 + A * C * e.M, L + C + A * C * e.D, L * C + A * C * e.K]
    return num, den


def gain_magnitude(lp: LoopParams, z: SecondOrderImpedance, side: str, omega) -> np.ndarray:
    num, den = side_gain(lp, z, side)
    s = 1j * np.asarray(omega, dtype=float)
    return np.abs(np.polyval(num, s) / np.polyval(den, s))


def quartic_coefficients(lp: LoopParams, z: SecondOrderImpedance, side: str):
    """``(a, b, c)`` with ``|D(jw)|^2 - |N(jw)|^2 = a w^4 + b w^2 + c``."""
    e = _effective(lp, z, side)
    A, C, L = lp.A, lp.C, lp.Lambda
    acm, acd, ack = A * C * e.M, A * C * e.D, A * C * e.K
    a = 1 + 2 * acm
    b = L**2 + 2 * L * acd + 4 * C * acd - 4 * L * C * acm - 2 * ack
    c = 4 * L * A * C**2 * e.K
    return a, b, c


def _squared_parts(lp, z, side):
    """Coefficients in ``X = w^2`` of ``|N|^2`` and ``|D|^2``."""
    (n2, n1, n0), (d2, d1, d0) = side_gain(lp, z, side)
    N = (n2**2, n1**2 - 2 * n2 * n0, n0**2)
    D = (d2**2, d1**2 - 2 * d2 * d0, d0**2)
    return N, D


def _max_gain(lp, z, side) -> float:
    """Exact ``sup_w |G(jw)|`` from the stationary points of ``|G|^2`` in ``w^2``."""
    (n2, n1, n0), (d2, d1, d0) = _squared_parts(lp, z, side)
    crit = np.roots([n2 * d1 - n1 * d2, 2 * (n2 * d0 - n0 * d2), n1 * d0 - n0 * d1])
    xs = [0.0] + [r.real for r in np.atleast_1d(crit) if abs(r.imag) < 1e-12 and r.real > 0]
    vals = [(n2 * x**2 + n1 * x + n0) / (d2 * x**2 + d1 * x + d0) for x in xs]
    vals.append(n2 / d2)
    return float(np.sqrt(max(vals)))


def closed_form_check(lp: LoopParams, z: SecondOrderImpedance, side: str) -> StabilityVerdict:
    """Stable iff ``b + 2 sqrt(a c) >= 0``, i.e. the quartic is non-negative for ``w^2 >= 0``."""
    a, b, c = quartic_coefficients(lp, z, side)
    cond = b + 2 * np.sqrt(a * c)
    g = _max_gain(lp, z, side)
    return StabilityVerdict(bool(cond >= 0), 1 - g, (a, b, c), float(cond), side, g)


def sweep_check(lp: LoopParams, z: SecondOrderImpedance, side: str, omega_grid=None) -> StabilityVerdict:
    """Frequency-sweep oracle on a logarithmic grid."""
    if omega_grid is None:
        lo, hi, n = DEFAULT_GRID
        omega_grid = np.logspace(np.log10(lo), np.log10(hi), n)
    g = float(np.max(gain_magnitude(lp, z, side, omega_grid)))
    a, b, c = quartic_coefficients(lp, z, side)
    return StabilityVerdict(g <= 1 + SWEEP_TOL, 1 - g, (a, b, c), float(b + 2 * np.sqrt(a * c)), side, g)


def delay_robustness_report(cfg: ChannelConfig, operator: SecondOrderImpedance,
                            env: SecondOrderImpedance) -> dict:
    """Per-axis verdicts for both sides; combined stable iff all are stable."""
    out = {"master": [], "slave": []}
    for i in range(2):
        lp = LoopParams(cfg.A[i, i], cfg.C[i, i], cfg.Lambda[i, i], cfg.kappa_p, cfg.kappa_f)
        out["master"].append(closed_form_check(lp, operator, "master"))
        out["slave"].append(closed_form_check(lp, env, "slave"))
    out["stable"] = all(v.stable for v in out["master"] + out["slave"])
    return out
