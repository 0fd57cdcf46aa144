"""Planar open/closed chain bookkeeping shared by the master and slave models.

Each body frame has an origin built from straight segments whose absolute
angles are affine in the joint vector, and an orientation angle that is also
affine in the joints. That is enough to write body twists and their time
derivatives in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spatial import rot_z

_S2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def solve2(M, b) -> np.ndarray:
    """Solve a 2x2 system by Cramer's rule (much cheaper than LAPACK at this size)."""
    a, b_, c, d = M[0][0], M[0][1], M[1][0], M[1][1]
    det = a * d - b_ * c
    if det == 0.0 or not math.isfinite(det):
        raise np.linalg.LinAlgError("singular 2x2 system")
    x0, x1 = b[0], b[1]
    return np.array([(d * x0 - b_ * x1) / det, (a * x1 - c * x0) / det])


@dataclass(frozen=True)
class Segment:
    length: float
    coeffs: tuple[float, float]
    offset: float = 0.0


@dataclass(frozen=True)
class PlanarBody:
    name: str
    segments: tuple[Segment, ...]
    angle_coeffs: tuple[float, float]
    angle_offset: float = 0.0

    def angle(self, q) -> float:
        return float(np.dot(self.angle_coeffs, q) + self.angle_offset)

    def position(self, q) -> np.ndarray:
        q0, q1 = float(q[0]), float(q[1])
        x = y = 0.0
        for s in self.segments:
            phi = s.coeffs[0] * q0 + s.coeffs[1] * q1 + s.offset
            x += s.length * math.cos(phi)
            y += s.length * math.sin(phi)
        return np.array([x, y])

    def position_jacobian(self, q) -> np.ndarray:
        J = np.zeros((2, 2))
        for s in self.segments:
            phi = np.dot(s.coeffs, q) + s.offset
            J += s.length * np.outer([-np.sin(phi), np.cos(phi)], s.coeffs)
        return J

    def position_jacobian_dot(self, q, dq) -> np.ndarray:
        Jd = np.zeros((2, 2))
        for s in self.segments:
            phi = np.dot(s.coeffs, q) + s.offset
            dphi = np.dot(s.coeffs, dq)
            Jd += s.length * dphi * np.outer([-np.cos(phi), -np.sin(phi)], s.coeffs)
        return Jd

    def rotation(self, q) -> np.ndarray:
        return rot_z(self.angle(q))

    def twist_map(self, q) -> np.ndarray:
        """6x2 block mapping joint rates to the body-frame twist."""
        c, s = np.cos(self.angle(q)), np.sin(self.angle(q))
        Rt = np.array([[c, s], [-s, c]])
        T = np.zeros((6, 2))
        T[:2] = Rt @ self.position_jacobian(q)
        T[5] = self.angle_coeffs
        return T

    def twist_map_dot(self, q, dq) -> np.ndarray:
        c, s = np.cos(self.angle(q)), np.sin(self.angle(q))
        Rt = np.array([[c, s], [-s, c]])
        dphi = float(np.dot(self.angle_coeffs, dq))
        Jp = self.position_jacobian(q)
        Td = np.zeros((6, 2))
        Td[:2] = Rt @ (self.position_jacobian_dot(q, dq) - dphi * _S2 @ Jp)
        return Td


class PlanarChain:
    """Fused kinematics and dynamics of several planar bodies (hot path).

    Bodies move in the x-y plane, so the angular velocity is along z and
    gravity acts in-plane. ``thetas`` are 13-element parameter vectors.
    """

    def __init__(self, bodies, thetas, g):
        from .spatial import coriolis_matrix, mass_matrix

        self.bodies = tuple(bodies)
        self.n = len(self.bodies)
        self.thetas = [np.asarray(t, dtype=float) for t in thetas]
        n6 = 6 * self.n
        self.mstar = np.zeros((n6, n6))
        self.cunit = np.zeros((n6, n6))
        for i, th in enumerate(self.thetas):
            sl = slice(6 * i, 6 * i + 6)
            self.mstar[sl, sl] = mass_matrix(th)
            self.cunit[sl, sl] = coriolis_matrix(th, (0.0, 0.0, 1.0))
        self.g = np.asarray(g, dtype=float).reshape(3)
        self._geo = [
            ([(s.length, s.coeffs[0], s.coeffs[1], s.offset) for s in b.segments],
             b.angle_coeffs[0], b.angle_coeffs[1], b.angle_offset)
            for b in self.bodies
        ]
        self._cache = {}
        self._gcache = {}

    def kinematics(self, q, dq=None):
        """Return ``(Theta, Theta_dot, angles)``; ``Theta_dot`` is None without ``dq``.

        Results are memoised on the exact argument values and returned
        read-only, since one control period evaluates the same state often.
        """
        q0, q1 = float(q[0]), float(q[1])
        with_rate = dq is not None
        if with_rate:
            d0, d1 = float(dq[0]), float(dq[1])
        key = (q0, q1, d0, d1) if with_rate else (q0, q1)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._kinematics(q0, q1, d0 if with_rate else 0.0, d1 if with_rate else 0.0, with_rate)
        if len(self._cache) >= 16:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = out
        return out

    def _kinematics(self, q0, q1, d0, d1, with_rate):
        T = np.zeros((6 * self.n, 2))
        Td = np.zeros((6 * self.n, 2)) if with_rate else None
        angles = []
        for i, (segs, a0, a1, aoff) in enumerate(self._geo):
            ang = a0 * q0 + a1 * q1 + aoff
            angles.append(ang)
            c, s = math.cos(ang), math.sin(ang)
            j00 = j01 = j10 = j11 = 0.0
            k00 = k01 = k10 = k11 = 0.0
            for L, c0, c1, off in segs:
                phi = c0 * q0 + c1 * q1 + off
                sp, cp = math.sin(phi), math.cos(phi)
                j00 -= L * sp * c0
                j01 -= L * sp * c1
                j10 += L * cp * c0
                j11 += L * cp * c1
                if with_rate:
                    dphi = c0 * d0 + c1 * d1
                    k00 -= L * cp * dphi * c0
                    k01 -= L * cp * dphi * c1
                    k10 -= L * sp * dphi * c0
                    k11 -= L * sp * dphi * c1
            r = 6 * i
            T[r, 0] = c * j00 + s * j10
            T[r, 1] = c * j01 + s * j11
            T[r + 1, 0] = -s * j00 + c * j10
            T[r + 1, 1] = -s * j01 + c * j11
            T[r + 5, 0] = a0
            T[r + 5, 1] = a1
            if with_rate:
                w = a0 * d0 + a1 * d1
                # Jd - w * S2 @ Jp, with S2 the planar 90-degree rotation
                m00 = k00 + w * j10
                m01 = k01 + w * j11
                m10 = k10 - w * j00
                m11 = k11 - w * j01
                Td[r, 0] = c * m00 + s * m10
                Td[r, 1] = c * m01 + s * m11
                Td[r + 1, 0] = -s * m00 + c * m10
                Td[r + 1, 1] = -s * m01 + c * m11
        T.flags.writeable = False
        if with_rate:
            Td.flags.writeable = False
        return T, Td, tuple(angles)

    def gravity(self, angles) -> np.ndarray:
        key = tuple(angles)
        hit = self._gcache.get(key)
        if hit is not None:
            return hit
        if len(self._gcache) >= 16:
            self._gcache.pop(next(iter(self._gcache)))
        out = self._gcache[key] = self._gravity(key)
        out.flags.writeable = False
        return out

    def _gravity(self, angles) -> np.ndarray:
        gx, gy, gz = self.g
        out = np.zeros(6 * self.n)
        for i, (th, ang) in enumerate(zip(self.thetas, angles)):
            c, s = math.cos(ang), math.sin(ang)
            bx, by, bz = c * gx + s * gy, -s * gx + c * gy, gz
            m, hx, hy, hz = th[0], th[1], th[2], th[3]
            r = 6 * i
            out[r:r + 3] = (-m * bx, -m * by, -m * bz)
            out[r + 3:r + 6] = (-(hy * bz - hz * by), -(hz * bx - hx * bz), -(hx * by - hy * bx))
        return out

    def wrenches(self, V, dV, angles) -> np.ndarray:
        """Stacked ``M dV + C(w) V + G`` for all bodies."""
        return self.required_wrenches(V, V, dV, angles)

    def required_wrenches(self, V, V_r, dV_r, angles) -> np.ndarray:
        """Stacked ``M dV_r + C(w) V_r + G`` with ``w`` taken from ``V``."""
        wz = np.repeat(V[5::6], 6)
        return self.mstar @ dV_r + wz * (self.cunit @ V_r) + self.gravity(angles)
