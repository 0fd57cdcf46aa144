"""6-D spatial algebra and single rigid-body dynamics.

Velocities are stacked ``[v; w]`` (linear first) and forces ``[f; m]``, both
expressed in a body-fixed frame. A transform ``U`` from frame A to frame B is
the 6x6 matrix ``[[R, 0], [S(r) R, R]]`` where ``R`` rotates B-coordinates into
A-coordinates and ``r`` is the origin of B expressed in A. Velocities move
``A -> B`` with ``U.T`` and forces move ``B -> A`` with ``U``.

The inertial parameter vector has 13 slots::

    [m, m*cx, m*cy, m*cz, Ixx, Iyy, Izz, Ixy, Ixz, Iyz, 0, 0, 0]

with the inertia tensor taken about the frame origin. The trailing three slots
are reserved and always carry zero regressor columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_PARAMS = 13
MASS, FIRST_MOMENT, INERTIA = 0, slice(1, 4), slice(4, 10)

_ORTHO_TOL = 1e-10


class FrameMismatchError(ValueError):
    """Raised when a spatial quantity is used in the wrong frame."""


def skew(v) -> np.ndarray:
    """Return the 3x3 matrix ``S(v)`` with ``S(v) @ u == cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to spatial operation")


@dataclass(frozen=True)
class SpatialVector:
    """Stacked linear/angular velocity or force/moment in a named frame."""

    linear: np.ndarray
    angular: np.ndarray
    kind: str
    frame: str

    def __post_init__(self):
        if self.kind not in ("velocity", "force"):
            raise ValueError(f"kind must be 'velocity' or 'force', got {self.kind!r}")
        lin = np.array(self.linear, dtype=float).reshape(3)
        ang = np.array(self.angular, dtype=float).reshape(3)
        lin.setflags(write=False)
        ang.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def from_array(cls, x, kind: str, frame: str) -> "SpatialVector":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(x[:3], x[3:], kind, frame)

    @property
    def array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class FrameTransform:
    """Pose of frame ``to`` relative to frame ``from_``."""

    rotation: np.ndarray
    translation: np.ndarray
    from_: str = "A"
    to: str = "B"

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        r = np.array(self.translation, dtype=float).reshape(3)
        _finite(R, r)
        if (np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL
                or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL):
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", r)

    @classmethod
    def identity(cls, frame: str = "A") -> "FrameTransform":
        return cls(np.eye(3), np.zeros(3), frame, frame)

    @classmethod
    def planar(cls, angle: float, x: float, y: float,
               from_: str = "A", to: str = "B") -> "FrameTransform":
        """Rotation about z by ``angle`` and an in-plane offset ``(x, y)``."""
        return cls(rot_z(angle), (x, y, 0.0), from_, to)

    @property
    def matrix(self) -> np.ndarray:
        R, r = self.rotation, self.translation
        U = np.zeros((6, 6))
        U[:3, :3] = R
        U[3:, 3:] = R
        U[3:, :3] = skew(r) @ R
        return U


def transform_velocity(U: FrameTransform, v: SpatialVector) -> SpatialVector:
    """Express a velocity given in ``U.from_`` in frame ``U.to``."""
    if v.kind != "velocity":
        raise ValueError("transform_velocity expects a velocity vector")
    if v.frame != U.from_:
        raise FrameMismatchError(
            f"velocity is in frame {v.frame!r} but transform starts at {U.from_!r}")
    return SpatialVector.from_array(U.matrix.T @ v.array, "velocity", U.to)


def transform_force(U: FrameTransform, f: SpatialVector) -> SpatialVector:
    """Express a force given in ``U.to`` in frame ``U.from_``."""
    if f.kind != "force":
        raise ValueError("transform_force expects a force vector")
    if f.frame != U.to:
        raise FrameMismatchError(
            f"force is in frame {f.frame!r} but transform ends at {U.to!r}")
    return SpatialVector.from_array(U.matrix @ f.array, "force", U.from_)


def compose(U1: FrameTransform, U2: FrameTransform) -> FrameTransform:
    """Chain ``A->B`` and ``B->C`` into ``A->C``; matrix equals ``U1 @ U2``."""
    if U1.to != U2.from_:
        raise FrameMismatchError(
            f"cannot chain {U1.from_!r}->{U1.to!r} with {U2.from_!r}->{U2.to!r}")
    R = U1.rotation @ U2.rotation
    r = U1.translation + U1.rotation @ U2.translation
    return FrameTransform(R, r, U1.from_, U2.to)


def inverse(U: FrameTransform) -> FrameTransform:
    Rt = U.rotation.T
    return FrameTransform(Rt, -Rt @ U.translation, U.to, U.from_)


@dataclass(frozen=True)
class GravityField:
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, -9.81, 0.0]))

    def __post_init__(self):
        g = np.array(self.g, dtype=float).reshape(3)
        _finite(g)
        if np.linalg.norm(g) > 20.0:
            raise ValueError("gravity magnitude outside [0, 20] m/s^2")
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class BodyParams:
    """Inertial parameters of one rigid body with adaptation bounds."""

    theta: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("theta", "lower_bounds", "upper_bounds"):
            a = np.array(getattr(self, name), dtype=float).reshape(N_PARAMS)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrs.append(a)
        theta, lo, hi = arrs
        if theta[MASS] <= 0:
            raise ValueError("mass must be positive")
        if np.any(lo > theta) or np.any(theta > hi):
            raise ValueError("theta outside its bounds")

    @classmethod
    def from_inertia(cls, mass: float, com, inertia_com, margin: float = 0.5) -> "BodyParams":
        """Build parameters from mass, centre of mass and inertia about the COM.

        Bounds are ``theta -/+ margin * |theta|`` with a small absolute floor.
        """
        theta = params_from_inertia(mass, com, inertia_com)
        spread = margin * np.abs(theta) + 1e-3
        spread[10:] = 0.0
        return cls(theta, theta - spread, theta + spread)


def params_from_inertia(mass: float, com, inertia_com) -> np.ndarray:
    c = np.asarray(com, dtype=float).reshape(3)
    Ic = np.asarray(inertia_com, dtype=float).reshape(3, 3)
    # parallel-axis shift to the frame origin
    I = Ic + mass * (c @ c * np.eye(3) - np.outer(c, c))
    theta = np.zeros(N_PARAMS)
    theta[MASS] = mass
    theta[FIRST_MOMENT] = mass * c
    theta[INERTIA] = [I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2]]
    return theta


def inertia_tensor(theta) -> np.ndarray:
    xx, yy, zz, xy, xz, yz = np.asarray(theta)[INERTIA]
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


def mass_matrix(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    m, h = theta[MASS], theta[FIRST_MOMENT]
    M = np.zeros((6, 6))
    M[:3, :3] = m * np.eye(3)
    M[:3, 3:] = -skew(h)
    M[3:, :3] = skew(h)
    M[3:, 3:] = inertia_tensor(theta)
    return M


def coriolis_matrix(theta, omega) -> np.ndarray:
    """Skew-symmetric Coriolis/centrifugal matrix ``C(omega)``.

    ``C(w) @ [v; w]`` reproduces the velocity-product terms of the Newton-Euler
    equations about the frame origin.
    """
    theta = np.asarray(theta, dtype=float)
    m, h = theta[MASS], theta[FIRST_MOMENT]
    Sw = skew(omega)
    C = np.zeros((6, 6))
    C[:3, :3] = m * Sw
    C[:3, 3:] = -Sw @ skew(h)
    C[3:, :3] = skew(h) @ Sw
    C[3:, 3:] = -skew(inertia_tensor(theta) @ omega)
    return C


def gravity_wrench(theta, g: GravityField, orientation) -> np.ndarray:
    """Wrench needed to hold the body against gravity, in body coordinates.

    ``orientation`` rotates body coordinates into base coordinates.
    """
    theta = np.asarray(theta, dtype=float)
    gb = np.asarray(orientation, dtype=float).T @ g.g
    return np.concatenate([-theta[MASS] * gb, -np.cross(theta[FIRST_MOMENT], gb)])


def rigid_body_wrench(p: BodyParams | np.ndarray, V, dV, g: GravityField,
                      orientation) -> np.ndarray:
    """Net wrench ``M dV + C(w) V + G`` of a rigid body."""
    theta = p.theta if isinstance(p, BodyParams) else np.asarray(p, dtype=float)
    V = _as6(V)
    dV = _as6(dV)
    _finite(V, dV, orientation)
    return (mass_matrix(theta) @ dV + coriolis_matrix(theta, V[3:]) @ V
            + gravity_wrench(theta, g, orientation))


def _as6(x) -> np.ndarray:
    if isinstance(x, SpatialVector):
        return x.array
    return np.asarray(x, dtype=float).reshape(6)


def _inertia_columns(w) -> np.ndarray:
    """3x6 matrix ``L`` with ``I @ w == L @ [Ixx, Iyy, Izz, Ixy, Ixz, Iyz]``."""
    x, y, z = w
    return np.array([[x, 0, 0, y, z, 0],
                     [0, y, 0, x, 0, z],
                     [0, 0, z, 0, x, y]], dtype=float)


def regressor(V, V_r, dV_r, g: GravityField, orientation) -> np.ndarray:
    """6x13 matrix ``Y`` such that ``Y @ theta == M dV_r + C(w) V_r + G``.

    ``w`` is the angular part of the measured velocity ``V``.
    """
    V, V_r, dV_r = _as6(V), _as6(V_r), _as6(dV_r)
    _finite(V, V_r, dV_r, orientation)
    w = V[3:]
    v_r, w_r = V_r[:3], V_r[3:]
    dv_r, dw_r = dV_r[:3], dV_r[3:]
    gb = np.asarray(orientation, dtype=float).T @ g.g

    a = dv_r + np.cross(w, v_r) - gb
    Y = np.zeros((6, N_PARAMS))
    Y[:3, MASS] = a
    Y[:3, FIRST_MOMENT] = skew(dw_r) + skew(w) @ skew(w_r)
    Y[3:, FIRST_MOMENT] = -skew(a)
    Y[3:, INERTIA] = _inertia_columns(dw_r) + skew(w_r) @ _inertia_columns(w)
    return Y


def virtual_power_flow(V_r, V, F_r, F) -> float:
    """Inner product of velocity error and force error at one frame."""
    vecs = [V_r, V, F_r, F]
    frames = {x.frame for x in vecs if isinstance(x, SpatialVector)}
    if len(frames) > 1:
        raise FrameMismatchError(f"virtual power flow mixes frames {sorted(frames)}")
    V_r, V, F_r, F = (_as6(x) for x in vecs)
    return float((V_r - V) @ (F_r - F))
