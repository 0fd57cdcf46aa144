"""2-DOF slave manipulator: last-object control, environment contact, adaptation.

The slave is a planar two-link arm with relative joint angles ``q = (q1, q2)``
and ideal joint torques standing in for the hydraulic actuators. Frames::

    B1    link 1, at the base, angle q1
    T_O2  joint 2, driven cutting point of the last object, angle q1 + q2
    O2    last-link body frame, mid-link, same orientation as T_O2
    G     tip, same orientation as O2
    C     tip, aligned with the base

The last link carries a payload at the tip and is the only body whose
parameters are adapted. Link 1 uses its exact model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import spatial
from ._planar import PlanarBody, PlanarChain, Segment, solve2
from .master import _u, cond2, projected_update, rk4, SingularityError, WorkspaceError
from .spatial import BodyParams, GravityField

_Z = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
_SEL = np.hstack([np.eye(2), np.zeros((2, 4))])


def _rod_params(mass: float, length: float, com_x: float) -> np.ndarray:
    Ic = np.diag([1e-3 * mass, mass * length**2 / 12, mass * length**2 / 12])
    return spatial.params_from_inertia(mass, (com_x, 0.0, 0.0), Ic)


def _with_bounds(theta: np.ndarray, margin: float) -> BodyParams:
    spread = margin * np.abs(theta) + 1e-3
    spread[10:] = 0.0
    return BodyParams(theta, theta - spread, theta + spread)


@dataclass(frozen=True)
class SlaveModel:
    """Geometry, inertia and workspace of the slave arm.

    Link lengths give a reach of about 3.2 m; ``payload`` sits at the tip.
    """

    link1: float = 1.6
    link2: float = 1.6
    mass1: float = 300.0
    mass2: float = 150.0
    payload: float = 475.0
    gravity: GravityField = field(default_factory=GravityField)
    q_lower: tuple[float, float] = (np.deg2rad(0.0), np.deg2rad(-170.0))
    q_upper: tuple[float, float] = (np.deg2rad(120.0), np.deg2rad(-10.0))
    cond_limit: float = 1e6
    bound_margin: float = 0.5

    def __post_init__(self):
        if min(self.link1, self.link2) <= 0 or min(self.mass1, self.mass2) <= 0 or self.payload < 0:
            raise ValueError("slave lengths and masses must be positive")
        l1, l2 = self.link1, self.link2
        theta1 = _rod_params(self.mass1, l1, l1 / 2)
        theta2 = _rod_params(self.mass2, l2, 0.0)
        theta2 = theta2 + spatial.params_from_inertia(self.payload, (l2 / 2, 0.0, 0.0), np.zeros((3, 3)))
        object.__setattr__(self, "link1_params", _with_bounds(theta1, self.bound_margin))
        object.__setattr__(self, "object2_params", _with_bounds(theta2, self.bound_margin))
        seg1 = Segment(l1, (1.0, 0.0))
        object.__setattr__(self, "b1", PlanarBody("B1", (), (1.0, 0.0)))
        object.__setattr__(self, "t_o2", PlanarBody("T_O2", (seg1,), (1.0, 1.0)))
        object.__setattr__(self, "o2", PlanarBody("O2", (seg1, Segment(l2 / 2, (1.0, 1.0))), (1.0, 1.0)))
        object.__setattr__(self, "tip", PlanarBody("G", (seg1, Segment(l2, (1.0, 1.0))), (1.0, 1.0)))
        g = self.gravity.g
        object.__setattr__(self, "chain", PlanarChain((self.b1, self.o2), (theta1, theta2), g))
        object.__setattr__(self, "_frames", PlanarChain((self.b1, self.t_o2, self.o2, self.tip),
                                                        [np.zeros(13)] * 4, g))
        tip_base = PlanarBody("C", self.tip.segments, (0.0, 0.0))
        object.__setattr__(self, "_tip_chain", PlanarChain((tip_base,), [np.zeros(13)], g))
        # fixed offsets along the last link; U(-r) is the inverse of U(r) without rotation
        const = {"O2_T": _u(0.0, -l2 / 2, 0.0), "T_O2": _u(0.0, l2 / 2, 0.0), "O2_G": _u(0.0, l2 / 2, 0.0)}
        for m in const.values():
            m.flags.writeable = False
        object.__setattr__(self, "_const_u", const)

    # -- kinematics ---------------------------------------------------------

    def check_workspace(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < np.asarray(self.q_lower) - 1e-12) or np.any(q > np.asarray(self.q_upper) + 1e-12):
            raise WorkspaceError(f"slave joints {q} outside workspace box")

    def transforms(self, q) -> dict[str, np.ndarray]:
        """6x6 transforms; ``"A_B"`` maps forces in B to forces in A."""
        out = dict(self._const_u)
        out["B1_T"] = _u(q[1], self.link1, 0.0)
        out["G_C"] = _u(-(q[0] + q[1]), 0.0, 0.0)
        return out

    def jacobian(self, q, check: bool = True) -> np.ndarray:
        """2x2 map from joint rates to tip velocity in base axes."""
        if check:
            self.check_workspace(q)
        J = self._tip_chain.kinematics(q)[0][:2]
        if check and cond2(J) > self.cond_limit:
            raise SingularityError(f"slave Jacobian singular at q={q}")
        return J

    def jacobian_dot(self, q, dq) -> np.ndarray:
        return self._tip_chain.kinematics(q, dq)[1][:2]

    def tip_position(self, q) -> np.ndarray:
        return self.tip.position(q)

    def twists(self, q, dq) -> dict[str, np.ndarray]:
        """Body-frame twists of B1, T_O2, O2, G and C from joint rates."""
        T = self._frames.kinematics(q)[0] @ np.asarray(dq, dtype=float)
        V_g = T[18:24]
        phi = q[0] + q[1]
        c, s = np.cos(phi), np.sin(phi)
        V_c = V_g.copy()
        V_c[0], V_c[1] = c * V_g[0] - s * V_g[1], s * V_g[0] + c * V_g[1]
        return {"B1": T[0:6], "T_O2": T[6:12], "O2": T[12:18], "G": V_g, "C": V_c}

    def twists_from_transforms(self, q, dq) -> dict[str, np.ndarray]:
        """Same twists propagated through the 6x6 frame transforms."""
        U = self.transforms(q)
        dq = np.asarray(dq, dtype=float)
        V_b1 = _Z * dq[0]
        V_t = U["B1_T"].T @ V_b1 + _Z * dq[1]
        V_o2 = U["T_O2"].T @ V_t
        V_g = U["O2_G"].T @ V_o2
        return {"B1": V_b1, "T_O2": V_t, "O2": V_o2, "G": V_g, "C": U["G_C"].T @ V_g}

    def twist_rates(self, q, dq, ddq) -> dict[str, np.ndarray]:
        """Time derivatives of the B1 and O2 twists."""
        Th, Td, _ = self.chain.kinematics(q, dq)
        dV = Th @ ddq + Td @ dq
        return {"B1": dV[:6], "O2": dV[6:]}

    def mapping_theta(self, q) -> np.ndarray:
        """12x2 matrix stacking the B1 and O2 twist maps."""
        return self.chain.kinematics(q)[0]

    # -- dynamics -----------------------------------------------------------

    def joint_mass_matrix(self, q) -> np.ndarray:
        Th = self.chain.kinematics(q)[0]
        return Th.T @ self.chain.mstar @ Th

    def joint_bias(self, q, dq) -> np.ndarray:
        Th, Td, ang = self.chain.kinematics(q, dq)
        return Th.T @ self.chain.wrenches(Th @ dq, Td @ dq, ang)


# -- environment --------------------------------------------------------------


@dataclass(frozen=True)
class EnvironmentModel:
    """Second-order wall model acting along its normal.

    ``normal`` is the unit direction of penetration (pointing into the wall);
    ``x_ref`` is a point on the undeformed surface. The matrices are
    symmetric and positive semidefinite; the tangential direction is
    frictionless, so they are rank one along the normal.
    """

    M_e: np.ndarray
    D_e: np.ndarray
    K_e: np.ndarray
    normal: np.ndarray
    x_ref: np.ndarray
    hysteresis: float = 5e-4

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(2)
        if not np.isclose(np.linalg.norm(n), 1.0):
            raise ValueError("wall normal must be a unit vector")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "x_ref", np.array(self.x_ref, dtype=float).reshape(2))
        for name in ("M_e", "D_e", "K_e"):
            m = np.array(getattr(self, name), dtype=float).reshape(2, 2)
            if not np.allclose(m, m.T) or np.min(np.linalg.eigvalsh(m)) < -1e-9 * max(1.0, np.abs(m).max()):
                raise ValueError(f"{name} must be symmetric positive semidefinite")
            if n @ m @ n <= 0:
                raise ValueError(f"{name} must be positive along the wall normal")
            object.__setattr__(self, name, m)
        if self.hysteresis < 0:
            raise ValueError("hysteresis band must be non-negative")

    @classmethod
    def wall(cls, normal=(0.0, -1.0), x_ref=(0.0, 0.0), stiffness: float = 1e5,
             damping: float = 1e3, mass: float = 10.0, hysteresis: float = 5e-4):
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        P = np.outer(n, n)
        return cls(mass * P, damping * P, stiffness * P, n, x_ref, hysteresis)

    def displacement(self, tip) -> np.ndarray:
        return np.asarray(tip, dtype=float) - self.x_ref

    def penetration(self, tip) -> float:
        return float(self.normal @ self.displacement(tip))


def environment_force(env: EnvironmentModel, x_s, v_s, a_s, sigma_f: int) -> np.ndarray:
    """Force the tip exerts on the environment; zero out of contact."""
    if not sigma_f:
        return np.zeros(2)
    return env.M_e @ np.asarray(a_s) + env.D_e @ np.asarray(v_s) + env.K_e @ np.asarray(x_s)


def required_contact_force(env: EnvironmentModel, dv_sr, v_s_meas, x_s) -> np.ndarray:
    return env.M_e @ np.asarray(dv_sr) + env.D_e @ np.asarray(v_s_meas) + env.K_e @ np.asarray(x_s)


@dataclass(frozen=True)
class ContactSwitch:
    sigma_f: int = 0
    band: float = 5e-4

    def __post_init__(self):
        if self.sigma_f not in (0, 1):
            raise ValueError("sigma_f must be 0 or 1")


def contact_switch_update(cs: ContactSwitch, tip_position, env: EnvironmentModel) -> ContactSwitch:
    """Engage on any penetration, release once separation exceeds the band."""
    pen = env.penetration(tip_position)
    if cs.sigma_f == 0 and pen > 0:
        return replace(cs, sigma_f=1)
    if cs.sigma_f == 1 and pen < -cs.band:
        return replace(cs, sigma_f=0)
    return cs


# -- control ------------------------------------------------------------------


@dataclass(frozen=True)
class SlaveState:
    q: np.ndarray
    dq: np.ndarray
    f_tilde_s: np.ndarray
    theta_hat_O2: np.ndarray
    x_s: np.ndarray
    a_s: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        for name in ("q", "dq", "f_tilde_s", "theta_hat_O2", "x_s", "a_s"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class SlaveRequired:
    """Required tip velocity and its lifts to the body frames."""

    v_sr: np.ndarray
    dq_r: np.ndarray
    V_r: dict


def required_velocity_slave(model: SlaveModel, q, v_sd, f_tilde_s, A) -> SlaveRequired:
    """``V_sr = V_sd - A f~_s``, joint rates through the Jacobian, and body lifts."""
    v_sr = np.asarray(v_sd, dtype=float) - np.asarray(A) @ np.asarray(f_tilde_s, dtype=float)
    dq_r = solve2(model.jacobian(q), v_sr)
    return SlaveRequired(v_sr, dq_r, model.twists(q, dq_r))


def required_accelerations_slave(model: SlaveModel, q, dq, dq_r, dv_sr):
    J = model.jacobian(q, check=False)
    ddq_r = solve2(J, np.asarray(dv_sr) - model.jacobian_dot(q, dq) @ dq_r)
    Th, Td, _ = model.chain.kinematics(q, dq)
    dV = Th @ ddq_r + Td @ dq_r
    return {"B1": dV[:6], "O2": dV[6:]}


def contact_wrench_G(model: SlaveModel, q, f_c, sigma_f: int) -> np.ndarray:
    """Lift a base-axes tip force to a wrench in G, gated by ``sigma_f``."""
    return model.transforms(q)["G_C"] @ _SEL.T @ (sigma_f * np.asarray(f_c, dtype=float))


def object2_control(model: SlaveModel, q, dq, V_O2_r, dV_O2_r, theta_hat, K_O2, f_sr,
                    sigma_f: int, return_regressor: bool = False):
    """Required wrenches of the last object.

    Returns ``(F_T, F_star, F_G)``: the wrench at the driven cutting point in
    T_O2, the net required wrench in O2 and the required contact wrench in G.
    """
    U = model.transforms(q)
    V = model.twists(q, dq)["O2"]
    Y = spatial.regressor(V, V_O2_r, dV_O2_r, model.gravity, model.o2.rotation(q))
    F_star = Y @ np.asarray(theta_hat) + np.asarray(K_O2) @ (np.asarray(V_O2_r) - V)
    F_G = contact_wrench_G(model, q, f_sr, sigma_f)
    F_T = U["T_O2"] @ (F_star + sigma_f * U["O2_G"] @ F_G)
    if return_regressor:
        return F_T, F_star, F_G, Y
    return F_T, F_star, F_G


def link1_control(model: SlaveModel, q, dq, V_r, dV_r, K_1, F_T) -> np.ndarray:
    """Required wrench at the base joint of link 1, in B1 (exact link model)."""
    V = model.twists(q, dq)["B1"]
    Y = spatial.regressor(V, V_r, dV_r, model.gravity, model.b1.rotation(q))
    F_star = Y @ model.link1_params.theta + np.asarray(K_1) @ (np.asarray(V_r) - V)
    return F_star + model.transforms(q)["B1_T"] @ F_T


def slave_control_torque(model: SlaveModel, env: EnvironmentModel, state: SlaveState,
                         v_sr, dv_sr, K_O2, K_1, sigma_f: int):
    """Joint torques plus the intermediate wrenches (for monitors and adaptation)."""
    q, dq = state.q, state.dq
    J = model.jacobian(q)
    dq_r = solve2(J, v_sr)
    V_r = model.twists(q, dq_r)
    dV_r = required_accelerations_slave(model, q, dq, dq_r, dv_sr)
    v_s = J @ dq
    f_sr = required_contact_force(env, dv_sr, v_s, state.x_s)
    F_T, F_star, F_G, Y = object2_control(model, q, dq, V_r["O2"], dV_r["O2"], state.theta_hat_O2,
                                          K_O2, f_sr, sigma_f, return_regressor=True)
    # link 1 with its exact model, evaluated through the fused chain
    Th, _, ang = model.chain.kinematics(q)
    V = Th @ dq
    V_r_all = np.concatenate([V_r["B1"], V_r["O2"]])
    dV_r_all = np.concatenate([dV_r["B1"], dV_r["O2"]])
    F1 = model.chain.required_wrenches(V, V_r_all, dV_r_all, ang)[:6]
    F1 = F1 + np.asarray(K_1) @ (V_r["B1"] - V[:6])
    F_B1 = F1 + model.transforms(q)["B1_T"] @ F_T
    tau = np.array([F_B1[5], F_T[5]])
    drive = Y.T @ (V_r["O2"] - V[6:])
    return tau, {"V_r": V_r, "dV_r": dV_r, "F_T": F_T, "F_star": F_star, "F_G": F_G,
                 "f_sr": f_sr, "drive": drive}


def adaptation_step_O2(theta_hat, s_O2, rho, lower, upper, dt: float) -> np.ndarray:
    """Projected update of the last-object parameters; same switch as the master."""
    return projected_update(theta_hat, s_O2, rho, lower, upper, dt)


def adaptation_drive_O2(model: SlaveModel, q, dq, V_r, dV_r) -> np.ndarray:
    V = model.twists(q, dq)["O2"]
    Y = spatial.regressor(V, V_r, dV_r, model.gravity, model.o2.rotation(q))
    return Y.T @ (np.asarray(V_r) - V)


# -- plant --------------------------------------------------------------------


def slave_accelerations(model: SlaveModel, env: EnvironmentModel, q, dq, tau, sigma_f: int):
    """Joint accelerations with the wall inertia folded in, and the contact force."""
    J = model.jacobian(q, check=False)
    x = env.displacement(model.tip_position(q))
    v = J @ dq
    jd = model.jacobian_dot(q, dq) @ dq
    M = model.joint_mass_matrix(q)
    rhs = np.asarray(tau, dtype=float) - model.joint_bias(q, dq)
    if sigma_f:
        M = M + J.T @ env.M_e @ J
        rhs = rhs - J.T @ (env.M_e @ jd + env.D_e @ v + env.K_e @ x)
    ddq = solve2(M, rhs)
    a = J @ ddq + jd
    return ddq, environment_force(env, x, v, a, sigma_f), a


def slave_plant_step(model: SlaveModel, env: EnvironmentModel, state: SlaveState, tau,
                     sigma_f: int, dt: float, t: float = 0.0, substeps: int = 1) -> SlaveState:
    """Advance the arm and wall reaction by ``dt`` with torques held (RK4)."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def rhs(tt, y):
        ddq, _, _ = slave_accelerations(model, env, y[:2], y[2:], tau, sigma_f)
        return np.concatenate([y[2:], ddq])

    y = rk4(rhs, t, np.concatenate([state.q, state.dq]), dt, substeps)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite slave state")
    q, dq = y[:2], y[2:]
    _, _, a = slave_accelerations(model, env, q, dq, tau, sigma_f)
    return replace(state, q=q, dq=dq, x_s=env.displacement(model.tip_position(q)), a_s=a)


def contact_force(model: SlaveModel, env: EnvironmentModel, state: SlaveState, sigma_f: int):
    """Contact force from the state and the tip acceleration of the last step."""
    v = model.jacobian(state.q, check=False) @ state.dq
    return environment_force(env, state.x_s, v, state.a_s, sigma_f)


def virtual_power_flow(V_r, V, F_r, F) -> float:
    return spatial.virtual_power_flow(V_r, V, F_r, F)


def object2_actual_wrenches(model: SlaveModel, env: EnvironmentModel, q, dq, ddq, sigma_f: int):
    """Actual wrenches ``(F_T, F_G)`` on the last object for a given motion."""
    U = model.transforms(q)
    tw = model.twists(q, dq)
    dV = model.twist_rates(q, dq, ddq)["O2"]
    F_star = spatial.rigid_body_wrench(model.object2_params.theta, tw["O2"], dV, model.gravity,
                                       model.o2.rotation(q))
    J = model.jacobian(q, check=False)
    x = env.displacement(model.tip_position(q))
    a = J @ ddq + model.jacobian_dot(q, dq) @ dq
    F_G = contact_wrench_G(model, q, environment_force(env, x, J @ dq, a, sigma_f), sigma_f)
    F_T = U["T_O2"] @ (F_star + sigma_f * U["O2_G"] @ F_G)
    return F_T, F_G


def accompanying_function_O2(model: SlaveModel, V_r, V, theta_hat, rho) -> float:
    s = np.asarray(V_r) - np.asarray(V)
    dth = model.object2_params.theta - np.asarray(theta_hat)
    M = spatial.mass_matrix(model.object2_params.theta)
    return float(0.5 * s @ M @ s + 0.5 * np.sum(dth**2 / np.asarray(rho)))
