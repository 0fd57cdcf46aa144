"""2-DOF electric master manipulator coupled to a human operator.

The master is a planar parallelogram linkage driven by two absolute joint
angles ``q = (q2, q3)``: ``q2`` swings the upper arm, ``q3`` the crank and the
forearm. Five bodies are modelled, in this order::

    B11  upper arm          (angle q2, pivot at base)
    B12  rear forearm stub  (angle q3, at the elbow)
    B21  crank              (angle q3, pivot at base)
    B22  parallel link      (angle q2, at the crank tip)
    O1   forearm            (angle q3, at the forearm centre)

The handle frame S_tcp sits at the forearm tip and stays aligned with the
base, so the 2-D tip velocity is the Cartesian velocity in base axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import spatial
from ._planar import PlanarBody, PlanarChain, Segment, solve2
from .spatial import BodyParams, GravityField

BODY_NAMES = ("B11", "B12", "B21", "B22", "O1")
_Z = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])


class WorkspaceError(ValueError):
    """Joint configuration outside the configured workspace box."""


class SingularityError(ValueError):
    """Jacobian too badly conditioned to invert."""


class AlgebraicLoopError(ValueError):
    """The force-estimation loop is not a contraction."""

    def __init__(self, sigma_max: float):
        self.sigma_max = sigma_max
        super().__init__(
            f"algebraic loop gain sigma_max(C A2 A) = {sigma_max:.6g} >= 1; "
            "reduce C or A")


def _u(angle: float, x: float, y: float) -> np.ndarray:
    """6x6 transform matrix for a planar pose (no validation, hot path)."""
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    U = np.zeros((6, 6))
    U[:3, :3] = R
    U[3:, 3:] = R
    U[3:, :3] = spatial.skew((x, y, 0.0)) @ R
    return U


def _rod(mass: float, length: float, com_x: float) -> BodyParams:
    Ic = np.diag([1e-6 * mass, mass * length**2 / 12, mass * length**2 / 12])
    return BodyParams.from_inertia(mass, (com_x, 0.0, 0.0), Ic)


@dataclass(frozen=True)
class MasterModel:
    """Geometry, inertia and workspace of the master linkage."""

    upper_arm: float = 0.20
    forearm: float = 0.27
    crank: float = 0.05
    masses: tuple[float, ...] = (0.15, 0.10, 0.20, 0.10, 0.20)
    gravity: GravityField = field(default_factory=GravityField)
    q_center: tuple[float, float] = (np.pi / 3, -np.pi / 6)
    half_width: float = np.deg2rad(30.0)
    cond_limit: float = 1e6

    def __post_init__(self):
        if len(self.masses) != 5:
            raise ValueError("master needs five link masses")
        a, L, b = self.upper_arm, self.forearm, self.crank
        m = self.masses
        params = (
            _rod(m[0], a, a / 2),
            _rod(m[1], b, -b / 2),
            _rod(m[2], b, -b / 2),
            _rod(m[3], a, a / 2),
            _rod(m[4], L, 0.0),
        )
        object.__setattr__(self, "body_params", params)
        upper = Segment(a, (1.0, 0.0))
        crank = Segment(b, (0.0, 1.0), np.pi)
        bodies = (
            PlanarBody("B11", (), (1.0, 0.0)),
            PlanarBody("B12", (upper,), (0.0, 1.0)),
            PlanarBody("B21", (), (0.0, 1.0)),
            PlanarBody("B22", (crank,), (1.0, 0.0)),
            PlanarBody("O1", (upper, Segment(L / 2, (0.0, 1.0))), (0.0, 1.0)),
        )
        tip = PlanarBody("S_tcp", (upper, Segment(L, (0.0, 1.0))), (0.0, 0.0))
        object.__setattr__(self, "bodies", bodies)
        object.__setattr__(self, "tip", tip)
        object.__setattr__(self, "chain", PlanarChain(bodies, [p.theta for p in params], self.gravity.g))
        object.__setattr__(self, "_tip_chain", PlanarChain((tip,), [np.zeros(13)], self.gravity.g))

    # -- kinematics ---------------------------------------------------------

    def check_workspace(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(np.abs(q - self.q_center) > self.half_width + 1e-12):
            raise WorkspaceError(f"master joints {q} outside workspace box")

    def transforms(self, q) -> dict[str, np.ndarray]:
        """6x6 transforms between adjacent frames of the linkage."""
        q2, q3 = q
        a, L, b = self.upper_arm, self.forearm, self.crank
        return {
            "B11_B12": _u(q3 - q2, a, 0.0),
            "B21_B22": _u(q2 - q3, -b, 0.0),
            "B12_Tcc": _u(0.0, -b, 0.0),
            "Tcc_O1": _u(0.0, b + L / 2, 0.0),
            "O1_Stcp": _u(-q3, L / 2, 0.0),
        }

    def frame_transform(self, q, name: str) -> spatial.FrameTransform:
        """Pose of a body frame (or ``S_tcp``) relative to the base."""
        body = self.tip if name == "S_tcp" else self.bodies[BODY_NAMES.index(name)]
        p = body.position(q)
        return spatial.FrameTransform.planar(body.angle(q), p[0], p[1], "base", name)

    def mapping_theta(self, q, check: bool = True) -> np.ndarray:
        """30x2 matrix stacking the body twists of B11, B12, B21, B22, O1."""
        if check:
            self.check_workspace(q)
        return self.chain.kinematics(q)[0]

    def mapping_theta_from_transforms(self, q) -> np.ndarray:
        """The same matrix assembled link by link from the frame transforms."""
        U = self.transforms(q)
        z = _Z
        up = U["B11_B12"].T @ z - z
        cr = U["B21_B22"].T @ z - z
        to_o1 = U["Tcc_O1"].T @ U["B12_Tcc"].T
        Th = np.zeros((30, 2))
        Th[0:6, 0] = z
        Th[6:12, 0] = up
        Th[6:12, 1] = z
        Th[12:18, 1] = z
        Th[18:24, 0] = z
        Th[18:24, 1] = cr
        Th[24:30, 0] = to_o1 @ up
        Th[24:30, 1] = to_o1 @ z
        return Th

    def theta_dot(self, q, dq) -> np.ndarray:
        return self.chain.kinematics(q, dq)[1]

    def jacobian(self, q, check: bool = True) -> np.ndarray:
        """2x2 map from joint rates to the handle velocity in base axes."""
        if check:
            self.check_workspace(q)
        J = self._tip_chain.kinematics(q)[0][:2]
        if check and cond2(J) > self.cond_limit:
            raise SingularityError(f"master Jacobian singular at q={q}")
        return J

    def verify_workspace(self, n_per_axis: int = 100) -> float:
        """Worst Jacobian condition number over an ``n x n`` grid of the joint box.

        Raises :class:`SingularityError` if any sample exceeds ``cond_limit`` or
        if ``det J`` changes sign across the grid (a singular curve runs
        between samples even when none lands close to it).
        """
        g = np.linspace(-self.half_width, self.half_width, n_per_axis)
        worst = 0.0
        sign = 0.0
        for d2 in g:
            for d3 in g:
                q = (self.q_center[0] + d2, self.q_center[1] + d3)
                J = self.jacobian(q, check=False)
                c = cond2(J)
                if not c <= self.cond_limit:
                    raise SingularityError(f"master Jacobian singular at q=({q[0]:.4f}, {q[1]:.4f}) (cond {c:.3g})")
                s = np.sign(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
                if sign and s != sign:
                    raise SingularityError(f"master Jacobian determinant changes sign near q=({q[0]:.4f}, {q[1]:.4f})")
                sign = s
                worst = max(worst, c)
        return worst

    def jacobian_from_transforms(self, q) -> np.ndarray:
        """Handle Jacobian through the O1 twist and the O1 -> S_tcp transform."""
        Th = self.mapping_theta_from_transforms(q)
        return (self.transforms(q)["O1_Stcp"].T @ Th[24:30])[:2]

    def jacobian_dot(self, q, dq) -> np.ndarray:
        return self._tip_chain.kinematics(q, dq)[1][:2]

    def tip_position(self, q) -> np.ndarray:
        return self.tip.position(q)

    def orientations(self, q):
        return [b.rotation(q) for b in self.bodies]

    # -- dynamics -----------------------------------------------------------

    def joint_mass_matrix(self, q, Th=None) -> np.ndarray:
        Th = self.mapping_theta(q, check=False) if Th is None else Th
        return Th.T @ self.chain.mstar @ Th

    def body_wrenches(self, q, V, dV) -> np.ndarray:
        """Stacked ``M dV + C V + G`` for all bodies (true parameters)."""
        return self.chain.wrenches(V, dV, [b.angle(q) for b in self.bodies])

    def joint_bias(self, q, dq) -> np.ndarray:
        Th, Td, ang = self.chain.kinematics(q, dq)
        return Th.T @ self.chain.wrenches(Th @ dq, Td @ dq, ang)

    def handle_mass(self, q) -> np.ndarray:
        """``Phi^T M* Phi``: device inertia seen at the handle."""
        Jinv = np.linalg.inv(self.jacobian(q, check=False))
        return Jinv.T @ self.joint_mass_matrix(q) @ Jinv


def cond2(J) -> float:
    """Condition number of a 2x2 matrix from its singular values."""
    a, b, c, d = J[0, 0], J[0, 1], J[1, 0], J[1, 1]
    s1 = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    if det == 0.0:
        return np.inf
    root = np.sqrt(max(s1 * s1 - 4 * det * det, 0.0))
    return float(np.sqrt((s1 + root) / (s1 - root))) if s1 > root else np.inf


# -- operator -----------------------------------------------------------------


def _smoothstep(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class ForceBasis:
    """Scalar time functions ``phi_j(t)``; ``Psi(t) = [phi_1 I, phi_2 I, ...]``.

    kind ``constant``: ``[1]``. ``harmonic``: ``[1, sin(w0 t), cos(w0 t)]``.
    ``script``: one smooth window per entry of ``windows``, each
    ``(t_on, t_off, rise)``: ramps up from ``t_on`` and down from ``t_off``.
    """

    kind: str = "harmonic"
    omega0: float = 1.0
    windows: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "script"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "script" and not self.windows:
            raise ValueError("script basis needs at least one window")

    @property
    def n_functions(self) -> int:
        return {"constant": 1, "harmonic": 3}.get(self.kind, len(self.windows))

    @property
    def n_params(self) -> int:
        return 2 * self.n_functions

    def functions(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.ones(1)
        if self.kind == "harmonic":
            return np.array([1.0, np.sin(self.omega0 * t), np.cos(self.omega0 * t)])
        return np.array([
            _smoothstep((float(t) - on) / rise) - _smoothstep((float(t) - off) / rise)
            for on, off, rise in self.windows])

    def matrix(self, t: float) -> np.ndarray:
        phi = self.functions(t)
        out = np.zeros((2, 2 * phi.size))
        out[0, 0::2] = phi
        out[1, 1::2] = phi
        return out


@dataclass(frozen=True)
class OperatorModel:
    """Mass-damper-spring arm plus a linear-in-parameter exogenous force."""

    M_h: np.ndarray
    D_h: np.ndarray
    K_h: np.ndarray
    basis: ForceBasis
    p_true: np.ndarray
    p_lower: np.ndarray
    p_upper: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("M_h", "D_h", "K_h"):
            m = np.array(getattr(self, name), dtype=float).reshape(2, 2)
            if not np.allclose(m, m.T) or np.min(np.linalg.eigvalsh(m)) <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, m)
        n = self.basis.n_params
        for name in ("p_true", "p_lower", "p_upper", "rho"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            object.__setattr__(self, name, v)
        if np.any(self.p_lower > self.p_true) or np.any(self.p_true > self.p_upper):
            raise ValueError("p_true outside [p_lower, p_upper]")
        if np.any(self.rho <= 0):
            raise ValueError("adaptation gains must be positive")

    def exogenous(self, t: float) -> np.ndarray:
        return exogenous_force(self.basis, t, self.p_true)


def exogenous_force(basis: ForceBasis, t: float, p) -> np.ndarray:
    return basis.matrix(t) @ np.asarray(p, dtype=float)


def projected_update(estimate, drive, rho, lower, upper, dt: float) -> np.ndarray:
    """Euler step of ``est_i' = rho_i kappa_i drive_i`` with the projection switch.

    ``kappa_i`` is zero when the estimate sits at (or past) a bound and the
    drive pushes further out; the result is clamped to the bounds.
    """
    est = np.asarray(estimate, dtype=float)
    drive = np.asarray(drive, dtype=float)
    rho, lower, upper = (np.asarray(x, dtype=float) for x in (rho, lower, upper))
    frozen = ((est <= lower) & (drive <= 0)) | ((est >= upper) & (drive >= 0))
    kappa = np.where(frozen, 0.0, 1.0)
    return np.clip(est + dt * rho * kappa * drive, lower, upper)


def adaptation_step(p_hat, s, basis: ForceBasis, t: float, rho, lower, upper,
                    dt: float) -> np.ndarray:
    """Update the exogenous-force parameter estimate from the velocity error ``s``."""
    drive = basis.matrix(t).T @ np.asarray(s, dtype=float)
    return projected_update(p_hat, drive, rho, lower, upper, dt)


# -- control ------------------------------------------------------------------


@dataclass(frozen=True)
class MasterState:
    q: np.ndarray
    dq: np.ndarray
    f_tilde_m: np.ndarray
    p_hat: np.ndarray
    x_h: np.ndarray

    def __post_init__(self):
        for name in ("q", "dq", "f_tilde_m", "p_hat", "x_h"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))


def required_velocity(model: MasterModel, q, v_md, f_tilde_m, A):
    """Return ``(V_mr, dq_mr, V_r)`` with ``V_mr = V_md - A f~_m``."""
    v_mr = np.asarray(v_md, dtype=float) - np.asarray(A) @ np.asarray(f_tilde_m, dtype=float)
    J = model.jacobian(q)
    dq_r = np.linalg.solve(J, v_mr)
    return v_mr, dq_r, model.mapping_theta(q) @ dq_r


def required_accelerations(model: MasterModel, q, dq, v_mr, dv_mr):
    """Body-level required twists and their derivatives for given handle rates."""
    Th, Td, _ = model.chain.kinematics(q, dq)
    return _required_twists(model, q, dq, Th, Td, v_mr, dv_mr)


def _required_twists(model, q, dq, Th, Td, v_mr, dv_mr):
    J = model.jacobian(q, check=False)
    dq_r = np.linalg.solve(J, v_mr)
    ddq_r = np.linalg.solve(J, dv_mr - model.jacobian_dot(q, dq) @ dq_r)
    return Th @ dq_r, Th @ ddq_r + Td @ dq_r


def body_dynamics_from_regressor(model: MasterModel, q, dq, V_r, dV_r, thetas=None):
    """``Y_m theta_m``: the 30-vector of required body wrenches."""
    thetas = [p.theta for p in model.body_params] if thetas is None else thetas
    V = model.mapping_theta(q, check=False) @ dq
    out = np.empty(30)
    for i, (theta, R) in enumerate(zip(thetas, model.orientations(q))):
        sl = slice(6 * i, 6 * i + 6)
        out[sl] = spatial.regressor(V[sl], V_r[sl], dV_r[sl], model.gravity, R) @ theta
    return out


def control_torque(model: MasterModel, operator: OperatorModel, q, dq, x_h, v_mr,
                   dv_mr, p_hat, K_m, t: float) -> np.ndarray:
    """Joint torques realising the handle-space control law.

    ``J^-T tau = Phi^T Y_m theta_m + Y_h theta_h + Psi p_hat + K_m (V_mr - V_m)``

    ``Y_m theta_m`` is evaluated as ``M dV_r + C(w) V_r + G`` per body, which
    is the same vector as :func:`body_dynamics_from_regressor` but cheaper.
    """
    dv_mr = np.asarray(dv_mr, dtype=float)
    if not np.all(np.isfinite(dv_mr)):
        raise ValueError("non-finite required acceleration")
    J = model.jacobian(q)
    v_m = J @ dq
    Th, Td, ang = model.chain.kinematics(q, dq)
    V_r, dV_r = _required_twists(model, q, dq, Th, Td, v_mr, dv_mr)
    body = model.chain.required_wrenches(Th @ dq, V_r, dV_r, ang)
    operator_part = operator.M_h @ dv_mr + operator.D_h @ v_m + operator.K_h @ x_h
    handle = (operator_part + exogenous_force(operator.basis, t, p_hat)
              + np.asarray(K_m) @ (np.asarray(v_mr) - v_m))
    return Th.T @ body + J.T @ handle


def estimated_dynamics(model: MasterModel, q, dq_hat, ddq_hat) -> np.ndarray:
    """Torque the bare device needs for the estimated joint motion."""
    Th, Td, ang = model.chain.kinematics(q, dq_hat)
    V = Th @ dq_hat
    return Th.T @ model.chain.wrenches(V, Th @ ddq_hat + Td @ dq_hat, ang)


def estimate_force(model: MasterModel, q, tau_m, dq_hat, ddq_hat) -> np.ndarray:
    """Net handle force toward the operator from torques minus device dynamics."""
    J = model.jacobian(q)
    return solve2(J.T, np.asarray(tau_m) - estimated_dynamics(model, q, dq_hat, ddq_hat))


@dataclass(frozen=True)
class LoopMatrices:
    """Affine pieces of ``dV_mr = A1 df + B1`` and ``f_hat = A2 A df + B2``."""

    A1: np.ndarray
    B1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    B3: np.ndarray


def build_loop_matrices(model: MasterModel, operator: OperatorModel, q, dq, x_h, v_mr,
                        p_hat, K_m, t, A, C, dvmd_known, dvmd_coeff, f_tilde_m,
                        dq_hat, ddq_hat) -> LoopMatrices:
    """Assemble the loop pieces at the current instant.

    ``dvmd_known + dvmd_coeff @ df`` is the desired-velocity derivative.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    A1 = np.asarray(dvmd_coeff, dtype=float) - A
    B1 = np.asarray(dvmd_known, dtype=float)
    m_eff = model.handle_mass(q) + operator.M_h
    A2 = m_eff @ A1 @ np.linalg.inv(A)
    tau0 = control_torque(model, operator, q, dq, x_h, v_mr, B1, p_hat, K_m, t)
    B2 = estimate_force(model, q, tau0, dq_hat, ddq_hat)
    B3 = C @ (B2 - np.asarray(f_tilde_m, dtype=float))
    return LoopMatrices(A1, B1, A2, B2, B3)


def solve_loop(lm: LoopMatrices, C, A) -> np.ndarray:
    """Closed-form ``df~_m = [I - C A2 A]^-1 B3``; requires a contraction."""
    G = np.asarray(C) @ lm.A2 @ np.asarray(A)
    sigma = float(np.linalg.norm(G, 2))
    if not sigma < 1.0:
        raise AlgebraicLoopError(sigma)
    return np.linalg.solve(np.eye(2) - G, lm.B3)


# -- plant --------------------------------------------------------------------


def master_accelerations(model: MasterModel, operator: OperatorModel, q, dq, x_h, tau, t):
    """Joint accelerations of device + operator arm, and the handle force ``f_m``."""
    Th, Td, ang = model.chain.kinematics(q, dq)
    Jt, Jtd, _ = model._tip_chain.kinematics(q, dq)
    J, jd = Jt[:2], Jtd[:2] @ dq
    v = J @ dq
    arm = operator.D_h @ v + operator.K_h @ x_h + operator.exogenous(t)
    M = Th.T @ model.chain.mstar @ Th + J.T @ operator.M_h @ J
    bias = Th.T @ model.chain.wrenches(Th @ dq, Td @ dq, ang)
    rhs = tau - bias - J.T @ (operator.M_h @ jd + arm)
    ddq = solve2(M, rhs)
    f_m = operator.M_h @ (J @ ddq + jd) + arm
    return ddq, f_m


def master_plant_step(model: MasterModel, operator: OperatorModel, state: MasterState,
                      tau_m, dt: float, t: float, substeps: int = 1) -> MasterState:
    """Advance device + operator by ``dt`` with torques held (classical RK4).

    The operator hand position ``x_h`` is integrated alongside, driven by the
    handle velocity.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = np.asarray(tau_m, dtype=float)

    def rhs(tt, y):
        q, dq, xh = y[:2], y[2:4], y[4:6]
        ddq, _ = master_accelerations(model, operator, q, dq, xh, tau, tt)
        return np.concatenate([dq, ddq, model.jacobian(q, check=False) @ dq])

    y = np.concatenate([state.q, state.dq, state.x_h])
    y = rk4(rhs, t, y, dt, substeps)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite master state")
    return replace(state, q=y[:2], dq=y[2:4], x_h=y[4:6])


def rk4(f, t: float, y, dt: float, substeps: int = 1):
    h = dt / substeps
    for i in range(substeps):
        ti = t + i * h
        k1 = f(ti, y)
        k2 = f(ti + h / 2, y + h / 2 * k1)
        k3 = f(ti + h / 2, y + h / 2 * k2)
        k4 = f(ti + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def accompanying_function(model: MasterModel, operator: OperatorModel, q, v_m, v_mr,
                          p_hat) -> float:
    """Non-negative function of handle velocity error and parameter error."""
    s = np.asarray(v_mr, dtype=float) - np.asarray(v_m, dtype=float)
    kinetic = 0.5 * s @ (model.handle_mass(q) + operator.M_h) @ s
    dp = operator.p_true - np.asarray(p_hat, dtype=float)
    return float(kinetic + 0.5 * np.sum(dp**2 / operator.rho))
