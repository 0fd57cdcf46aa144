"""Fixed-step co-simulation of operator, master, channel, slave and wall.

Per control period the order is: sense, contact switch, filters, slave
packet, master desired velocity and force loop, master packet, slave
desired velocity and control, adaptation, plant integration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import channel as ch
from . import master as ms
from . import slave as sl
from .config import ScenarioConfig
from .spatial import GravityField


class SimulationAbort(RuntimeError):
    """Raised on a non-finite state or an unrecoverable numerical error."""

    def __init__(self, step: int, reason: str, log: "TraceLog"):
        self.step = step
        self.log = log
        super().__init__(f"simulation aborted at step {step}: {reason}")


# -- scenario assembly --------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Models and gains built from a :class:`ScenarioConfig`."""

    cfg: ScenarioConfig
    master: ms.MasterModel
    operator: ms.OperatorModel
    slave: sl.SlaveModel
    env: sl.EnvironmentModel
    channel: ch.ChannelConfig
    K_m: np.ndarray
    K_O2: np.ndarray
    K_1: np.ndarray
    rho_O2: np.ndarray
    p_hat0: np.ndarray
    theta_hat0: np.ndarray


def _basis(op) -> ms.ForceBasis:
    if op.basis == "script":
        w = tuple(tuple(op.windows[i:i + 3]) for i in range(0, len(op.windows), 3))
        return ms.ForceBasis("script", op.omega0, w)
    return ms.ForceBasis(op.basis, op.omega0)


def scripted_task_parameters(cfg: ScenarioConfig, basis: ms.ForceBasis) -> np.ndarray:
    """Exogenous-force parameters for approach/press (window 1) and slide (window 2).

    The handle force needed to hold the master where the slave presses the
    wall with ``contact_force`` balances the reflected force and the arm
    spring; ``slide`` moves the slave along the wall tangent.
    """
    op, env, chp = cfg.operator, cfg.environment, cfg.channel
    p = np.zeros(basis.n_params)
    n = np.asarray(env.normal, dtype=float)
    n = n / np.linalg.norm(n)
    # slide direction chosen so the master stays well inside its joint box
    tangent = np.array([n[1], -n[0]])
    depth = op.approach + op.contact_force / env.K_e
    p[0:2] = -(op.contact_force / chp.kappa_f + op.K_h * depth / chp.kappa_p) * n
    if basis.n_functions > 1:
        p[2:4] = -(op.K_h * op.slide / chp.kappa_p) * tangent
    return p


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Models and gains for ``cfg``; invalid model data raises :class:`ConfigError`."""
    try:
        return _build_scenario(cfg)
    except ch.ConfigError:
        raise
    except (ValueError, ms.WorkspaceError, ms.SingularityError) as e:
        raise ch.ConfigError(str(e)) from e


def _build_scenario(cfg: ScenarioConfig) -> Scenario:
    g = GravityField((0.0, -cfg.sim.gravity, 0.0))
    mp, op, sp, ep = cfg.master, cfg.operator, cfg.slave, cfg.environment
    master = ms.MasterModel(mp.upper_arm, mp.forearm, mp.crank, tuple(mp.masses), g,
                            tuple(mp.q0), np.deg2rad(mp.half_width_deg))
    try:
        master.verify_workspace()
    except ms.SingularityError as e:
        raise ch.ConfigError(f"master workspace box contains a singularity: {e}") from e
    basis = _basis(op)
    if op.p_true:
        p_true = np.asarray(op.p_true, dtype=float)
        if p_true.size != basis.n_params:
            raise ch.ConfigError(f"operator.p_true needs {basis.n_params} entries")
    elif op.basis == "script":
        p_true = scripted_task_parameters(cfg, basis)
    else:
        p_true = np.zeros(basis.n_params)
    bound = max(op.p_bound, 1.5 * np.max(np.abs(p_true), initial=0.0))
    operator = ms.OperatorModel(op.M_h * np.eye(2), op.D_h * np.eye(2), op.K_h * np.eye(2),
                                basis, p_true, -bound, bound, op.rho)
    slave = sl.SlaveModel(sp.link1, sp.link2, sp.mass1, sp.mass2, sp.payload, g,
                          bound_margin=sp.theta_margin)
    q_s0 = np.asarray(sp.q0, dtype=float)
    n = np.asarray(ep.normal, dtype=float)
    n = n / np.linalg.norm(n)
    env = sl.EnvironmentModel.wall(n, slave.tip_position(q_s0) + ep.offset * n, ep.K_e, ep.D_e,
                                   ep.M_e, ep.hysteresis)
    theta = slave.object2_params
    rng = np.random.default_rng(cfg.sim.seed)
    err = sp.theta_hat0_error * rng.uniform(-1.0, 1.0, theta.theta.size) * np.abs(theta.theta)
    theta_hat0 = np.clip(theta.theta + err, theta.lower_bounds, theta.upper_bounds)
    rho_O2 = np.full(13, sp.rho_O2)
    p_hat0 = p_true.copy() if op.p_hat0 == "true" else np.clip(np.zeros_like(p_true), -bound, bound)
    return Scenario(cfg, master, operator, slave, env, cfg.channel.build(),
                    mp.K_m * np.eye(2), sp.K_O2 * np.eye(6), sp.K_1 * np.eye(6), rho_O2,
                    p_hat0, theta_hat0)


# -- trace log ----------------------------------------------------------------


def log_columns(n_p: int):
    """``(name, width)`` pairs in fixed CSV order."""
    return [
        ("t", 1), ("q_m", 2), ("dq_m", 2), ("V_m", 2), ("P_m", 2), ("V_mr", 2), ("f_hat_m", 2),
        ("f_tilde_m", 2), ("f_m", 2), ("p_hat", n_p), ("x_h", 2), ("tau_m", 2),
        ("q_s", 2), ("dq_s", 2), ("V_s", 2), ("P_s", 2), ("V_sr", 2), ("f_hat_s", 2),
        ("f_tilde_s", 2), ("tau_s", 2), ("sigma_f", 1),
        ("V_m_filt", 2), ("dV_m_filt", 2), ("nu_m", 1), ("sKs_m", 1),
        ("nu_O2", 1), ("sKs_O2", 1), ("p_T", 1), ("p_G", 1), ("loop_gain", 1),
        ("xi_v", 2), ("xi_p", 2),
    ]


class TraceLog:
    """Per-step records with named column groups."""

    def __init__(self, columns, data=None):
        self.groups = {}
        names = []
        i = 0
        for name, width in columns:
            self.groups[name] = (i, width)
            names += [name] if width == 1 else [f"{name}_{j}" for j in range(width)]
            i += width
        self.columns = names
        self.spec = list(columns)
        self._rows = []
        self._data = None if data is None else np.asarray(data, dtype=float).reshape(-1, len(names))

    def append(self, row: np.ndarray):
        self._rows.append(row)
        self._data = None

    @property
    def data(self) -> np.ndarray:
        if self._data is None:
            self._data = (np.vstack(self._rows) if self._rows
                          else np.zeros((0, len(self.columns))))
        return self._data

    def __len__(self):
        return len(self.data)

    def __getitem__(self, name: str) -> np.ndarray:
        i, w = self.groups[name]
        return self.data[:, i] if w == 1 else self.data[:, i:i + w]

    def __eq__(self, other):
        return (isinstance(other, TraceLog) and self.columns == other.columns
                and np.array_equal(self.data, other.data))


# -- rate estimation ----------------------------------------------------------


class RateEstimator:
    """Backward differences of the joint angles, each smoothed by a first-order lag."""

    def __init__(self, q0, C, dt):
        self.dt = dt
        self.C = np.asarray(C)
        self.q_prev = np.array(q0, dtype=float)
        self.dq = ch.FilterState(np.zeros(2))
        self.ddq = ch.FilterState(np.zeros(2))

    def update(self, q):
        raw_dq = (np.asarray(q) - self.q_prev) / self.dt
        dq_prev = self.dq.value
        self.dq = ch.filter_step(self.dq, raw_dq, self.C, self.dt)
        self.ddq = ch.filter_step(self.ddq, (self.dq.value - dq_prev) / self.dt, self.C, self.dt)
        self.q_prev = np.array(q, dtype=float)
        return self.dq.value, self.ddq.value


# -- main loop ----------------------------------------------------------------


def _engaged(cfg: ScenarioConfig, t: float) -> bool:
    s = cfg.sim
    return t >= s.engage_time - 1e-12 and (s.disengage_time < 0 or t < s.disengage_time - 1e-12)


class Simulation:
    """Stateful stepper; :func:`run_scenario` drives it to the end."""

    def __init__(self, cfg: ScenarioConfig, scenario: Scenario | None = None):
        self.cfg = cfg
        self.sc = scenario or build_scenario(cfg)
        sc = self.sc
        self.dt = cfg.sim.dt
        self.n_steps = int(round(cfg.sim.duration / self.dt))
        q_m0 = np.asarray(cfg.master.q0, dtype=float)
        q_s0 = np.asarray(cfg.slave.q0, dtype=float)
        try:
            sc.master.jacobian(q_m0)
            sc.slave.jacobian(q_s0)
        except (ms.WorkspaceError, ms.SingularityError) as e:
            raise ch.ConfigError(f"initial configuration: {e}") from e
        self.m = ms.MasterState(q_m0, np.zeros(2), np.zeros(2), sc.p_hat0, np.zeros(2))
        self.s = sl.SlaveState(q_s0, np.zeros(2), np.zeros(2), sc.theta_hat0,
                               sc.env.displacement(sc.slave.tip_position(q_s0)))
        self.contact = sl.ContactSwitch(0, sc.env.hysteresis)
        self.contact = sl.contact_switch_update(self.contact, sc.slave.tip_position(q_s0), sc.env)
        depth = sc.channel.delay_steps(self.dt)
        self.delay_steps = depth
        self.to_slave = ch.DelayLine(depth)
        self.to_master = ch.DelayLine(depth)
        self.rates = RateEstimator(q_m0, sc.channel.C, self.dt)
        self.tau_m_prev = None
        self.origin_m = sc.master.tip_position(q_m0)
        self.origin_s = sc.slave.tip_position(q_s0)
        self.was_engaged = False
        z = ch.FilterState(np.zeros(2))
        self.filt = {"v_m": z, "p_m": z, "v_s": z, "p_s": z}
        self.k = 0
        self.log = TraceLog(log_columns(sc.operator.basis.n_params))

    def step(self):
        sc, cfg, dt = self.sc, self.cfg, self.dt
        C, A = sc.channel.C, sc.channel.A
        t = self.k * dt
        mod_m, mod_s, op = sc.master, sc.slave, sc.operator
        m, s = self.m, self.s

        # sense
        J_m = mod_m.jacobian(m.q)
        v_m = J_m @ m.dq
        J_s = mod_s.jacobian(s.q)
        v_s = J_s @ s.dq
        tip_s = mod_s.tip_position(s.q)
        self.contact = sl.contact_switch_update(self.contact, tip_s, sc.env)
        sigma = self.contact.sigma_f

        engaged = _engaged(cfg, t)
        if engaged and not self.was_engaged:
            self.origin_m = mod_m.tip_position(m.q)
            self.origin_s = tip_s
            self.filt = {"v_m": ch.FilterState(v_m), "p_m": ch.FilterState(np.zeros(2)),
                         "v_s": ch.FilterState(v_s), "p_s": ch.FilterState(np.zeros(2))}
        self.was_engaged = engaged
        if engaged:
            p_m = mod_m.tip_position(m.q) - self.origin_m
            p_s = tip_s - self.origin_s
        else:
            p_m = p_s = np.zeros(2)

        # slave-side force estimate and filters
        f_hat_s = sl.contact_force(mod_s, sc.env, s, sigma)
        df_s = C @ (f_hat_s - s.f_tilde_s)
        fl = self.filt
        raw = {"v_m": v_m, "p_m": p_m, "v_s": v_s, "p_s": p_s}
        d = {k: ch.filter_derivative(fl[k], raw[k], C) for k in fl}
        pkt_s = ch.Packet(fl["v_s"].value, fl["p_s"].value, s.f_tilde_s, d["v_s"], d["p_s"], df_s)
        remote_s = self.to_master.push(pkt_s if engaged else ch.ZERO_PACKET) or ch.ZERO_PACKET

        # master: desired velocity and force-estimation loop
        if engaged:
            loc_m = ch.LocalSignals(v_m, p_m, m.f_tilde_m)
            v_md, dvmd_known, dvmd_coeff = ch.master_desired(loc_m, remote_s, sc.channel)
        else:
            v_md, dvmd_known, dvmd_coeff = np.zeros(2), np.zeros(2), np.zeros((2, 2))
        v_mr = v_md - A @ m.f_tilde_m
        if cfg.master.rate_estimation == "exact":
            dq_hat = m.dq
            if self.tau_m_prev is None:
                ddq_hat = np.zeros(2)
            else:
                ddq_hat, _ = ms.master_accelerations(mod_m, op, m.q, m.dq, m.x_h, self.tau_m_prev, t)
        else:
            dq_hat, ddq_hat = self.rates.update(m.q) if self.k > 0 else (np.zeros(2), np.zeros(2))
        lm = ms.build_loop_matrices(mod_m, op, m.q, m.dq, m.x_h, v_mr, m.p_hat, sc.K_m, t, A, C,
                                    dvmd_known, dvmd_coeff, m.f_tilde_m, dq_hat, ddq_hat)
        loop_gain = float(np.linalg.norm(C @ lm.A2 @ A, 2))
        df_m = ms.solve_loop(lm, C, A)
        dv_mr = lm.A1 @ df_m + lm.B1
        tau_m = ms.control_torque(mod_m, op, m.q, m.dq, m.x_h, v_mr, dv_mr, m.p_hat, sc.K_m, t)
        f_hat_m = ms.estimate_force(mod_m, m.q, tau_m, dq_hat, ddq_hat)
        _, f_m = ms.master_accelerations(mod_m, op, m.q, m.dq, m.x_h, tau_m, t)

        pkt_m = ch.Packet(fl["v_m"].value, fl["p_m"].value, m.f_tilde_m, d["v_m"], d["p_m"], df_m)
        remote_m = self.to_slave.push(pkt_m if engaged else ch.ZERO_PACKET) or ch.ZERO_PACKET

        # slave control
        if engaged:
            v_sd, dv_sd = ch.slave_desired(ch.LocalSignals(v_s, p_s, s.f_tilde_s), remote_m, sc.channel)
        else:
            v_sd = dv_sd = np.zeros(2)
        v_sr = v_sd - A @ s.f_tilde_s
        dv_sr = dv_sd - A @ df_s
        tau_s, info = sl.slave_control_torque(mod_s, sc.env, s, v_sr, dv_sr, sc.K_O2, sc.K_1, sigma)

        # monitors
        s_m = v_mr - v_m
        nu_m = ms.accompanying_function(mod_m, op, m.q, v_m, v_mr, m.p_hat)
        tw = mod_s.twists(s.q, s.dq)
        e_o2 = info["V_r"]["O2"] - tw["O2"]
        nu_o2 = sl.accompanying_function_O2(mod_s, info["V_r"]["O2"], tw["O2"], s.theta_hat_O2, sc.rho_O2)
        ddq_s, _, _ = sl.slave_accelerations(mod_s, sc.env, s.q, s.dq, tau_s, sigma)
        F_T, F_G = sl.object2_actual_wrenches(mod_s, sc.env, s.q, s.dq, ddq_s, sigma)
        p_T = sl.virtual_power_flow(info["V_r"]["T_O2"], tw["T_O2"], info["F_T"], F_T)
        p_G = sigma * sl.virtual_power_flow(info["V_r"]["G"], tw["G"], info["F_G"], F_G)

        row = np.concatenate([
            [t], m.q, m.dq, v_m, p_m, v_mr, f_hat_m, m.f_tilde_m, f_m, m.p_hat, m.x_h, tau_m,
            s.q, s.dq, v_s, p_s, v_sr, f_hat_s, s.f_tilde_s, tau_s, [sigma],
            fl["v_m"].value, d["v_m"], [nu_m, s_m @ sc.K_m @ s_m], [nu_o2, e_o2 @ sc.K_O2 @ e_o2],
            [p_T, p_G, loop_gain], sc.channel.kappa_p * v_m - v_s, sc.channel.kappa_p * p_m - p_s,
        ])
        if not np.all(np.isfinite(row)):
            raise FloatingPointError("non-finite record")
        self.log.append(row)

        # adaptation
        p_hat = ms.adaptation_step(m.p_hat, s_m, op.basis, t, op.rho, op.p_lower, op.p_upper, dt)
        drive = info["drive"]
        th = mod_s.object2_params
        theta_hat = sl.adaptation_step_O2(s.theta_hat_O2, drive, sc.rho_O2, th.lower_bounds,
                                          th.upper_bounds, dt)

        # plants and filter states
        sub = cfg.sim.substeps
        m_new = ms.master_plant_step(mod_m, op, m, tau_m, dt, t, sub)
        self.m = replace(m_new, f_tilde_m=m.f_tilde_m + dt * df_m, p_hat=p_hat)
        s_new = sl.slave_plant_step(mod_s, sc.env, s, tau_s, sigma, dt, t, sub)
        f_s_filt = ch.filter_step(ch.FilterState(s.f_tilde_s), f_hat_s, C, dt).value
        self.s = replace(s_new, f_tilde_s=f_s_filt, theta_hat_O2=theta_hat)
        self.filt = {k: ch.filter_step(fl[k], raw[k], C, dt) for k in fl}
        self.tau_m_prev = tau_m
        self.k += 1

    def run(self) -> TraceLog:
        while self.k < self.n_steps:
            try:
                self.step()
            except (FloatingPointError, np.linalg.LinAlgError, ms.WorkspaceError,
                    ms.SingularityError, ms.AlgebraicLoopError) as e:
                raise SimulationAbort(self.k, str(e), self.log) from e
        return self.log


def run_scenario(cfg: ScenarioConfig) -> TraceLog:
    return Simulation(cfg).run()


# -- diagnostics --------------------------------------------------------------


def rate_residuals(log: TraceLog) -> dict:
    """Signed residuals of the two decrease inequalities, one per step interval.

    Master: ``d(nu_m)/dt + s'K_m s`` should be <= 0. Object 2:
    ``d(nu_O2)/dt + e'K_O2 e - p_T + p_G`` should be <= 0. Rates are forward
    differences; the quadratic and power terms use the trapezoid average.
    Intervals across a contact switch are masked out.
    """
    t = log["t"]
    if len(t) < 2:
        return {"t": t[:0], "master": t[:0], "object2": t[:0], "mask": np.zeros(0, bool)}
    dt = np.diff(t)

    def avg(x):
        return 0.5 * (x[1:] + x[:-1])

    r_m = np.diff(log["nu_m"]) / dt + avg(log["sKs_m"])
    r_o = np.diff(log["nu_O2"]) / dt + avg(log["sKs_O2"]) - avg(log["p_T"]) + avg(log["p_G"])
    sig = log["sigma_f"]
    mask = sig[1:] == sig[:-1]
    return {"t": t[:-1], "master": r_m, "object2": r_o, "mask": mask}


def _interval_average(t_ref, t, r):
    """Average of the piecewise-constant residual ``r`` (intervals ``t[k], t[k+1]``)
    over each coarse interval ``t_ref[k], t_ref[k] + h``."""
    t_ref = np.asarray(t_ref)
    h = np.diff(t_ref, append=t_ref[-1] + (t_ref[-1] - t_ref[-2] if len(t_ref) > 1 else 0.0))
    edges = np.r_[t, t[-1] + (t[-1] - t[-2] if len(t) > 1 else 0.0)]
    cum = np.r_[0.0, np.cumsum(r * np.diff(edges))]
    lo = np.interp(t_ref, edges, cum)
    hi = np.interp(t_ref + h, edges, cum)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(h > 0, (hi - lo) / h, 0.0)


def _local_max(x, half_width: int):
    if half_width <= 0 or len(x) == 0:
        return x
    from numpy.lib.stride_tricks import sliding_window_view

    pad = np.pad(x, half_width, mode="edge")
    return sliding_window_view(pad, 2 * half_width + 1).max(axis=1)


def contact_integral_bound(log: TraceLog, cfg: ScenarioConfig) -> list[dict]:
    """Running integral of ``p_G`` against its analytic lower bound per constant-sigma segment.

    On a segment starting at ``t0`` the integral of ``p_G`` cannot drop below
    ``-sigma/2 e0' M_e e0`` with ``e0`` the slave velocity error at ``t0``.
    """
    from scipy.integrate import cumulative_trapezoid

    t, sig, pg = log["t"], log["sigma_f"], log["p_G"]
    if len(t) == 0:
        return []
    n = np.asarray(cfg.environment.normal, dtype=float)
    n = n / np.linalg.norm(n)
    M_e = cfg.environment.M_e * np.outer(n, n)
    e = log["V_sr"] - log["V_s"]
    cuts = np.flatnonzero(np.diff(sig) != 0) + 1
    out = []
    for a, b in zip(np.r_[0, cuts], np.r_[cuts, len(t)]):
        s = float(sig[a])
        integral = cumulative_trapezoid(pg[a:b], t[a:b], initial=0.0)
        bound = -0.5 * s * float(e[a] @ M_e @ e[a])
        out.append({"t_start": float(t[a]), "t_end": float(t[b - 1]), "sigma_f": s,
                    "bound": bound, "min_integral": float(integral.min()),
                    "violation": float(max(0.0, bound - integral.min()))})
    return out


def monitors(log: TraceLog, cfg: ScenarioConfig, reference: TraceLog | None = None,
             window: int = 2, atol: float = 1e-12) -> dict:
    """Worst violations of the decrease inequalities and the contact integral bound.

    With ``reference`` (the same scenario at half the step) each step's
    truncation estimate is the gap between its signed residual and the
    reference residual averaged over the same interval, taken as a local
    maximum over ``window`` neighbouring steps; ``*_ratio`` is the worst
    violation divided by ten times that estimate plus the roundoff floor
    ``atol`` (<= 1 passes).
    """
    res = rate_residuals(log)
    mask = res["mask"]
    report = {}
    for key in ("master", "object2"):
        viol = np.where(mask, np.maximum(res[key], 0.0), 0.0)
        report[f"{key}_violation"] = float(viol.max(initial=0.0))
        if reference is not None and len(viol):
            ref = rate_residuals(reference)
            gap = np.abs(res[key] - _interval_average(res["t"], ref["t"], ref[key]))
            est = _local_max(gap, window)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(viol > 0, viol / (10.0 * est + atol), 0.0)
            report[f"{key}_truncation"] = est
            report[f"{key}_ratio"] = float(np.nan_to_num(ratio, nan=np.inf).max(initial=0.0))
    segs = contact_integral_bound(log, cfg)
    if reference is not None:
        ref_segs = contact_integral_bound(reference, cfg)
        if len(ref_segs) == len(segs):
            for a, b in zip(segs, ref_segs):
                a["truncation"] = abs(a["min_integral"] - b["min_integral"])
    report["contact_segments"] = segs
    report["contact_violation"] = max((s["violation"] for s in segs), default=0.0)
    return report


def force_ratio(log: TraceLog, cfg: ScenarioConfig) -> np.ndarray:
    """``|kappa_f f~_m + f~_s| / max(|f~_s|, 1 N)`` per sample."""
    num = np.linalg.norm(cfg.channel.kappa_f * log["f_tilde_m"] + log["f_tilde_s"], axis=1)
    return num / np.maximum(np.linalg.norm(log["f_tilde_s"], axis=1), 1.0)


def summarize(log: TraceLog, cfg: ScenarioConfig, report: dict | None = None) -> dict:
    xp = np.linalg.norm(log["xi_p"], axis=1)
    xv = np.linalg.norm(log["xi_v"], axis=1)
    contact = log["sigma_f"] > 0
    fr = force_ratio(log, cfg)[contact]
    report = report or monitors(log, cfg)
    return {
        "steps": len(log),
        "delay_steps": cfg.channel.build().delay_steps(cfg.sim.dt),
        "kappa_p": cfg.channel.kappa_p,
        "kappa_f": cfg.channel.kappa_f,
        "max_xi_p": float(xp.max(initial=0.0)),
        "max_xi_v": float(xv.max(initial=0.0)),
        "contact_steps": int(contact.sum()),
        "force_ratio_median": float(np.median(fr)) if fr.size else float("nan"),
        "force_ratio_max": float(fr.max()) if fr.size else float("nan"),
        "master_violation": report["master_violation"],
        "object2_violation": report["object2_violation"],
        "contact_violation": report["contact_violation"],
    }


def format_summary(summary: dict) -> str:
    width = max(len(k) for k in summary)
    lines = []
    for k, v in summary.items():
        lines.append(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return "\n".join(lines)


# -- CSV ----------------------------------------------------------------------

TRACE_MAGIC = "# teleop-trace v1"


def write_csv(log: TraceLog, path) -> None:
    """Write atomically: temporary file in the target directory, then rename."""
    import os
    import tempfile

    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".trace-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(TRACE_MAGIC + "\n")
            fh.write(",".join(log.columns) + "\n")
            for row in log.data:
                fh.write(",".join("%.17g" % x for x in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> TraceLog:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_MAGIC:
            raise ValueError(f"{path}: not a teleop trace (first line {first!r})")
        header = fh.readline().rstrip("\n").split(",")
        rows = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    spec = _spec_from_header(header)
    log = TraceLog(spec, np.array(rows, dtype=float).reshape(-1, len(header)))
    if log.columns != header:
        raise ValueError(f"{path}: unexpected column layout")
    return log


def _spec_from_header(header):
    spec = []
    for name in header:
        base, _, idx = name.rpartition("_")
        if base and idx.isdigit():
            if idx == "0":
                spec.append((base, 1))
            else:
                spec[-1] = (spec[-1][0], spec[-1][1] + 1)
        else:
            spec.append((name, 1))
    return spec
