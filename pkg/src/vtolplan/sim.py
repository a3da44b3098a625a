"""Closed-loop simulation, telemetry, trackability report and FD oracles."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attitude import control_torque, lyapunov_VR
from .config import SimConfig, validated
from .controller import Controller, ControlOutput, FlowState, rk4_flow, theta_v, yaw_angle
from .planner import projection_engaged
from .reference import (
    EulerAttitude,
    cone_inner_angle,
    nominal_angle,
    steady_state_wrench,
    trackability_vectored,
)
from .so3 import I3, Array, cross, hat, norm_dist, vee
from .vehicle import Plant, RigidBodyState, VehicleParams, hover_state

COLUMNS: tuple[str, ...] = (
    ("t",)
    + tuple(f"{n}_{a}" for n in ("x", "v", "xd", "vd", "ex", "ev") for a in "xyz")
    + tuple(f"R{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3))
    + tuple(f"Rp{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3))
    + tuple(f"{n}_{a}" for n in ("w", "wp") for a in "xyz")
    + ("theta_v", "theta_c", "theta_n", "theta_e", "psi")
    + ("fc_norm", "fc_x", "fc_y", "fc_z", "tau_x", "tau_y", "tau_z")
    + tuple(f"w_rot{i}" for i in range(1, 7))
    + ("V_R", "Psi_KR", "dR_margin", "clamp")
)
COL = {c: i for i, c in enumerate(COLUMNS)}

# clamp flag bits
CLAMP_NEGATIVE = 1
CLAMP_SPEED = 2


@dataclass
class SimResult:
    config: SimConfig
    data: Array  # (steps, len(COLUMNS))
    summary: dict
    checkpoints: list[FlowState] = field(default_factory=list)

    def column(self, name: str) -> Array:
        return self.data[:, COL[name]]


def make_controller(cfg: SimConfig) -> Controller:
    return Controller(cfg.position, cfg.attitude, cfg.vehicle, cfg.make_planner())


def initial_state(cfg: SimConfig) -> RigidBodyState:
    """Hover trim at ``x0`` (rotors included), then the configured offsets."""
    s = hover_state(cfg.vehicle, cfg.x0)
    s.v = cfg.v0.copy()
    s.R = cfg.R0.copy()
    s.w = cfg.w0.copy()
    return s


def _row(t, s: RigidBodyState, sample, out: ControlOutput, theta_n: float, rho: float,
         clamp: int) -> list[float]:
    f_c = out.f_c
    nfc = math.sqrt(float(f_c @ f_c))
    st = out.rates
    dR = out.c * out.R_e - I3
    margin = rho * norm_dist(out.R_e) - float(np.linalg.norm(dR))
    th_c = math.acos(max(-1.0, min(1.0, f_c[2] / nfc)))
    th_e = math.acos(max(-1.0, min(1.0, float(st.R_p[:, 2] @ s.R[:, 2]))))
    return [t, *s.x, *s.v, *sample.x_d, *sample.v_d, *out.e_x, *out.e_v, *s.R.ravel(),
            *st.R_p.ravel(), *s.w, *st.w_p, theta_v(s.R), th_c, theta_n, th_e,
            yaw_angle(s.R), nfc, *f_c, *out.tau_c, *s.w_rot, out.V_R, out.psi_KR, margin,
            float(clamp)]


def run_sim(cfg: SimConfig, validate_first: bool = True) -> SimResult:
    """Run one closed-loop simulation with the rotor-level plant.

    The controller and planner run every ``dt``; the plant integrates the same
    interval in ``substeps`` pieces with the rotor commands held.

    Raises:
        ConfigError: if a validator fails.
        IntegrationError: on a non-finite state.
    """
    if validate_first:
        validated(cfg)
    t_start = time.perf_counter()
    ctrl = make_controller(cfg)
    plant = Plant(cfg.vehicle, cfg.scheme)
    P = ctrl.planner
    sc = cfg.scenario
    m, g = cfg.vehicle.m, cfg.vehicle.g
    dt = cfg.dt
    n = int(round(cfg.horizon / dt))
    s = initial_state(cfg)
    rho = cfg.attitude.rho
    rows = []
    checkpoints: list[FlowState] = []
    h_sub = dt / cfg.substeps
    measured = cfg.ev_dot == "accelerometer"
    for k in range(n + 1):
        t = k * dt
        smp = sc.sample(t)
        acc = plant.acceleration(s) if measured else None
        out = ctrl.evaluate(smp, s.x, s.v, s.R, s.w, dt=dt, accel=acc)
        a = plant.alloc(out.f_c, out.tau_c)
        clamp = (CLAMP_NEGATIVE if a.clamped else 0) | (CLAMP_SPEED if a.saturated else 0)
        rows.append(_row(t, s, smp, out, nominal_angle(smp, m, g), rho, clamp))
        if cfg.checkpoint_every and k % cfg.checkpoint_every == 0:
            checkpoints.append(FlowState(t, s.x.copy(), s.v.copy(), s.R.copy(), s.w.copy(),
                                         P.R_r.copy()))
        if k == n:
            break
        w_cmd = np.sqrt(a.u_bar)
        for _ in range(cfg.substeps):
            s = plant.step(s, w_cmd, h_sub)
        P.advance(out.rates.w_r, dt)
    data = np.array(rows)
    summary = summarize(cfg, data)
    summary["retractions"] = P.retractions
    summary["max_excess_before_retraction_deg"] = math.degrees(P.max_excess)
    summary["runtime_s"] = time.perf_counter() - t_start
    return SimResult(cfg, data, summary, checkpoints)


def _windows(t: Array, flag: Array) -> list[list[float]]:
    """Maximal intervals where ``flag`` holds, as ``[start, end]`` sample times."""
    out = []
    start = None
    for i, f in enumerate(flag):
        if f and start is None:
            start = t[i]
        if not f and start is not None:
            out.append([float(start), float(t[i - 1])])
            start = None
    if start is not None:
        out.append([float(start), float(t[-1])])
    return out


def window_overlap(windows, target=(17.0, 26.0)) -> float:
    """Intersection over union of a window list with ``target``."""
    a, b = target
    inter = sum(max(0.0, min(e, b) - max(s, a)) for s, e in windows)
    total = sum(e - s for s, e in windows)
    union = total + (b - a) - inter
    return inter / union if union > 0 else 0.0


def summarize(cfg: SimConfig, data: Array) -> dict:
    t = data[:, COL["t"]]
    ex = data[:, [COL["ex_x"], COL["ex_y"], COL["ex_z"]]]
    nex = np.linalg.norm(ex, axis=1)
    thv = data[:, COL["theta_v"]]
    thc = data[:, COL["theta_c"]]
    thn = data[:, COL["theta_n"]]
    clamp = data[:, COL["clamp"]]
    w0, w1 = cfg.steady_window
    win = (t >= w0 - 1e-12) & (t <= w1 + 1e-12)
    after = t >= cfg.bounded_after
    i_pk = int(np.argmax(thv))
    dyn = cfg.planner_mode == "dynamic"
    summary = {
        "name": cfg.name,
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "steps": int(len(t)),
        "theta_v_peak_deg": math.degrees(thv[i_pk]),
        "t_theta_v_peak": float(t[i_pk]),
        "theta_v_peak_after_deg": (math.degrees(float(thv[after].max()))
                                   if after.any() else float("nan")),
        "t_theta_v_peak_after": (float(t[after][np.argmax(thv[after])])
                                 if after.any() else float("nan")),
        "rms_ex_steady": float(np.sqrt(np.mean(nex[win] ** 2))),
        "steady_window": [w0, w1],
        "max_ex_after": float(nex[after].max()) if after.any() else float("nan"),
        "bounded_after": cfg.bounded_after,
        "max_abs_psi_deg": math.degrees(float(np.abs(data[:, COL["psi"]]).max())),
        "max_theta_c_deg": math.degrees(float(thc.max())),
        "max_lateral_fc": float(np.abs(data[:, [COL["fc_x"], COL["fc_y"]]]).max()),
        "min_dR_margin": float(data[:, COL["dR_margin"]].min()),
        "rotor_clamps": int(np.count_nonzero(clamp)),
        "rotor_clamps_after_transient": int(np.count_nonzero(clamp[t > cfg.transient])),
        "theta_n_peak_deg": math.degrees(float(thn.max())),
        # closed loop: V_R may rise while the planner moves R_p; see the Lyapunov suite
        "min_V_R_step_margin": (float(np.min(data[:-1, COL["V_R"]] - data[1:, COL["V_R"]]))
                                if len(t) > 1 else 0.0),
    }
    if dyn:
        th_b = cone_inner_angle(cfg.theta_M, cfg.attitude.eps)
        infeasible = thn > th_b
        summary["theta_M_deg"] = math.degrees(cfg.theta_M)
        summary["cone_margin_max_deg"] = math.degrees(float((thc - cfg.theta_M).max()))
        summary["infeasible_windows"] = _windows(t, infeasible)
        feas = ~infeasible & after
        summary["max_theta_v_feasible_deg"] = (math.degrees(float(thv[feas].max()))
                                               if feas.any() else float("nan"))
    else:
        summary["theta_M_deg"] = None
        summary["cone_margin_max_deg"] = None
    return summary


def write_outputs(res: SimResult, out_dir: str | Path | None = None) -> tuple[Path, Path]:
    """Write the telemetry CSV and JSON summary; returns both paths."""
    d = Path(out_dir if out_dir is not None else res.config.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / res.config.telemetry_name
    json_path = d / res.config.summary_name
    np.savetxt(csv_path, res.data, delimiter=",", header=",".join(COLUMNS), comments="",
               fmt="%.17g")
    json_path.write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_telemetry(path: str | Path) -> tuple[tuple[str, ...], Array]:
    path = Path(path)
    with path.open() as fh:
        header = tuple(fh.readline().strip().split(","))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


# --------------------------------------------------------------------------
# trackability


def check_trajectory(cfg: SimConfig, dt: float | None = None) -> dict:
    """Per-step nominal angle with vectored and thrust-vectoring verdicts.

    Raises:
        ReferenceError: on a degenerate steady-state force.
    """
    dt = cfg.dt if dt is None else dt
    sc = cfg.scenario
    m, g = cfg.vehicle.m, cfg.vehicle.g
    ts = np.arange(0.0, cfg.horizon + 0.5 * dt, dt)
    thn = np.empty(len(ts))
    vectored = np.empty(len(ts), dtype=bool)
    for i, t in enumerate(ts):
        smp = sc.sample(float(t))
        steady_state_wrench(smp, m, cfg.vehicle.J, g)
        ok, thn[i] = trackability_vectored(smp, m, g)
        vectored[i] = ok
    theta_M = cfg.theta_M if cfg.theta_M > 0 else None
    rep = {
        "name": cfg.name,
        "dt": dt,
        "t": ts,
        "theta_n": thn,
        "vectored": vectored,
        "vectored_trackable": bool(vectored.all()),
        "theta_n_peak_deg": math.degrees(float(thn.max())),
        "t_theta_n_peak": float(ts[int(np.argmax(thn))]),
        "theta_M_deg": None if theta_M is None else math.degrees(theta_M),
    }
    if theta_M is not None:
        th_b = cone_inner_angle(theta_M, cfg.attitude.eps)
        thrust_vectoring = thn <= th_b
        rep["theta_b_deg"] = math.degrees(th_b)
        rep["thrust_vectoring"] = thrust_vectoring
        rep["thrust_vectoring_trackable"] = bool(thrust_vectoring.all())
        rep["infeasible_windows"] = _windows(ts, ~thrust_vectoring)
    return rep


def trackability_summary(rep: dict) -> dict:
    """JSON-friendly subset of :func:`check_trajectory`."""
    return {k: v for k, v in rep.items() if not isinstance(v, np.ndarray)}


# --------------------------------------------------------------------------
# FD oracles along the ideal flow


def oracle_controller(cfg: SimConfig) -> Controller:
    """Controller whose planner tolerates RK stages just outside the cone."""
    ctrl = make_controller(cfg)
    ctrl.planner.cone_slack = 1e-2
    return ctrl


def _eval(ctrl: Controller, sc, fs: FlowState) -> ControlOutput:
    return ctrl.evaluate(sc.sample(fs.t), fs.x, fs.v, fs.R, fs.w, R_r=fs.R_r)


def _engaged(ctrl: Controller, out: ControlOutput) -> bool:
    P = ctrl.planner
    if not P.dynamic:
        return False
    b = out.rates.R_r[:, 2]
    return projection_engaged(b, cross(out.rates.w_rd, b), P.delta, P.eps)


def derivative_chain_check(cfg: SimConfig, checkpoints: list[FlowState],
                           h_main: float = 1e-4, h_rc: float = 1e-5) -> dict:
    """Central differences along the ideal flow versus the analytic chain.

    Every checkpoint is flowed ``+-h`` with one RK4 step of the ideal closed
    loop (wrench applied directly, no drag). ``R_p`` is differenced at ``h``
    and ``h/2`` for the convergence ratio. Stencils across which the
    projection's outward branch toggles are skipped.
    """
    ctrl = oracle_controller(cfg)
    sc = cfg.scenario
    keys = ("f_d", "w_c", "dw_c", "w_p", "dw_p", "R_p_h", "R_p_h2")
    err = {k: [] for k in keys}
    skipped = 0
    for fs in checkpoints:
        if fs.t - h_main < 0.0 or fs.t + h_main > sc.horizon:
            continue
        o0 = _eval(ctrl, sc, fs)
        outs = {}
        for h in (h_main, 0.5 * h_main, h_rc):
            outs[h] = (_eval(ctrl, sc, rk4_flow(ctrl, sc, fs, h)),
                       _eval(ctrl, sc, rk4_flow(ctrl, sc, fs, -h)))
        flags = {_engaged(ctrl, o0)} | {_engaged(ctrl, o) for pair in outs.values() for o in pair}
        if len(flags) > 1:
            skipped += 1
            continue

        def fd(h, get):
            op, om = outs[h]
            return (get(op) - get(om)) / (2.0 * h)

        def nrm(a):
            return float(np.linalg.norm(a))

        err["f_d"].append(nrm(fd(h_main, lambda o: o.f_d) - o0.df_d))
        Rc0 = o0.rates.frame.R_c
        err["w_c"].append(nrm(fd(h_rc, lambda o: o.rates.frame.R_c) - Rc0 @ hat(o0.rates.w_c)))
        err["dw_c"].append(nrm(fd(h_main, lambda o: o.rates.w_c) - o0.plan.dw_c))
        err["w_p"].append(nrm(vee_fd(o0.rates.R_p, fd(h_main, lambda o: o.rates.R_p))
                              - o0.rates.w_p))
        err["dw_p"].append(nrm(fd(h_main, lambda o: o.rates.w_p) - o0.plan.dw_p))
        Rp0 = o0.rates.R_p
        err["R_p_h"].append(nrm(fd(h_main, lambda o: o.rates.R_p) - Rp0 @ hat(o0.rates.w_p)))
        err["R_p_h2"].append(nrm(fd(0.5 * h_main, lambda o: o.rates.R_p)
                                 - Rp0 @ hat(o0.rates.w_p)))
    res = {k: (max(v) if v else float("nan")) for k, v in err.items()}
    res["checked"] = len(err["f_d"])
    res["skipped"] = skipped
    res["ratio_R_p"] = (res["R_p_h"] / res["R_p_h2"]) if res["R_p_h2"] > 0 else float("inf")
    return res


def vee_fd(R, dR) -> Array:
    """``vee`` of the skew part of ``R^T dR`` (a body rate from a matrix rate)."""
    A = R.T @ dR
    return vee(0.5 * (A - A.T))


# --------------------------------------------------------------------------
# attitude-only loop


@dataclass
class AttitudeRun:
    t: Array
    V: Array
    min_margin: float  # min over steps of V_k - V_{k+1}
    fd_rel_err: float
    fd_points: int
    in_S_a: bool


def attitude_only_run(cfg: SimConfig, ref: EulerAttitude, R0, w0, horizon: float = 5.0,
                      n_fd: int = 25, h_fd: float = 1e-4) -> AttitudeRun:
    """Track ``R_p(t) = ref`` with the geometric torque on the ideal rigid body.

    The torque is re-evaluated at every RK stage so the only deviation from
    ``dV_R/dt = -e_w^T K_w e_w`` is integration error. ``dV_R/dt`` is checked
    by central differences over local flows ``+-h_fd`` at ``n_fd`` instants,
    relative to ``max(|model|, 1e-3 max_t |model|)``.
    """
    att = cfg.attitude
    veh = cfg.vehicle.with_(g=0.0, drag=False)
    J = np.asarray(veh.J, dtype=float)
    plant = Plant(veh, "rkmk4")

    def wrench(t, v, R, w):
        R_p, w_p, dw_p, *_ = ref.evaluate(t)
        R_e = R @ R_p.T
        return np.zeros(3), control_torque(att, R_e, w - w_p, R_p, w_p, dw_p, w, J)

    def V_and_model(t, R, w):
        R_p, w_p, *_ = ref.evaluate(t)
        e_w = w - w_p
        rep = lyapunov_VR(att, R @ R_p.T, e_w, J)
        return rep.V, rep.V_dot_model, rep.in_S_a

    dt = cfg.dt
    n = int(round(horizon / dt))
    s = RigidBodyState(np.zeros(3), np.zeros(3), np.array(R0, dtype=float),
                       np.array(w0, dtype=float), np.zeros(6))
    ts = np.arange(n + 1) * dt
    V = np.empty(n + 1)
    fd_every = max(1, n // n_fd)
    fd_pairs = []
    in_S_a = True
    for k in range(n + 1):
        t = float(ts[k])
        V[k], model, ok = V_and_model(t, s.R, s.w)
        if k == 0:
            in_S_a = ok
        if k % fd_every == 0 and k > 0:
            sp = plant.step_feedback(s, wrench, t, h_fd)
            sm = plant.step_feedback(s, wrench, t, -h_fd)
            Vp = V_and_model(t + h_fd, sp.R, sp.w)[0]
            Vm = V_and_model(t - h_fd, sm.R, sm.w)[0]
            fd_pairs.append(((Vp - Vm) / (2.0 * h_fd), model))
        if k < n:
            s = plant.step_feedback(s, wrench, t, dt)
    scale = max((abs(mo) for _, mo in fd_pairs), default=0.0)
    floor = 1e-3 * scale
    rel = max((abs(fdv - mo) / max(abs(mo), floor) for fdv, mo in fd_pairs
               if max(abs(mo), floor) > 0), default=0.0)
    return AttitudeRun(ts, V, float(np.min(V[:-1] - V[1:])), rel, len(fd_pairs), in_S_a)


# --------------------------------------------------------------------------
# planner-only cone stress


def cone_stress_run(cfg: SimConfig, rng: np.random.Generator, horizon: float = 6.0) -> dict:
    """Drive the dynamic planner with a random smooth ``R_d`` that violates the cone.

    ``f_d`` follows the scenario's nominal force plus a random smooth
    perturbation (analytic derivatives); roll and pitch amplitudes of
    ``R_d`` exceed ``theta_M`` so the reference is not trackable.
    """
    ctrl = make_controller(cfg)
    P = ctrl.planner
    if not P.dynamic:
        raise ValueError("cone stress needs the dynamic planner")
    m, g = cfg.vehicle.m, cfg.vehicle.g
    thM = cfg.theta_M

    def ang():
        return (rng.uniform(-0.3, 0.3), rng.uniform(1.5, 5.0) * thM,
                rng.uniform(0.3, 3.0), rng.uniform(0.0, 2 * math.pi))

    ref = EulerAttitude(ang(), ang(), (0.0, rng.uniform(0.0, 1.0), rng.uniform(0.2, 1.5),
                                       rng.uniform(0.0, 2 * math.pi)))
    amp = rng.uniform(-2.0, 2.0, size=3)
    amp[2] *= 0.5
    fr = rng.uniform(0.3, 2.5, size=3)
    ph = rng.uniform(0.0, 2 * math.pi, size=3)
    sc = cfg.scenario
    dt = cfg.dt
    n = int(round(horizon / dt))
    max_thc = 0.0
    violated = False
    th_b = cone_inner_angle(thM, cfg.attitude.eps)
    fault = None
    for k in range(n + 1):
        t = k * dt
        base = sc.sample(min(t, sc.horizon))
        R_d, w_d, dw_d, _, _, _ = ref.evaluate(t)
        smp = replace(base, R_d=R_d, w_d=w_d, dw_d=dw_d)
        arg = fr * t + ph
        f_d = m * (base.a_d + g * np.array([0.0, 0.0, 1.0])) + amp * np.sin(arg)
        df_d = m * base.j_d + amp * fr * np.cos(arg)
        fd_b = R_d.T @ f_d
        violated |= math.acos(max(-1.0, min(1.0, fd_b[2] / np.linalg.norm(fd_b)))) > th_b
        try:
            st = P.rates(f_d, df_d, smp)
        except RuntimeError as exc:
            fault = str(exc)
            break
        max_thc = max(max_thc, math.acos(max(-1.0, min(1.0, float(P.R_r[2, 2])))))
        if k < n:
            P.advance(st.w_r, dt)
    return {"fault": fault, "max_theta_c": max_thc, "theta_M": thM, "violates_cone_trackability": violated,
            "retractions": P.retractions, "max_excess": P.max_excess}
