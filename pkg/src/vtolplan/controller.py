"""Closed-loop control law and the ideal continuous closed-loop flow.

One evaluation runs, in order: ``f_d``, the model's ``e_v'``, ``f_d'``,
planner rates, ``e_v''``, ``f_d''``, planner accelerations, and finally the
body wrench ``(f_c, tau_c)``.
By default ``e_v'`` comes from the closed-loop model ``m e_v' = beta +
Delta_R f_d``, which is exact for the ideal plant and keeps the chain
analytic. When a measured acceleration is passed, ``e_v'`` uses it instead,
so unmodeled forces such as drag do not bias ``f_d'``; ``e_v''`` then keeps
the model form and neglects the rate of the unmodeled residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attitude import AttitudeGains, control_torque, scaling_c
from .planner import Planner, PlannerOutput, PlannerRates, build_Rc
from .position import GainError, PositionGains, beta_ddot, beta_dot, beta_eval
from .reference import ReferenceSample
from .so3 import E3, Array, hat, nav_fn
from .vehicle import VehicleParams


@dataclass(frozen=True)
class ControlOutput:
    """Everything one control evaluation produces (inertial frame unless noted)."""

    e_x: Array
    e_v: Array
    f_d: Array
    df_d: Array
    ddf_d: Array
    de_v: Array
    dde_v: Array
    c: float
    R_e: Array
    e_w: Array
    f_c: Array  # body frame
    tau_c: Array  # body frame
    rates: PlannerRates
    plan: PlannerOutput
    psi_KR: float
    V_R: float


class Controller:
    """Position law, planner and attitude law for one vehicle."""

    def __init__(self, pos: PositionGains, att: AttitudeGains, veh: VehicleParams,
                 planner: Planner):
        self.pos = pos
        self.att = att
        self.veh = veh
        self.planner = planner
        self.m = veh.m
        self.g = veh.g
        self.J = np.asarray(veh.J, dtype=float)

    def _dc(self, R_p, R, w, w_p) -> float:
        """Time derivative of the scaling ``c`` through ``Q = R_p^T R``."""
        Q = R_p.T @ R
        dQ = Q @ hat(w) - hat(w_p) @ Q
        if self.att.scaling == "tilt":
            return float(dQ[2, 2]) / self.att.ell
        return 0.5 * float(np.trace(self.att.K_c @ dQ)) / self.att.psi_level

    def evaluate(self, s: ReferenceSample, x, v, R, w, R_r=None,
                 dt: float | None = None, accel=None) -> ControlOutput:
        """Evaluate the control law at state ``(x, v, R, w)`` and planner ``R_r``.

        Args:
            accel: measured inertial acceleration ``dv/dt``; ``None`` uses the model.

        Raises:
            GainError: if the vertical desired force is not strictly positive.
        """
        m, pos, att = self.m, self.pos, self.att
        e_x = x - s.x_d
        e_v = v - s.v_d
        b = beta_eval(pos, e_x, e_v)
        f_d = b.beta + m * (s.a_d + self.g * E3)
        if not f_d[2] > 0.0:
            raise GainError("f_d3 <= 0: the lam2 margin is violated for this reference")
        P = self.planner
        R_rr = P.R_r if R_r is None else R_r
        R_c = build_Rc(f_d, s.psi_d)
        R_p = R_c @ R_rr if P.dynamic else R_c
        R_e = R @ R_p.T
        c = scaling_c(att, R_e, R_p)
        cRe = c * R_e
        de_v = (b.beta + cRe @ f_d - f_d) / m if accel is None else accel - s.a_d
        db = beta_dot(b, pos, e_v, de_v)
        df_d = db + m * s.j_d
        st = P.rates(f_d, df_d, s, R_r=R_rr)
        e_w = w - st.w_p
        dc = self._dc(st.R_p, R, w, st.w_p)
        dDelta_f = dc * (R_e @ f_d) + cRe @ (hat(st.R_p @ e_w) @ f_d)
        dde_v = (db + dDelta_f + cRe @ df_d - df_d) / m
        ddf_d = beta_ddot(b, pos, e_v, de_v, dde_v) + m * s.s_d
        plan = P.accelerations(st, f_d, df_d, ddf_d, s, dt=dt)
        f_c = c * (st.R_p.T @ f_d)
        tau_c = control_torque(att, R_e, e_w, st.R_p, st.w_p, plan.dw_p, w, self.J)
        psi = nav_fn(att.K_R, R_e)
        V = 0.5 * float(e_w @ (self.J @ e_w)) + psi
        return ControlOutput(e_x, e_v, f_d, df_d, ddf_d, de_v, dde_v, c, R_e, e_w, f_c,
                             tau_c, st, plan, psi, V)


# --------------------------------------------------------------------------
# ideal flow: wrench applied directly, no rotors and no drag


@dataclass
class FlowState:
    """Closed-loop state including the planner's relative rotation."""

    t: float
    x: Array
    v: Array
    R: Array
    w: Array
    R_r: Array

    def pack(self) -> Array:
        return np.concatenate((self.x, self.v, self.R.ravel(), self.w, self.R_r.ravel()))

    @classmethod
    def unpack(cls, t: float, y) -> "FlowState":
        y = np.asarray(y, dtype=float)
        return cls(t, y[0:3], y[3:6], y[6:15].reshape(3, 3), y[15:18], y[18:27].reshape(3, 3))


def ideal_rhs(ctrl: Controller, scenario, t: float, y) -> Array:
    """Right-hand side of the ideal closed loop in packed coordinates."""
    fs = FlowState.unpack(t, y)
    out = ctrl.evaluate(scenario.sample(t), fs.x, fs.v, fs.R, fs.w, R_r=fs.R_r)
    p = ctrl.veh
    dv = (fs.R @ out.f_c) / p.m - p.g * E3
    dw = np.linalg.solve(ctrl.J, out.tau_c - np.cross(fs.w, ctrl.J @ fs.w))
    dR_r = hat(out.rates.w_r) @ fs.R_r if ctrl.planner.dynamic else np.zeros((3, 3))
    return np.concatenate((fs.v, dv, (fs.R @ hat(fs.w)).ravel(), dw, dR_r.ravel()))


def rk4_flow(ctrl: Controller, scenario, fs: FlowState, h: float, n: int = 1) -> FlowState:
    """Classical RK4 on the packed state over ``h`` (negative allowed) in ``n`` steps."""
    y = fs.pack()
    t = fs.t
    k = h / n
    for _ in range(n):
        k1 = ideal_rhs(ctrl, scenario, t, y)
        k2 = ideal_rhs(ctrl, scenario, t + 0.5 * k, y + 0.5 * k * k1)
        k3 = ideal_rhs(ctrl, scenario, t + 0.5 * k, y + 0.5 * k * k2)
        k4 = ideal_rhs(ctrl, scenario, t + k, y + k * k3)
        y = y + (k / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += k
    return FlowState.unpack(t, y)


def theta_v(R) -> float:
    """Inclination of the body axis ``R e3`` from the vertical."""
    return math.acos(max(-1.0, min(1.0, float(R[2, 2]))))


def yaw_angle(R) -> float:
    """Heading of ``R``: the yaw of a Z-X-Y Euler decomposition.

    This is the angle the desired frame holds at ``psi_d``: the body ``y`` axis
    projected on the horizontal plane points along ``(-sin psi, cos psi)``.
    """
    return math.atan2(-float(R[0, 1]), float(R[1, 1]))
