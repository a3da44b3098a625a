"""Dynamic attitude planner with a cone-constrained relative rotation.

The planner output is ``R_p = R_c R_r``: ``R_c`` aligns its third axis with
the desired force ``f_d`` at heading ``psi_d``, and the relative rotation
``R_r`` (driven by ``dR_r/dt = hat(w_r) R_r``) tilts the vehicle back toward
``R_d`` while keeping ``b_r3 = R_r e3`` inside the cone ``e3^T b_r3 >=
cos(theta_M)``.

Evaluation is split in two stages because the second derivative of ``f_d``
depends on ``w_p``: :meth:`Planner.rates` returns ``(R_p, w_p)`` and the
caller then supplies ``f_d''`` to :meth:`Planner.accelerations`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .so3 import E3, I3, Array, clamp_cos, cross, expm_so3, reorthonormalize, rot_axis_angle, vee_skew

HEADING_TOL = 1e-9
CONE_SLACK = 1e-9  # allowed rho excess (discretization) before a fault


class HeadingSingularity(ArithmeticError):
    """The desired force is parallel to the heading direction."""


class ConeFault(RuntimeError):
    """The relative attitude left the admissible cone."""


# --------------------------------------------------------------------------
# unit-vector normalization and its derivatives


def _unit_derivs(a, da, dda=None):
    """``u = a/|a|`` with first (and optionally second) time derivative."""
    n = math.sqrt(float(a @ a))
    u = a / n
    dn = float(u @ da)
    du = (da - u * dn) / n
    if dda is None:
        return u, du, None
    ddn = float(du @ da) + float(u @ dda)
    ddu = (dda - 2.0 * du * dn - u * ddn) / n
    return u, du, ddu


def heading(psi: float, dpsi: float = 0.0, ddpsi: float = 0.0):
    c, s = math.cos(psi), math.sin(psi)
    b = np.array([c, s, 0.0])
    db = dpsi * np.array([-s, c, 0.0])
    ddb = ddpsi * np.array([-s, c, 0.0]) - dpsi * dpsi * b
    return b, db, ddb


# --------------------------------------------------------------------------
# R_c and its derivatives


@dataclass(frozen=True)
class CommandFrame:
    R_c: Array
    w_c: Array
    dw_c: Array | None
    b: tuple  # (b1, b2, b3)
    db: tuple


def build_Rc(f_d, psi_d: float) -> Array:
    """Rotation with ``R_c e3 = f_d/|f_d|`` and second axis ``(b3 x b_d)``.

    Raises:
        HeadingSingularity: if ``b3`` is parallel to the heading vector.
        ValueError: if ``f_d`` vanishes.
    """
    return command_frame(f_d, np.zeros(3), psi_d, 0.0).R_c


def command_frame(f_d, df_d, psi, dpsi, ddf_d=None, ddpsi: float = 0.0) -> CommandFrame:
    """``R_c``, ``w_c`` and (when ``ddf_d`` is given) ``dw_c`` analytically."""
    f_d = np.asarray(f_d, dtype=float)
    if not float(f_d @ f_d) > 0.0:
        raise ValueError("f_d must be nonzero")
    second = ddf_d is not None
    b3, db3, ddb3 = _unit_derivs(f_d, np.asarray(df_d, dtype=float),
                                 None if not second else np.asarray(ddf_d, dtype=float))
    bd, dbd, ddbd = heading(psi, dpsi, ddpsi)
    a = cross(b3, bd)
    if math.sqrt(float(a @ a)) < HEADING_TOL:
        raise HeadingSingularity(f"heading singularity: f_d={f_d} parallel to b_d")
    da = cross(db3, bd) + cross(b3, dbd)
    dda = None
    if second:
        dda = cross(ddb3, bd) + 2.0 * cross(db3, dbd) + cross(b3, ddbd)
    b2, db2, ddb2 = _unit_derivs(a, da, dda)
    b1 = cross(b2, b3)
    db1 = cross(db2, b3) + cross(b2, db3)
    R_c = np.column_stack((b1, b2, b3))
    # w_c = vee(R_c^T dR_c)
    w_c = np.array([b3 @ db2, b1 @ db3, b2 @ db1])
    dw_c = None
    if second:
        ddb1 = cross(ddb2, b3) + 2.0 * cross(db2, db3) + cross(b2, ddb3)
        dw_c = np.array([
            db3 @ db2 + b3 @ ddb2,
            db1 @ db3 + b1 @ ddb3,
            db2 @ db1 + b2 @ ddb1,
        ])
    return CommandFrame(R_c, w_c, dw_c, (b1, b2, b3), (db1, db2, db3))


def omega_c(f_d, df_d, psi_d, dpsi_d) -> Array:
    return command_frame(f_d, df_d, psi_d, dpsi_d).w_c


def omega_c_dot(f_d, df_d, ddf_d, psi_d, dpsi_d, ddpsi_d) -> Array:
    return command_frame(f_d, df_d, psi_d, dpsi_d, ddf_d, ddpsi_d).dw_c


# --------------------------------------------------------------------------
# cone projection


def sigma_ramp(rho: float, delta: float, eps: float) -> tuple[float, float]:
    """C1 activation ``s^2 (3 - 2 s)`` on ``(delta/sqrt(1+eps), delta]``.

    Returns:
        ``(sigma, d sigma / d rho)``.
    """
    r0 = delta / math.sqrt(1.0 + eps)
    if rho <= r0:
        return 0.0, 0.0
    if rho >= delta:
        return 1.0, 0.0
    width = delta - r0
    s = (rho - r0) / width
    return s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s) / width


def _outward_normal(p):
    """Unit tangent at ``p`` on the sphere along which ``rho`` grows."""
    rho = math.hypot(p[0], p[1])
    return (p[2] * p - E3) / rho, rho


def proj_G(p, w, delta: float, eps: float, slack: float = CONE_SLACK) -> Array:
    """Remove the outward component of ``w`` near the cone boundary.

    ``p`` is the unit cone axis ``b_r3`` and ``w`` a tangent velocity of it.
    The removed component is along the sphere tangent that increases the
    planar radius ``rho = |(p1, p2)|``; inward and tangential velocities pass
    unchanged, and the result never exceeds ``|w|``.

    Raises:
        ConeFault: if ``rho > delta`` beyond the slack.
    """
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    rho = math.hypot(p[0], p[1])
    if rho > delta + slack or p[2] <= 0.0:
        raise ConeFault(f"cone escape: rho={rho:.12g} > delta={delta:.12g}")
    sig, _ = sigma_ramp(rho, delta, eps)
    if sig == 0.0:
        return w
    nu, _ = _outward_normal(p)
    a = float(nu @ w)
    if a <= 0.0:
        return w
    return w - (sig * a) * nu


def proj_G_dot(p, dp, w, dw, delta: float, eps: float) -> Array:
    """Time derivative of :func:`proj_G` along ``(p, w)``; one-sided at switches."""
    rho = math.hypot(p[0], p[1])
    sig, dsig = sigma_ramp(rho, delta, eps)
    if sig == 0.0 and dsig == 0.0:
        return dw
    nu, _ = _outward_normal(p)
    a = float(nu @ w)
    if a <= 0.0:
        return dw
    drho = (p[0] * dp[0] + p[1] * dp[1]) / rho
    dnu = (dp[2] * p + p[2] * dp) / rho - nu * (drho / rho)
    da = float(dnu @ w) + float(nu @ dw)
    return dw - (dsig * drho * a + sig * da) * nu - (sig * a) * dnu


def projection_engaged(p, w, delta: float, eps: float) -> bool:
    """True when :func:`proj_G` modifies ``w`` at ``p`` (its outward branch)."""
    rho = math.hypot(p[0], p[1])
    if rho == 0.0 or sigma_ramp(rho, delta, eps)[0] == 0.0:
        return False
    return float(_outward_normal(p)[0] @ w) > 0.0


def omega_r_desired(R_r, R_d, w_d, w_c, e_Rp) -> Array:
    """``w_r^d = R_r w_d - w_c - R_r R_d^T e_R^p``."""
    return R_r @ w_d - w_c - R_r @ (R_d.T @ e_Rp)


def planner_error(k_d: float, R_p, R_d) -> tuple[Array, Array]:
    """``(R_e^p, e_R^p)`` with ``R_e^p = R_p R_d^T`` and ``e_R^p = k_d skew(R_e^p)^vee``."""
    R_ep = R_p @ R_d.T
    return R_ep, k_d * vee_skew(R_ep)


def omega_r(R_r, w_rd, delta: float, eps: float, slack: float = CONE_SLACK) -> Array:
    """``w_r = b x Proj_G(w_r^d x b) + (b^T w_r^d) b`` with ``b = R_r e3``."""
    b = R_r[:, 2]
    P = proj_G(b, cross(w_rd, b), delta, eps, slack)
    return cross(b, P) + float(b @ w_rd) * b


# --------------------------------------------------------------------------
# stateful planner


@dataclass(frozen=True)
class PlannerRates:
    """First-stage planner output."""

    frame: CommandFrame
    R_r: Array
    R_p: Array
    w_c: Array
    w_rd: Array
    w_r: Array
    w_p: Array
    R_ep: Array
    e_Rp: Array


@dataclass(frozen=True)
class PlannerOutput:
    R_p: Array
    w_p: Array
    dw_p: Array
    w_c: Array
    dw_c: Array
    w_r: Array
    dw_r: Array
    R_ep: Array
    e_Rp: Array
    theta_c: float
    theta_n: float


class Planner:
    """Attitude planner in ``"static"`` or ``"dynamic"`` mode.

    Args:
        mode: ``"static"`` keeps ``R_r = I``; ``"dynamic"`` integrates ``R_r``.
        theta_M: cone half-angle in rad, in ``(0, pi/2)`` for dynamic mode.
        eps: projection margin in ``(0, 1)``.
        k_d: attitude-error gain.
        dw_r_method: ``"analytic"`` or ``"backward"`` differencing.
    """

    def __init__(self, mode: str = "static", theta_M: float = math.radians(10.0),
                 eps: float = 0.05, k_d: float = 2.0, dw_r_method: str = "analytic"):
        if mode not in ("static", "dynamic"):
            raise ValueError(f"unknown planner mode {mode!r}")
        if mode == "dynamic" and not 0.0 < theta_M < math.pi / 2:
            raise ValueError("theta_M must lie in (0, pi/2)")
        if dw_r_method not in ("analytic", "backward"):
            raise ValueError(f"unknown dw_r method {dw_r_method!r}")
        self.mode = mode
        self.theta_M = theta_M
        self.delta = math.sin(theta_M)
        self.eps = eps
        self.k_d = k_d
        self.dw_r_method = dw_r_method
        self.cone_slack = CONE_SLACK
        self.R_r = I3.copy()
        self.retractions = 0
        self.max_excess = 0.0  # largest theta_c - theta_M seen before retraction, rad
        self._last_w_r: Array | None = None

    @property
    def dynamic(self) -> bool:
        return self.mode == "dynamic"

    def reset(self, R_r=None) -> None:
        self.R_r = I3.copy() if R_r is None else np.array(R_r, dtype=float)
        self.retractions = 0
        self.max_excess = 0.0
        self._last_w_r = None

    # stage 1 -------------------------------------------------------------
    def rates(self, f_d, df_d, sample, R_r=None) -> PlannerRates:
        R_r = self.R_r if R_r is None else R_r
        fr = command_frame(f_d, df_d, sample.psi_d, sample.dpsi_d)
        w_c = fr.w_c
        if not self.dynamic:
            R_ep, e_Rp = planner_error(self.k_d, fr.R_c, sample.R_d)
            z = np.zeros(3)
            return PlannerRates(fr, I3, fr.R_c, w_c, z, z, w_c, R_ep, e_Rp)
        R_p = fr.R_c @ R_r
        R_ep, e_Rp = planner_error(self.k_d, R_p, sample.R_d)
        w_rd = omega_r_desired(R_r, sample.R_d, sample.w_d, w_c, e_Rp)
        w_r = omega_r(R_r, w_rd, self.delta, self.eps, self.cone_slack)
        w_p = R_r.T @ (w_c + w_r)
        return PlannerRates(fr, R_r, R_p, w_c, w_rd, w_r, w_p, R_ep, e_Rp)

    # stage 2 -------------------------------------------------------------
    def accelerations(self, st: PlannerRates, f_d, df_d, ddf_d, sample,
                      dt: float | None = None) -> PlannerOutput:
        fr2 = command_frame(f_d, df_d, sample.psi_d, sample.dpsi_d, ddf_d, sample.ddpsi_d)
        dw_c = fr2.dw_c
        theta_n = math.acos(clamp_cos(float(st.frame.R_c[2, 2])))
        if not self.dynamic:
            return PlannerOutput(st.R_p, st.w_c, dw_c, st.w_c, dw_c, st.w_r, np.zeros(3),
                                 st.R_ep, st.e_Rp, 0.0, theta_n)
        R_r = st.R_r
        if self.dw_r_method == "analytic":
            dw_r = self._dw_r_analytic(st, dw_c, sample)
        else:
            dw_r = np.zeros(3) if self._last_w_r is None or not dt else (st.w_r - self._last_w_r) / dt
        dw_p = -R_r.T @ cross(st.w_r, st.w_c) + R_r.T @ (dw_c + dw_r)
        theta_c = math.acos(clamp_cos(float(R_r[2, 2])))
        return PlannerOutput(st.R_p, st.w_p, dw_p, st.w_c, dw_c, st.w_r, dw_r,
                             st.R_ep, st.e_Rp, theta_c, theta_n)

    def _dw_r_analytic(self, st: PlannerRates, dw_c, sample) -> Array:
        R_r, R_d = st.R_r, sample.R_d
        w_r, w_rd = st.w_r, st.w_rd
        # d/dt e_R^p with dR_e^p = R_p (hat(w_p) - hat(w_d)) R_d^T
        dR_ep = st.R_p @ _hat_diff(st.w_p, sample.w_d) @ R_d.T
        de_Rp = self.k_d * vee_skew(dR_ep)
        RdT_e = R_d.T @ st.e_Rp
        dw_rd = (
            cross(w_r, R_r @ sample.w_d) + R_r @ sample.dw_d
            - dw_c
            - cross(w_r, R_r @ RdT_e)
            - R_r @ (-cross(sample.w_d, RdT_e) + R_d.T @ de_Rp)
        )
        b = R_r[:, 2]
        db = cross(w_r, b)
        w = cross(w_rd, b)
        dw = cross(dw_rd, b) + cross(w_rd, db)
        P = proj_G(b, w, self.delta, self.eps, self.cone_slack)
        dP = proj_G_dot(b, db, w, dw, self.delta, self.eps)
        s = float(b @ w_rd)
        ds = float(db @ w_rd) + float(b @ dw_rd)
        return cross(db, P) + cross(b, dP) + ds * b + s * db

    # integration -----------------------------------------------------------
    def advance(self, w_r, dt: float) -> None:
        """``R_r <- exp(hat(w_r) dt) R_r``, re-orthonormalized and cone-checked."""
        if not self.dynamic:
            return
        self._last_w_r = np.array(w_r, dtype=float)
        self.R_r = self.retract(reorthonormalize(expm_so3(np.asarray(w_r) * dt) @ self.R_r))

    def retract(self, R_r) -> Array:
        """Rotate ``R_r`` minimally so ``b_r3`` lies inside the cone.

        Excursions beyond the slack count as retractions; the projection keeps
        the continuous flow inside, so these are discretization artifacts.
        """
        b = R_r[:, 2]
        rho = math.hypot(b[0], b[1])
        if rho <= self.delta and b[2] > 0.0:
            return R_r
        if b[2] <= 0.0:
            raise ConeFault("relative attitude flipped below the horizon")
        self.retractions += 1
        ang = math.atan2(rho, b[2]) - self.theta_M
        self.max_excess = max(self.max_excess, ang)
        axis = cross(b, E3)
        axis /= math.sqrt(float(axis @ axis))
        return rot_axis_angle(axis, ang) @ R_r


def _hat_diff(a, b) -> Array:
    d = a - b
    return np.array([[0.0, -d[2], d[1]], [d[2], 0.0, -d[0]], [-d[1], d[0], 0.0]])
