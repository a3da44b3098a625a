"""Desired trajectories, steady-state wrench and trackability tests.

Every scenario supplies closed-form derivatives up to the fourth order of the
position and up to the second order of the attitude, so no numerical
differentiation happens downstream of this module.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import UnivariateSpline

from .so3 import E3, I3, Array, clamp_cos, cross, rot_x, rot_y, rot_z

G_DEFAULT = 9.81


class ReferenceError(ValueError):
    """Raised for invalid or degenerate reference trajectories."""


# C4 "smootherstep": s(0)=0, s(1)=1, derivatives 1..4 vanish at both ends.
_RAMP = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_RAMP_D = [_RAMP.deriv(k) for k in range(5)]
_RAMP_INT = _RAMP.integ()


def smooth_ramp(tau: float) -> tuple[float, float, float, float, float]:
    """C4 ramp and its first four derivatives with respect to ``tau``."""
    if tau <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    if tau >= 1.0:
        return 1.0, 0.0, 0.0, 0.0, 0.0
    return tuple(float(p(tau)) for p in _RAMP_D)  # type: ignore[return-value]


@dataclass(frozen=True)
class ReferenceSample:
    """Desired trajectory evaluated at one instant (SI units, inertial frame)."""

    t: float
    x_d: Array
    v_d: Array
    a_d: Array
    j_d: Array
    s_d: Array
    R_d: Array
    w_d: Array
    dw_d: Array
    psi_d: float
    dpsi_d: float
    ddpsi_d: float


@dataclass(frozen=True)
class SteadyStateWrench:
    f_ss: Array  # N, body frame of R_d
    tau_ss: Array  # N m


# ---------------------------------------------------------------- attitude


@dataclass(frozen=True)
class LevelAttitude:
    """``R_d = I`` for all time (level reference, used by both circular scenarios)."""

    def evaluate(self, t: float):
        z = np.zeros(3)
        return I3.copy(), z, z.copy(), 0.0, 0.0, 0.0


@dataclass(frozen=True)
class EulerAttitude:
    """Z-Y-X Euler attitude with sinusoidal angles.

    Each angle is ``offset + amp * sin(freq * t + phase)``; ``R_d = Rz(yaw)
    Ry(pitch) Rx(roll)``, and the desired heading is the yaw angle.
    """

    roll: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    pitch: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    yaw: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    @staticmethod
    def _angle(p, t):
        off, amp, fr, ph = p
        arg = fr * t + ph
        return (off + amp * math.sin(arg), amp * fr * math.cos(arg),
                -amp * fr * fr * math.sin(arg))

    def evaluate(self, t: float):
        ph, dph, ddph = self._angle(self.roll, t)
        th, dth, ddth = self._angle(self.pitch, t)
        ps, dps, ddps = self._angle(self.yaw, t)
        R = rot_z(ps) @ rot_y(th) @ rot_x(ph)
        sf, cf = math.sin(ph), math.cos(ph)
        st, ct = math.sin(th), math.cos(th)
        w = np.array([
            dph - dps * st,
            dth * cf + dps * ct * sf,
            -dth * sf + dps * ct * cf,
        ])
        dw = np.array([
            ddph - ddps * st - dps * dth * ct,
            ddth * cf - dth * dph * sf + ddps * ct * sf
            - dps * dth * st * sf + dps * dph * ct * cf,
            -ddth * sf - dth * dph * cf + ddps * ct * cf
            - dps * dth * st * cf - dps * dph * ct * sf,
        ])
        return R, w, dw, ps, dps, ddps


@dataclass(frozen=True)
class YawAttitude:
    """Heading-only attitude; used by tabulated trajectories."""

    psi: float = 0.0
    dpsi: float = 0.0
    ddpsi: float = 0.0

    def evaluate(self, t: float):
        return (rot_z(self.psi), np.array([0.0, 0.0, self.dpsi]),
                np.array([0.0, 0.0, self.ddpsi]), self.psi, self.dpsi, self.ddpsi)


# ---------------------------------------------------------------- scenarios


class Scenario:
    """Base class: subclasses provide ``horizon``, ``g`` and ``position(t)``."""

    horizon: float
    g: float
    attitude: object

    def position(self, t: float) -> tuple[Array, Array, Array, Array, Array]:
        raise NotImplementedError

    def attitude_at(self, t: float):
        return self.attitude.evaluate(t)

    def sample(self, t: float) -> ReferenceSample:
        x, v, a, j, s = self.position(t)
        R, w, dw, psi, dpsi, ddpsi = self.attitude_at(t)
        return ReferenceSample(t, x, v, a, j, s, R, w, dw, psi, dpsi, ddpsi)


@dataclass
class HoverScenario(Scenario):
    point: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    horizon: float = 10.0
    g: float = G_DEFAULT
    attitude: object = field(default_factory=LevelAttitude)

    def position(self, t):
        z = np.zeros(3)
        return np.asarray(self.point, dtype=float).copy(), z, z.copy(), z.copy(), z.copy()


@dataclass
class CircularScenario(Scenario):
    """Horizontal circle whose angular rate ramps between two levels.

    ``phase="product"`` uses ``phi(t) = Omega(t) * t`` (the argument as written
    in the source trajectory), ``phase="integral"`` uses ``phi = int Omega``.
    With ``literal_cos`` the second coordinate is ``cos(phi)`` instead of
    ``sin(phi)``, reproducing the segment-shaped literal formula.
    """

    radius: float = 1.0
    omega1: float = 0.85
    omega2: float = 1.15
    t1: float = 12.0
    t2: float = 29.0
    horizon: float = 40.0
    g: float = G_DEFAULT
    phase: str = "product"
    literal_cos: bool = False
    center: Array = field(default_factory=lambda: np.zeros(3))
    attitude: object = field(default_factory=LevelAttitude)

    def __post_init__(self):
        if self.phase not in ("product", "integral"):
            raise ReferenceError(f"unknown phase convention {self.phase!r}")
        if not self.t2 > self.t1 >= 0.0:
            raise ReferenceError("ramp window must satisfy 0 <= t1 < t2")

    def omega(self, t: float) -> list[float]:
        """``Omega_d`` and its first four time derivatives."""
        L = self.t2 - self.t1
        d = self.omega2 - self.omega1
        s = smooth_ramp((t - self.t1) / L)
        return [self.omega1 + d * s[0]] + [d * s[k] / L**k for k in range(1, 5)]

    def phi(self, t: float) -> list[float]:
        """Phase angle and its first four time derivatives."""
        om = self.omega(t)
        if self.phase == "product":
            return [om[0] * t] + [om[k] * t + k * om[k - 1] for k in range(1, 5)]
        L = self.t2 - self.t1
        d = self.omega2 - self.omega1
        tau = min(max((t - self.t1) / L, 0.0), 1.0)
        ramp_area = float(_RAMP_INT(tau)) * L
        if t > self.t2:
            ramp_area += t - self.t2
        return [self.omega1 * t + d * ramp_area] + om[:4]

    def position(self, t):
        p = self.phi(t)
        # derivatives of exp(i phi) via Faa di Bruno
        p1, p2, p3, p4 = p[1], p[2], p[3], p[4]
        z = complex(math.cos(p[0]), math.sin(p[0]))
        d = [
            1.0,
            1j * p1,
            1j * p2 - p1**2,
            1j * p3 - 3 * p1 * p2 - 1j * p1**3,
            1j * p4 - 4 * p1 * p3 - 3 * p2**2 - 6j * p1**2 * p2 + p1**4,
        ]
        out = []
        for k, dk in enumerate(d):
            zk = dk * z
            y = zk.real if self.literal_cos else zk.imag
            vec = self.radius * np.array([zk.real, y, 0.0])
            if k == 0:
                vec = vec + np.asarray(self.center, dtype=float)
            out.append(vec)
        return tuple(out)


@dataclass
class TabulatedScenario(Scenario):
    """Trajectory from samples ``(t, x, y, z, psi)`` fitted with quintic splines.

    Quintic smoothing splines are C4, so the fourth position derivative is
    continuous (piecewise linear). ``smoothing`` is passed to
    :class:`scipy.interpolate.UnivariateSpline` as ``s`` for every channel
    (0 = interpolate).
    """

    t: Array = field(default_factory=lambda: np.zeros(0))
    xyz: Array = field(default_factory=lambda: np.zeros((0, 3)))
    psi: Array = field(default_factory=lambda: np.zeros(0))
    smoothing: float = 0.0
    g: float = G_DEFAULT

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size < 6 or np.any(np.diff(t) <= 0):
            raise ReferenceError("need at least 6 strictly increasing samples")
        self._splines = [UnivariateSpline(t, self.xyz[:, k], k=5, s=self.smoothing)
                         for k in range(3)]
        self._psi = UnivariateSpline(t, self.psi, k=5, s=self.smoothing)
        self.horizon = float(t[-1] - t[0])
        self._t0 = float(t[0])

    @classmethod
    def from_csv(cls, path: str | Path, smoothing: float = 0.0, g: float = G_DEFAULT):
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row[:5]])
                except ValueError:
                    continue  # header
        data = np.array(rows)
        return cls(t=data[:, 0], xyz=data[:, 1:4], psi=data[:, 4], smoothing=smoothing, g=g)

    def position(self, t):
        tt = t + self._t0
        return tuple(np.array([float(s(tt, nu=k)) for s in self._splines]) for k in range(5))

    def attitude_at(self, t):
        tt = t + self._t0
        return YawAttitude(float(self._psi(tt)), float(self._psi(tt, nu=1)),
                           float(self._psi(tt, nu=2))).evaluate(t)


# ---------------------------------------------------------------- operations


def eval_reference(scenario: Scenario, t: float) -> ReferenceSample:
    """Sample ``scenario`` at time ``t``; ``t`` must lie in ``[0, horizon]``."""
    if not (0.0 <= t <= scenario.horizon + 1e-12):
        raise ReferenceError(f"t={t} outside the horizon [0, {scenario.horizon}]")
    return scenario.sample(t)


def steady_state_wrench(sample: ReferenceSample, m: float, J, g: float = G_DEFAULT
                        ) -> SteadyStateWrench:
    J = np.asarray(J, dtype=float)
    f = m * (sample.R_d.T @ (sample.a_d + g * E3))
    if not np.linalg.norm(f) > 0.0:
        raise ReferenceError("degenerate (free-fall) reference: zero nominal force")
    tau = J @ sample.dw_d + cross(sample.w_d, J @ sample.w_d)
    return SteadyStateWrench(f, tau)


def nominal_angle(sample: ReferenceSample, m: float = 1.0, g: float = G_DEFAULT) -> float:
    """Angle between the steady-state force and the body vertical axis."""
    f = steady_state_wrench(sample, m, I3, g).f_ss
    return math.acos(clamp_cos(f[2] / np.linalg.norm(f)))


def trackability_vectored(sample: ReferenceSample, m: float = 1.0, g: float = G_DEFAULT,
                          tol: float = 1e-9) -> tuple[bool, float]:
    """Exact-alignment test for coplanar rotors; returns ``(ok, theta_n)``."""
    f = steady_state_wrench(sample, m, I3, g).f_ss
    c = f[2] / np.linalg.norm(f)
    return bool(abs(c - 1.0) <= tol), math.acos(clamp_cos(c))


def cone_inner_angle(theta_M: float, eps: float) -> float:
    """Half-angle of the cone where the planner projection is inactive."""
    return math.asin(math.sin(theta_M) / math.sqrt(1.0 + eps))


def trackability_thrustvectoring(sample: ReferenceSample, theta_M: float, eps: float,
                                 m: float = 1.0, g: float = G_DEFAULT) -> bool:
    if not 0.0 < theta_M < math.pi / 2:
        raise ReferenceError("theta_M must lie in (0, pi/2)")
    if not 0.0 < eps < 1.0:
        raise ReferenceError("eps must lie in (0, 1)")
    f = steady_state_wrench(sample, m, I3, g).f_ss
    return bool(f[2] / np.linalg.norm(f) >= math.cos(cone_inner_angle(theta_M, eps)))


@dataclass(frozen=True)
class ScenarioBounds:
    f_ss_min: float
    f_ss_max: float
    vertical_margin: float  # inf_t m |g + a_d3|
    theta_n_max: float
    t_theta_n_max: float


def scenario_bounds(scenario: Scenario, m: float, dt: float = 0.01) -> ScenarioBounds:
    """Sampled bounds of the nominal force used by the configuration validator."""
    ts = np.arange(0.0, scenario.horizon + 0.5 * dt, dt)
    fmin, fmax, vmin, thmax, tmax = math.inf, 0.0, math.inf, -1.0, 0.0
    for t in ts:
        s = scenario.sample(float(t))
        f = m * (s.R_d.T @ (s.a_d + scenario.g * E3))
        nf = float(np.linalg.norm(f))
        fmin, fmax = min(fmin, nf), max(fmax, nf)
        vmin = min(vmin, m * abs(scenario.g + s.a_d[2]))
        th = math.acos(clamp_cos(f[2] / nf)) if nf > 0 else math.pi
        if th > thmax:
            thmax, tmax = th, float(t)
    return ScenarioBounds(fmin, fmax, vmin, thmax, tmax)
