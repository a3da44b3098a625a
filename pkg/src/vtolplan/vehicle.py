"""Hexacopter plant: mixer, allocation, rotor lag, drag and integration.

The body is a single rigid body with ``dx = v``, ``m dv = -m g e3 + R f + f_drag``,
``dR = R hat(w)`` and ``J dw = -w x J w + tau + tau_drag``. The wrench it feels
is always the one produced by the lagged, clamped rotors through the mixer.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .so3 import E1, E3, I3, Array, cross, dexpinv, expm_so3, finite, hat, project_to_so3, reorthonormalize, rot_x, rot_z

N_ROTORS = 6
RANK_TOL = 1e-8


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters.

    ``k_f``, ``k_tau``, ``arm`` and ``w_rot_max`` are engineering values, not
    identified ones. ``tilt_pattern="alternating"`` tilts rotor ``i`` by
    ``(-1)^(i+1) alpha``; ``"uniform"`` applies ``+alpha`` to every rotor.
    """

    m: float = 1.0
    J: Array = field(default_factory=lambda: np.diag([0.008, 0.008, 0.016]))
    alpha: float = 0.0
    k_f: float = 6.5e-6
    k_tau: float = 6.5e-6 * 0.016
    arm: float = 0.25
    w_rot_max: float = 1200.0
    tau_p: float = 0.05
    D_a: Array = field(default_factory=lambda: np.diag([0.04, 0.04, 0.02]))
    c_d: float = 0.01
    c_I: float = 0.05
    sigma_cone: float = 0.5
    g: float = 9.81
    drag: bool = True
    rotor_lag: bool = True
    tilt_pattern: str = "alternating"

    def validate(self) -> None:
        if not self.m > 0.0:
            raise ValueError("m must be positive")
        J = np.asarray(self.J)
        if J.shape != (3, 3) or np.any(J != np.diag(np.diag(J))) or np.any(np.diag(J) <= 0):
            raise ValueError("J must be diagonal positive definite")
        if not -math.pi / 2 <= self.alpha <= math.pi / 2:
            raise ValueError("alpha must lie in [-pi/2, pi/2]")
        if not self.tau_p > 0.0:
            raise ValueError("tau_p must be positive")
        if not 0.0 < self.sigma_cone <= 1.0:
            raise ValueError("sigma_cone must lie in (0, 1]")
        for name in ("k_f", "k_tau", "arm", "w_rot_max"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.tilt_pattern not in ("alternating", "uniform"):
            raise ValueError(f"unknown tilt pattern {self.tilt_pattern!r}")

    @property
    def theta_M(self) -> float:
        return self.sigma_cone * abs(self.alpha)

    @property
    def T_M(self) -> float:
        """Deliverable-force bound ``0.9 * 6 k_f w_max^2 cos(alpha)``."""
        return 0.9 * N_ROTORS * self.k_f * self.w_rot_max**2 * math.cos(self.alpha)

    @property
    def J_inv(self) -> Array:
        return np.diag(1.0 / np.diag(self.J))

    def with_(self, **kw) -> "VehicleParams":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# geometry and mixer


def tilt_angles(p: VehicleParams) -> Array:
    sgn = np.array([1.0, -1.0] * 3) if p.tilt_pattern == "alternating" else np.ones(6)
    return sgn * p.alpha


def rotor_frames(p: VehicleParams) -> list[Array]:
    """``R_pi = R_z((i-1) pi/3) R_x(alpha_i)``."""
    return [rot_z(i * math.pi / 3.0) @ rot_x(a) for i, a in enumerate(tilt_angles(p))]


def hub_positions(p: VehicleParams) -> Array:
    return np.array([rot_z(i * math.pi / 3.0) @ (p.arm * E1) for i in range(N_ROTORS)])


def mixer_matrix(p: VehicleParams) -> Array:
    """Map ``M`` with ``[f; tau] = M @ [w_1^2, ..., w_6^2]``."""
    M = np.zeros((6, N_ROTORS))
    hubs = hub_positions(p)
    for i, Rp in enumerate(rotor_frames(p)):
        axis = Rp @ E3
        # rotor i is 1-based in the spin-direction sign (-1)^i
        spin = -((-1.0) ** (i + 1))
        M[:3, i] = p.k_f * axis
        M[3:, i] = p.k_f * cross(hubs[i], axis) + spin * p.k_tau * axis
    return M


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class Allocation:
    u_bar: Array  # squared rotor speeds after clamping
    u_raw: Array  # exact (unclamped) solution
    residual: float  # |M u_raw - w| on the solvable subspace
    clamped: bool
    saturated: bool
    negative: tuple[int, ...]


class Allocator:
    """Inverts the mixer: exact for rank 6, minimum-norm for the coplanar case."""

    def __init__(self, p: VehicleParams):
        self.p = p
        self.M = mixer_matrix(p)
        self.rank = numerical_rank(self.M)
        self.M_pinv = np.linalg.pinv(self.M, rcond=RANK_TOL)
        self.u_max = p.w_rot_max**2

    def __call__(self, f_c, tau_c) -> Allocation:
        w = np.concatenate((np.asarray(f_c, dtype=float), np.asarray(tau_c, dtype=float)))
        # rank < 6: minimum-norm solve; lateral forces show up in the residual
        u = self.M_pinv @ w
        res = float(np.linalg.norm(self.M @ u - w))
        neg = tuple(int(i) for i in np.flatnonzero(u < 0.0))
        u_c = np.clip(u, 0.0, self.u_max)
        return Allocation(
            u_bar=u_c, u_raw=u, residual=res, clamped=bool(neg),
            saturated=bool(np.any(u > self.u_max)), negative=neg,
        )


def allocate(p: VehicleParams, f_c, tau_c) -> Allocation:
    return Allocator(p)(f_c, tau_c)


# --------------------------------------------------------------------------
# rotor lag and drag


def rotor_lag_step(w_rot, w_cmd, dt: float, tau_p: float, w_max: float) -> Array:
    """Exact first-order response over ``dt`` toward ``w_cmd``, clamped."""
    k = math.exp(-dt / tau_p)
    return np.clip(w_cmd + (np.asarray(w_rot) - w_cmd) * k, 0.0, w_max)


def drag_wrench(p: VehicleParams, v, R, w, w_rot, frames=None, hubs=None) -> tuple[Array, Array]:
    """Body and induced drag (inertial force) and rotational damping (body torque)."""
    if not p.drag:
        return np.zeros(3), np.zeros(3)
    frames = rotor_frames(p) if frames is None else frames
    hubs = hub_positions(p) if hubs is None else hubs
    axes = np.array([Rp[:, 2] for Rp in frames]) if isinstance(frames, list) else frames
    U = axes @ R.T  # rows: rotor axes u_i in the inertial frame
    V_hub = v + hubs @ (R @ hat(w)).T  # rows: v + R (w x r_i)
    perp = V_hub - (V_hub * U).sum(axis=1)[:, None] * U
    sqrt_T = math.sqrt(p.k_f) * np.abs(np.asarray(w_rot, dtype=float))
    f = -p.c_d * math.sqrt(float(v @ v)) * v - p.c_I * (sqrt_T @ perp)
    return f, -(p.D_a @ w)


# --------------------------------------------------------------------------
# state and integration


@dataclass
class RigidBodyState:
    x: Array
    v: Array
    R: Array
    w: Array
    w_rot: Array

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(self.x.copy(), self.v.copy(), self.R.copy(), self.w.copy(),
                              self.w_rot.copy())

    def is_finite(self) -> bool:
        return finite(self.x, self.v, self.R, self.w, self.w_rot)


class IntegrationError(FloatingPointError):
    """Non-finite state after an integration step."""


def hover_state(p: VehicleParams, x0=(1.0, 0.0, 0.0)) -> RigidBodyState:
    """Trim: level attitude and rotors at the hover allocation."""
    alloc = Allocator(p)(np.array([0.0, 0.0, p.m * p.g]), np.zeros(3))
    return RigidBodyState(np.array(x0, dtype=float), np.zeros(3), I3.copy(), np.zeros(3),
                          np.sqrt(alloc.u_bar))


class _Dynamics:
    """Rigid-body accelerations with the inertia constants cached."""

    def __init__(self, p: VehicleParams):
        self.inv_m = 1.0 / p.m
        self.gE3 = p.g * E3
        self.J = np.array(p.J, dtype=float)
        self.J_inv = p.J_inv

    def __call__(self, v, R, w, f_body, tau_body, f_ext, tau_ext):
        acc = (R @ f_body + f_ext) * self.inv_m - self.gE3
        dw = self.J_inv @ (tau_body + tau_ext - cross(w, self.J @ w))
        return acc, dw


class Plant:
    """Plant with rotor-level actuation.

    Args:
        p: vehicle parameters.
        scheme: ``"rkmk4"`` (Lie-group RK4 on the attitude) or ``"rk4_matrix"``
            (classical RK4 on the nine entries of ``R``), both followed by a
            polar re-orthonormalization.
    """

    def __init__(self, p: VehicleParams, scheme: str = "rkmk4"):
        p.validate()
        if scheme not in ("rkmk4", "rk4_matrix"):
            raise ValueError(f"unknown integration scheme {scheme!r}")
        self.p = p
        self.scheme = scheme
        self.alloc = Allocator(p)
        self.frames = rotor_frames(p)
        self.axes = np.array([Rp[:, 2] for Rp in self.frames])
        self.hubs = hub_positions(p)
        self.M = self.alloc.M
        self._dyn = _Dynamics(p)

    def rotor_wrench(self, w_rot) -> tuple[Array, Array]:
        wr = self.M @ (np.asarray(w_rot) ** 2)
        return wr[:3], wr[3:]

    def step(self, s: RigidBodyState, w_cmd_rot, dt: float) -> RigidBodyState:
        """Advance one step with commanded rotor speeds held for ``dt``.

        Raises:
            IntegrationError: if the resulting state is not finite.
        """
        p = self.p
        w_cmd_rot = np.clip(np.asarray(w_cmd_rot, dtype=float), 0.0, p.w_rot_max)
        w0 = s.w_rot
        if p.rotor_lag:
            kh = math.exp(-0.5 * dt / p.tau_p)

            def rotors(frac):
                k = 1.0 if frac == 0.0 else (kh if frac == 0.5 else kh * kh)
                return w_cmd_rot + (w0 - w_cmd_rot) * k
        else:

            def rotors(frac):
                return w_cmd_rot

        def f(frac, v, R, w):
            wr = rotors(frac)
            fb, tb = self.rotor_wrench(wr)
            fe, te = drag_wrench(p, v, R, w, wr, self.axes, self.hubs)
            return self._dyn(v, R, w, fb, tb, fe, te)

        new = self._integrate(s, f, dt)
        new.w_rot = np.clip(rotors(1.0), 0.0, p.w_rot_max)
        if not finite(new.w_rot):
            raise IntegrationError(f"non-finite state after step: x={new.x} w={new.w}")
        return new

    def acceleration(self, s: RigidBodyState) -> Array:
        """Inertial acceleration ``dv/dt`` at ``s`` (an ideal accelerometer)."""
        fb, tb = self.rotor_wrench(s.w_rot)
        fe, te = drag_wrench(self.p, s.v, s.R, s.w, s.w_rot, self.axes, self.hubs)
        return self._dyn(s.v, s.R, s.w, fb, tb, fe, te)[0]

    def step_wrench(self, s: RigidBodyState, f_body, tau_body, dt: float,
                    f_ext=None, tau_ext=None) -> RigidBodyState:
        """Ideal step: body wrench applied directly, no rotors and no drag."""
        f_body = np.asarray(f_body, dtype=float)
        tau_body = np.asarray(tau_body, dtype=float)
        fe = np.zeros(3) if f_ext is None else np.asarray(f_ext, dtype=float)
        te = np.zeros(3) if tau_ext is None else np.asarray(tau_ext, dtype=float)

        def f(frac, v, R, w):
            return self._dyn(v, R, w, f_body, tau_body, fe, te)

        new = self._integrate(s, f, dt)
        if not new.is_finite():
            raise IntegrationError(f"non-finite state after step: x={new.x} w={new.w}")
        return new

    def step_feedback(self, s: RigidBodyState, wrench, t: float, dt: float) -> RigidBodyState:
        """Ideal step with the body wrench re-evaluated at every stage.

        ``wrench(t, v, R, w)`` returns ``(f_body, tau_body)``; there are no
        rotors and no drag.
        """
        zero = np.zeros(3)

        def f(frac, v, R, w):
            fb, tb = wrench(t + frac * dt, v, R, w)
            return self._dyn(v, R, w, fb, tb, zero, zero)

        return self._integrate(s, f, dt)

    def _integrate(self, s: RigidBodyState, f, dt: float) -> RigidBodyState:
        if not s.is_finite():
            raise IntegrationError(f"non-finite state before step: x={s.x} w={s.w}")
        x0, v0, R0, w0 = s.x, s.v, s.R, s.w
        if self.scheme == "rkmk4":
            # stage: (dx, dv, du, dw) with R = R0 exp(hat(u))
            a1, b1 = f(0.0, v0, R0, w0)
            k1 = (v0, a1, w0, b1)
            u = 0.5 * dt * k1[2]
            v, w = v0 + 0.5 * dt * a1, w0 + 0.5 * dt * b1
            a2, b2 = f(0.5, v, R0 @ expm_so3(u), w)
            k2 = (v, a2, dexpinv(u, w), b2)
            u = 0.5 * dt * k2[2]
            v3, w3 = v0 + 0.5 * dt * a2, w0 + 0.5 * dt * b2
            a3, b3 = f(0.5, v3, R0 @ expm_so3(u), w3)
            k3 = (v3, a3, dexpinv(u, w3), b3)
            u = dt * k3[2]
            v4, w4 = v0 + dt * a3, w0 + dt * b3
            a4, b4 = f(1.0, v4, R0 @ expm_so3(u), w4)
            k4 = (v4, a4, dexpinv(u, w4), b4)
            c = dt / 6.0
            x1 = x0 + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v1 = v0 + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            u1 = c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            w1 = w0 + c * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
            R1 = R0 @ expm_so3(u1)
        else:
            a1, b1 = f(0.0, v0, R0, w0)
            dR1 = R0 @ hat(w0)
            v, R, w = v0 + 0.5 * dt * a1, R0 + 0.5 * dt * dR1, w0 + 0.5 * dt * b1
            a2, b2 = f(0.5, v, R, w)
            dR2 = R @ hat(w)
            v_, R_, w_ = v0 + 0.5 * dt * a2, R0 + 0.5 * dt * dR2, w0 + 0.5 * dt * b2
            a3, b3 = f(0.5, v_, R_, w_)
            dR3 = R_ @ hat(w_)
            v4, R4, w4 = v0 + dt * a3, R0 + dt * dR3, w0 + dt * b3
            a4, b4 = f(1.0, v4, R4, w4)
            dR4 = R4 @ hat(w4)
            c = dt / 6.0
            x1 = x0 + c * (v0 + 2 * v + 2 * v_ + v4)
            v1 = v0 + c * (a1 + 2 * a2 + 2 * a3 + a4)
            w1 = w0 + c * (b1 + 2 * b2 + 2 * b3 + b4)
            R1 = R0 + c * (dR1 + 2 * dR2 + 2 * dR3 + dR4)
        if not finite(x1, v1, R1, w1):
            raise IntegrationError(f"non-finite state after step: x={x1} w={w1}")
        R1 = reorthonormalize(R1) if self.scheme == "rkmk4" else project_to_so3(R1)
        return RigidBodyState(x1, v1, R1, w1, s.w_rot.copy())


def integrate_step(p: VehicleParams, s: RigidBodyState, f_c, tau_c, dt: float,
                   scheme: str = "rkmk4") -> tuple[RigidBodyState, Allocation]:
    """Allocate a commanded body wrench, then advance the rotor-driven plant."""
    plant = Plant(p, scheme)
    a = plant.alloc(f_c, tau_c)
    return plant.step(s, np.sqrt(a.u_bar), dt), a


# --------------------------------------------------------------------------
# checks and open-loop driver


def cone_containment(p: VehicleParams, theta: float, n_dirs: int = 1000,
                     thrust: float | None = None, yaw_torque: float = 0.0) -> dict:
    """Sample forces on the boundary of the cone of half-angle ``theta``.

    Each force (magnitude ``thrust``, default ``m g``) is allocated with zero
    roll/pitch torque and fixed yaw torque; the result counts directions that
    need a negative squared speed.
    """
    F = p.m * p.g if thrust is None else thrust
    al = Allocator(p)
    worst = math.inf
    bad = 0
    for phi in np.linspace(0.0, 2 * math.pi, n_dirs, endpoint=False):
        d = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                      math.cos(theta)])
        a = al(F * d, np.array([0.0, 0.0, yaw_torque]))
        worst = min(worst, float(a.u_raw.min()))
        bad += a.clamped
    return {"directions": n_dirs, "infeasible": bad, "min_u_bar": worst}


def read_wrench_csv(path) -> Array:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ("t", "fx", "fy", "fz", "tx", "ty", "tz")
    missing = [c for c in cols if rows and c not in rows[0]]
    if not rows or missing:
        raise ValueError(f"wrench CSV needs columns {cols}; missing {missing}")
    return np.array([[float(r[c]) for c in cols] for r in rows])


def drive_open_loop(p: VehicleParams, path, dt: float = 1e-3, state: RigidBodyState | None = None,
                    scheme: str = "rkmk4") -> list[tuple[float, RigidBodyState, Allocation]]:
    """Play a body-wrench table (zero-order hold) through allocation and plant."""
    tab = read_wrench_csv(path)
    plant = Plant(p, scheme)
    s = hover_state(p) if state is None else state
    out = []
    t = float(tab[0, 0])
    j = 0
    while t < tab[-1, 0] - 1e-12:
        while j + 1 < len(tab) and tab[j + 1, 0] <= t + 1e-12:
            j += 1
        a = plant.alloc(tab[j, 1:4], tab[j, 4:7])
        s = plant.step(s, np.sqrt(a.u_bar), dt)
        t += dt
        out.append((t, s, a))
    return out
