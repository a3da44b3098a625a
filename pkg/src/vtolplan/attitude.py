"""Attitude-error-scaled control force, geometric torque and Lyapunov monitor.

Errors follow the left convention ``R_e = R R_p^T`` and ``e_w = w - w_p``;
the right error is ``R_e^r = R_p^T R_e R_p = R_p^T R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .so3 import (
    E3,
    I3,
    Array,
    SO3Error,
    check_nav_gain,
    clamp_cos,
    cross,
    e_R,
    nav_fn,
    nav_matrix_spectrum,
    norm_dist,
)

# scaling weight reproducing c = (ell - (1 - cos theta_e)) / ell exactly
K_TILT = 2.0 * np.outer(E3, E3)


@dataclass(frozen=True)
class AttitudeGains:
    """Attitude loop and planner gains.

    Attributes:
        K_R: navigation gain, ``tr(K_R) I - K_R`` positive definite.
        K_w: symmetric positive-definite rate gain.
        ell: scaling parameter, must exceed 2.
        k_d: planner attitude-error gain.
        eps: projection margin in (0, 1).
        scaling: ``"tilt"`` for the cosine formula, ``"general"`` for
            ``(psi_M - Psi_K(R_e^r)) / psi_M`` with weight ``K_c``.
        K_c: weight of the general scaling.
        psi_M: level of the general scaling; ``None`` uses ``ell``.
    """

    K_R: Array = field(default_factory=lambda: np.diag([0.6, 0.6, 1.4]))
    K_w: Array = field(default_factory=lambda: 0.2 * np.eye(3))
    ell: float = 2.1
    k_d: float = 2.0
    eps: float = 0.05
    scaling: str = "tilt"
    K_c: Array = field(default_factory=lambda: K_TILT.copy())
    psi_M: float | None = None

    @property
    def psi_level(self) -> float:
        return self.ell if self.psi_M is None else float(self.psi_M)

    @property
    def ell_R(self) -> float:
        """Sublevel threshold ``lambda_min(tr(K_R) I - K_R)``."""
        return nav_matrix_spectrum(self.K_R)[0]

    @property
    def scaling_lmax(self) -> float:
        """``lambda_max(tr(K_c) I - K_c)``, so that ``Psi_Kc <= lmax Psi^2``."""
        if self.scaling == "tilt":
            return 2.0
        return nav_matrix_spectrum(self.K_c)[1]

    @property
    def rho(self) -> float:
        """Gain of the certified bound ``||Delta R|| <= rho Psi(R_e^r)``.

        Equals ``sqrt((12 + 8 psi_M^2) / psi_M^2)`` for the tilt scaling.
        """
        lm = self.scaling_lmax
        return math.sqrt(3.0 * lm * lm / self.psi_level**2 + 8.0)

    def validate(self) -> None:
        """Raise ``ValueError`` naming the first violated gain condition."""
        check_nav_gain(self.K_R, "K_R")
        Kw = np.asarray(self.K_w, dtype=float)
        if Kw.shape != (3, 3) or np.max(np.abs(Kw - Kw.T)) > 1e-12:
            raise SO3Error("K_w must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(Kw)[0] <= 0.0:
            raise SO3Error("K_w must be positive definite")
        if self.scaling not in ("tilt", "general"):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if self.scaling == "tilt" and not self.ell > 2.0:
            raise ValueError(f"ell={self.ell} must be > 2")
        if self.scaling == "general":
            Kc = np.asarray(self.K_c, dtype=float)
            if Kc.shape != (3, 3) or np.max(np.abs(Kc - Kc.T)) > 1e-12:
                raise SO3Error("K_c must be a symmetric 3x3 matrix")
            # semidefinite suffices here: only Psi_Kc >= 0 and lambda_max are used
            if nav_matrix_spectrum(Kc)[0] < 0.0:
                raise SO3Error("tr(K_c) I - K_c must be positive semidefinite")
            if not self.psi_level > self.scaling_lmax:
                raise ValueError("psi_M must exceed lambda_max(tr(K_c) I - K_c)")
        if not self.k_d > 0.0:
            raise ValueError("k_d must be positive")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")


def theta_e(R_e, R_p) -> float:
    """Angle between ``R_p e3`` and the body axis ``R e3 = R_e R_p e3``."""
    b_p3 = R_p[:, 2]
    return math.acos(clamp_cos(float(b_p3 @ (R_e @ b_p3))))


def scaling_c(g: AttitudeGains, R_e, R_p) -> float:
    """Force scaling ``c`` in ``[(ell - 2)/ell, 1]`` for the tilt form."""
    if g.scaling == "tilt":
        b_p3 = R_p[:, 2]
        cos_e = clamp_cos(float(b_p3 @ (R_e @ b_p3)))
        return (g.ell - (1.0 - cos_e)) / g.ell
    R_er = R_p.T @ R_e @ R_p
    return (g.psi_level - nav_fn(g.K_c, R_er)) / g.psi_level


def control_force(g: AttitudeGains, R_e, R_p, f_d) -> Array:
    """Body-frame force ``f_c = c R_p^T f_d``.

    Raises:
        ValueError: if ``f_d`` is zero.
    """
    f_d = np.asarray(f_d, dtype=float)
    if not float(f_d @ f_d) > 0.0:
        raise ValueError("f_d must be nonzero")
    return scaling_c(g, R_e, R_p) * (R_p.T @ f_d)


@dataclass(frozen=True)
class DeltaRReport:
    delta: Array
    c: float
    norm_2: float
    norm_F: float
    identity_F: float  # sqrt(3 (c-1)^2 + 8 c Psi^2)
    bound: float  # rho * Psi(R_e^r)

    @property
    def margin(self) -> float:
        """``bound - ||Delta R||_F``; nonnegative when certified."""
        return self.bound - self.norm_F


def delta_R(g: AttitudeGains, R_e, R_p) -> DeltaRReport:
    """Force-mismatch matrix ``Delta R = c R_e - I`` with its certificate."""
    c = scaling_c(g, R_e, R_p)
    D = c * np.asarray(R_e, dtype=float) - I3
    psi = norm_dist(R_e)  # equal to Psi(R_e^r) by trace invariance
    return DeltaRReport(
        delta=D,
        c=c,
        norm_2=float(np.linalg.norm(D, 2)),
        norm_F=float(np.linalg.norm(D)),
        identity_F=math.sqrt(3.0 * (c - 1.0) ** 2 + 8.0 * c * psi * psi),
        bound=g.rho * psi,
    )


def gamma_bound(g: AttitudeGains, V_a: float) -> float:
    """Bounded class-K witness ``rho * min(V_a, 1)``."""
    return g.rho * min(V_a, 1.0)


def control_torque(g: AttitudeGains, R_e, e_w, R_p, w_p, dw_p, w, J) -> Array:
    """``tau_c = -R_p^T e_R - K_w e_w + J dw_p + w_p x (J w)``."""
    return (
        -(R_p.T @ e_R(g.K_R, R_e))
        - g.K_w @ e_w
        + J @ dw_p
        + cross(w_p, J @ w)
    )


@dataclass(frozen=True)
class LyapunovReport:
    V: float
    V_dot_model: float  # -e_w^T K_w e_w
    ell_R: float
    in_S_a: bool


def lyapunov_VR(g: AttitudeGains, R_e, e_w, J) -> LyapunovReport:
    """``V_R = 1/2 e_w^T J e_w + Psi_KR(R_e)`` and basin membership."""
    e_w = np.asarray(e_w, dtype=float)
    V = 0.5 * float(e_w @ (J @ e_w)) + nav_fn(g.K_R, R_e)
    lR = g.ell_R
    return LyapunovReport(
        V=V, V_dot_model=-float(e_w @ (g.K_w @ e_w)), ell_R=lR, in_S_a=V < lR
    )
