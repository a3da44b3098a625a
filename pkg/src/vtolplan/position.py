"""Nested-saturation position stabilizer and desired inertial force.

The stabilizer is applied componentwise::

    beta(e_x, e_v) = -lam2 * sat(k2/lam2 * (e_v + lam1 * sat(k1/lam1 * e_x)))

``sat`` is a C2 odd saturation: identity on ``|s| <= 1 - knee``, a quartic
blend on ``1 - knee < |s| < 1 + knee`` and constant ``+-1`` beyond. The
leading minus sign makes ``beta`` oppose the errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .so3 import E3, Array

SAT_KNEE = 0.1


class GainError(ValueError):
    """Raised when controller gains violate a validated inequality."""


def sat(s, knee: float = SAT_KNEE):
    """C2 saturation and its first two derivatives, elementwise.

    Returns:
        ``(value, d/ds, d2/ds2)`` arrays of the same shape as ``s``.
    """
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    lo = 1.0 - knee
    tau = np.clip((a - lo) / (2.0 * knee), 0.0, 1.0)
    blend = lo + 2.0 * knee * tau + knee * tau**3 * (tau - 2.0)
    val = np.where(a <= lo, a, blend)
    d1 = (1.0 - tau) ** 2 * (1.0 + 2.0 * tau)
    d2 = -3.0 * tau * (1.0 - tau) / knee
    sgn = np.sign(s)
    return sgn * val, d1, sgn * d2


@dataclass(frozen=True)
class PositionGains:
    k1: float = 0.06
    k2: float = 9.0
    lam1: float = 1.0
    lam2: float = 9.0
    knee: float = SAT_KNEE

    def validate(self, vertical_margin: float | None = None) -> None:
        """Check positivity and, if given, ``lam2 < inf_t m|g + a_d3|``.

        Raises:
            GainError: naming the violated inequality.
        """
        for name in ("k1", "k2", "lam1", "lam2"):
            if not getattr(self, name) > 0.0:
                raise GainError(f"{name} must be positive")
        if not 0.0 < self.knee < 1.0:
            raise GainError("saturation knee must lie in (0, 1)")
        if vertical_margin is not None and not self.lam2 < vertical_margin:
            raise GainError(
                f"lam2={self.lam2} must be < inf_t m|g + a_d3| = {vertical_margin:.6g}"
            )

    def smallness_report(self) -> dict[str, float]:
        """Conservative nested-saturation ratios (informational).

        The inner loop should be slower and weaker than the outer one:
        ``k1 << k2`` and ``k1 * lam1 << lam2``.
        """
        return {"k1/k2": self.k1 / self.k2, "k1*lam1/lam2": self.k1 * self.lam1 / self.lam2,
                "lam1*k2/lam2": self.lam1 * self.k2 / self.lam2}

    @property
    def beta_bound(self) -> float:
        """Euclidean bound ``sqrt(3) * lam2`` on the stabilizer output."""
        return math.sqrt(3.0) * self.lam2


@dataclass(frozen=True)
class BetaEval:
    """Stabilizer value with the intermediate terms reused by derivatives."""

    beta: Array
    dbeta_dex: Array  # diagonal entries of d beta / d e_x
    dbeta_dev: Array  # diagonal entries of d beta / d e_v
    w: Array  # inner argument k1/lam1 e_x
    u: Array  # outer argument
    s1w: Array
    s2w: Array
    s1u: Array
    s2u: Array


def beta_eval(g: PositionGains, e_x, e_v) -> BetaEval:
    w = (g.k1 / g.lam1) * np.asarray(e_x, dtype=float)
    s0w, s1w, s2w = sat(w, g.knee)
    u = (g.k2 / g.lam2) * (np.asarray(e_v, dtype=float) + g.lam1 * s0w)
    s0u, s1u, s2u = sat(u, g.knee)
    return BetaEval(
        beta=-g.lam2 * s0u,
        dbeta_dex=-g.k1 * g.k2 * s1u * s1w,
        dbeta_dev=-g.k2 * s1u,
        w=w, u=u, s1w=s1w, s2w=s2w, s1u=s1u, s2u=s2u,
    )


def beta(g: PositionGains, e_x, e_v) -> Array:
    return beta_eval(g, e_x, e_v).beta


def grad_beta(g: PositionGains, e_x, e_v) -> tuple[Array, Array]:
    """Jacobians ``(d beta/d e_x, d beta/d e_v)``; both diagonal 3x3."""
    b = beta_eval(g, e_x, e_v)
    return np.diag(b.dbeta_dex), np.diag(b.dbeta_dev)


def desired_force(g: PositionGains, e_x, e_v, a_d, m: float, grav: float) -> Array:
    """``f_d = beta + m (a_d + g e3)`` in the inertial frame.

    Raises:
        GainError: if the vertical component is not strictly positive.
    """
    f = beta(g, e_x, e_v) + m * (np.asarray(a_d, dtype=float) + grav * E3)
    if not f[2] > 0.0:
        raise GainError("f_d3 <= 0: the lam2 margin is violated for this reference")
    return f


def beta_dot(b: BetaEval, g: PositionGains, e_v, de_v) -> Array:
    """Time derivative of beta along ``d e_x/dt = e_v``."""
    return b.dbeta_dex * e_v + b.dbeta_dev * de_v


def beta_ddot(b: BetaEval, g: PositionGains, e_v, de_v, dde_v) -> Array:
    """Second time derivative of beta, using only diagonal second derivatives."""
    dw = (g.k1 / g.lam1) * e_v
    inner_rate = de_v + g.k1 * b.s1w * e_v  # lam2/k2 * du/dt
    du = (g.k2 / g.lam2) * inner_rate
    d_inner_rate = dde_v + g.k1 * (b.s2w * dw * e_v + b.s1w * de_v)
    return -g.k2 * (b.s2u * du * inner_rate + b.s1u * d_inner_rate)


def d_desired_force_dt(g: PositionGains, e_x, e_v, de_v, j_d, m: float) -> Array:
    """``d f_d/dt = grad_x beta e_v + grad_v beta de_v + m j_d``."""
    b = beta_eval(g, e_x, e_v)
    return beta_dot(b, g, e_v, de_v) + m * np.asarray(j_d, dtype=float)
