"""Rotation-group primitives: hat/vee, axis-angle, error functions on SO(3).

Rotations are stored as plain ``(3, 3)`` float arrays. Functions never mutate
their inputs.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])
I3 = np.eye(3)

SO3_TOL = 1e-9


class SO3Error(ValueError):
    """Raised when an input violates a rotation-group precondition."""


def hat(w) -> Array:
    """Cross-product matrix: ``hat(w) @ y == cross(w, y)``."""
    return np.array(
        [[0.0, -w[2], w[1]],
         [w[2], 0.0, -w[0]],
         [-w[1], w[0], 0.0]]
    )


def vee(S, tol: float = SO3_TOL) -> Array:
    """Inverse of :func:`hat`.

    Raises:
        SO3Error: if ``S`` is not skew-symmetric to within ``tol`` (Frobenius).
    """
    S = np.asarray(S, dtype=float)
    if np.linalg.norm(S + S.T) >= tol:
        raise SO3Error("vee() expects a skew-symmetric matrix")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def vee_skew(A) -> Array:
    """``skew(A)^vee`` without materializing the skew part."""
    return 0.5 * np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def skew(A) -> Array:
    return 0.5 * (A - A.T)


def cross(a, b) -> Array:
    # np.cross is ~10x slower for single 3-vectors
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def rot_axis_angle(u, theta: float) -> Array:
    """Rotation by ``theta`` about the unit axis ``u`` (Rodrigues)."""
    u = np.asarray(u, dtype=float)
    if abs(math.sqrt(u @ u) - 1.0) > SO3_TOL:
        raise SO3Error("rotation axis must be a unit vector")
    K = hat(u)
    return I3 + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def rot_x(theta: float) -> Array:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(theta: float) -> Array:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(theta: float) -> Array:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def expm_so3(w) -> Array:
    """Exponential map ``exp(hat(w))`` with a series branch near zero."""
    th2 = float(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = hat(w)
    if th2 < 1e-12:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        th = math.sqrt(th2)
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    return I3 + a * W + b * (W @ W)


def logm_so3(R) -> Array:
    """Rotation vector of ``R`` (angle in ``[0, pi]``)."""
    c = clamp_cos(0.5 * (np.trace(R) - 1.0))
    th = math.acos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-6:
        return 0.5 * v
    if math.pi - th < 1e-6:
        # axis from the symmetric part; sign is irrelevant at pi
        B = 0.5 * (R + I3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        return th * axis / np.linalg.norm(axis)
    return th / (2.0 * math.sin(th)) * v


def dexpinv(u, w) -> Array:
    """Right-trivialized inverse tangent map for ``R = R0 exp(hat(u))``.

    Returns ``du/dt`` such that ``d/dt (R0 exp(hat(u))) = R hat(w)``.
    """
    th2 = float(u @ u)
    uw = cross(u, w)
    if th2 < 1e-10:
        c = 1.0 / 12.0 + th2 / 720.0
    else:
        th = math.sqrt(th2)
        half = 0.5 * th
        c = (1.0 - half * math.cos(half) / math.sin(half)) / th2
    return w + 0.5 * uw + c * cross(u, uw)


def project_to_so3(A) -> Array:
    """Nearest rotation in Frobenius norm (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(A)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def reorthonormalize(R, tol: float = 1e-13) -> Array:
    """Polar projection, skipped when ``R`` is already orthonormal to ``tol``."""
    if np.abs(R.T @ R - I3).max() <= tol:
        return R
    return project_to_so3(R)


def finite(*arrays) -> bool:
    """True when every entry is finite (a NaN or inf entry poisons the sum)."""
    return all(math.isfinite(float(a.sum())) for a in arrays)


def is_rotation(R, tol: float = SO3_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.linalg.norm(R.T @ R - I3) < tol and abs(np.linalg.det(R) - 1.0) < tol
    )


def clamp_cos(c: float) -> float:
    return -1.0 if c < -1.0 else (1.0 if c > 1.0 else c)


def angle_between(a, b) -> float:
    """Angle between two nonzero vectors, clamped ``arccos``."""
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    return math.acos(clamp_cos(float(a @ b) / (na * nb)))


def nav_matrix_spectrum(K) -> tuple[float, float]:
    """``(lambda_min, lambda_max)`` of ``tr(K) I - K``."""
    K = np.asarray(K, dtype=float)
    ev = np.linalg.eigvalsh(np.trace(K) * I3 - K)
    return float(ev[0]), float(ev[-1])


def check_nav_gain(K, name: str = "K") -> None:
    """Validate a navigation-function gain (symmetric, ``tr(K)I - K`` PD)."""
    K = np.asarray(K, dtype=float)
    if K.shape != (3, 3) or np.max(np.abs(K - K.T)) > 1e-12:
        raise SO3Error(f"{name} must be a symmetric 3x3 matrix")
    lam_min, _ = nav_matrix_spectrum(K)
    if lam_min <= 0.0:
        raise SO3Error(f"tr({name})I - {name} must be positive definite")


def nav_fn(K, R) -> float:
    """Modified trace function ``0.5 tr(K (I - R))``."""
    return 0.5 * float(np.trace(K @ (I3 - R)))


def norm_dist(R) -> float:
    """Normalized distance ``sqrt(tr(I - R) / 4)``, in ``[0, 1]``."""
    rad = 0.25 * (3.0 - float(np.trace(R)))
    if rad < 0.0:
        if rad < -1e-12:
            raise SO3Error("tr(R) > 3: input is not a rotation")
        rad = 0.0
    return math.sqrt(min(rad, 1.0))


def e_R(K, R_e) -> Array:
    """Left-trivialized gradient of :func:`nav_fn`: ``skew(K R_e)^vee``."""
    return vee_skew(K @ R_e)
