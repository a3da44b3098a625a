import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import solve_ivp

from vtolplan import planner as pl
from vtolplan import reference as ref
from vtolplan.so3 import E1, E3, I3, hat, is_rotation, rot_axis_angle, rot_z

TH_M = math.radians(10.0)
DELTA = math.sin(TH_M)
EPS = 0.05


def central(f, t, h):
    return (f(t + h) - f(t - h)) / (2 * h)


def force_traj(t):
    # smooth desired force tilting up to ~20 deg, with analytic derivatives
    A = np.array([3.0, 2.0, 0.8])
    w = np.array([0.9, 0.6, 1.3])
    ph = np.array([0.0, 1.0, 0.5])
    s, c = np.sin(w * t + ph), np.cos(w * t + ph)
    f = A * s + np.array([0.0, 0.0, 9.81])
    return f, A * w * c, -A * w**2 * s


def yaw_traj(t):
    return 0.3 * math.sin(0.5 * t), 0.15 * math.cos(0.5 * t), -0.075 * math.sin(0.5 * t)


# ---------------------------------------------------------------- R_c


def test_build_Rc_examples():
    assert_allclose(pl.build_Rc([0, 0, 9.81], 0.0), I3, atol=1e-15)
    assert_allclose(pl.build_Rc([0, 0, 9.81], math.pi / 2), rot_z(math.pi / 2), atol=1e-15)


def test_build_Rc_property_sampling():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        f = rng.normal(size=3)
        f[2] = abs(f[2]) + 0.1
        psi = rng.uniform(-math.pi, math.pi)
        R = pl.build_Rc(f, psi)
        assert np.linalg.norm(R.T @ R - I3) < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9
        assert_allclose(R[:, 2], f / np.linalg.norm(f), atol=1e-15)


def test_build_Rc_heading_singularity():
    with pytest.raises(pl.HeadingSingularity):
        pl.build_Rc([1.0, 0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        pl.build_Rc([0.0, 0.0, 0.0], 0.0)


def test_omega_c_examples():
    f = [0.0, 0.0, 9.81]
    z = np.zeros(3)
    assert_allclose(pl.omega_c(f, z, 0.3, 0.0), 0.0, atol=1e-15)
    assert_allclose(pl.omega_c(f, z, 0.3, 0.7), [0, 0, 0.7], atol=1e-15)
    assert_allclose(pl.omega_c_dot(f, z, z, 0.3, 0.0, 0.0), 0.0, atol=1e-15)
    assert_allclose(pl.omega_c_dot(f, z, z, 0.3, 0.7, 1.9), [0, 0, 1.9], atol=1e-14)


def test_omega_c_finite_differences():
    h = 1e-5
    for t in np.linspace(0, 20, 100):

        def Rc(s):
            return pl.build_Rc(force_traj(s)[0], yaw_traj(s)[0])

        def wc(s):
            f, df, _ = force_traj(s)
            psi, dpsi, _ = yaw_traj(s)
            return pl.omega_c(f, df, psi, dpsi)

        f, df, ddf = force_traj(t)
        psi, dpsi, ddpsi = yaw_traj(t)
        fr = pl.command_frame(f, df, psi, dpsi, ddf, ddpsi)
        assert_allclose(central(Rc, t, h), fr.R_c @ hat(fr.w_c), atol=1e-8)
        assert_allclose(central(wc, t, h), fr.dw_c, atol=1e-7)


# ---------------------------------------------------------------- projection


def test_sigma_ramp():
    r0 = DELTA / math.sqrt(1 + EPS)
    assert pl.sigma_ramp(0.5 * r0, DELTA, EPS) == (0.0, 0.0)
    assert pl.sigma_ramp(r0, DELTA, EPS) == (0.0, 0.0)
    assert pl.sigma_ramp(DELTA, DELTA, EPS) == (1.0, 0.0)
    for rho in np.linspace(r0 + 1e-6, DELTA - 1e-6, 50):
        s, ds = pl.sigma_ramp(rho, DELTA, EPS)
        fd = (pl.sigma_ramp(rho + 1e-8, DELTA, EPS)[0] - pl.sigma_ramp(rho - 1e-8, DELTA, EPS)[0]) / 2e-8
        assert 0 < s < 1 and ds == pytest.approx(fd, rel=1e-5)


def cone_point(rho, az=0.3):
    return np.array([rho * math.cos(az), rho * math.sin(az), math.sqrt(1 - rho * rho)])


def tangent(p, v):
    return v - (p @ v) * p


def test_proj_inactive_is_identity():
    rng = np.random.default_rng(1)
    p = cone_point(0.5 * DELTA)
    for _ in range(100):
        w = tangent(p, rng.normal(size=3))
        assert_array_equal(pl.proj_G(p, w, DELTA, EPS), w)


def test_proj_boundary_removes_outward_component():
    # at rho = delta the projected velocity does not increase rho
    for az in np.linspace(0, 2 * math.pi, 13):
        p = cone_point(DELTA, az)
        radial = np.array([math.cos(az), math.sin(az), 0.0])
        w = tangent(p, radial)
        P = pl.proj_G(p, w, DELTA, EPS)
        assert p[0] * P[0] + p[1] * P[1] == pytest.approx(0.0, abs=1e-15)
        assert abs(p @ P) < 1e-15


def test_proj_tangential_and_inward_unchanged():
    for rho in (0.5 * DELTA, 0.99 * DELTA, DELTA):
        p = cone_point(rho, 1.1)
        tang = np.cross(E3, p)
        assert_allclose(pl.proj_G(p, tang, DELTA, EPS), tang, atol=1e-15)
        inward = -tangent(p, np.array([p[0], p[1], 0.0]))
        assert_array_equal(pl.proj_G(p, inward, DELTA, EPS), inward)


def test_proj_non_expansive():
    rng = np.random.default_rng(2)
    for _ in range(5000):
        rho = rng.uniform(0, DELTA)
        p = cone_point(rho, rng.uniform(0, 2 * math.pi))
        w = tangent(p, rng.normal(size=3))
        assert np.linalg.norm(pl.proj_G(p, w, DELTA, EPS)) <= np.linalg.norm(w) + 1e-15


def test_proj_cone_escape_faults():
    with pytest.raises(pl.ConeFault):
        pl.proj_G(cone_point(1.01 * DELTA), np.zeros(3), DELTA, EPS)


def test_omega_r_inactive_and_zero():
    rng = np.random.default_rng(3)
    R_r = rot_axis_angle(E1, 0.3 * TH_M)
    for _ in range(100):
        w = rng.normal(size=3)
        assert_allclose(pl.omega_r(R_r, w, DELTA, EPS), w, atol=1e-14)
    assert_array_equal(pl.omega_r(R_r, np.zeros(3), DELTA, EPS), np.zeros(3))


def test_omega_r_boundary_keeps_cone():
    rng = np.random.default_rng(4)
    for _ in range(500):
        az = rng.uniform(0, 2 * math.pi)
        axis = np.array([-math.sin(az), math.cos(az), 0.0])
        R_r = rot_axis_angle(axis, TH_M) @ rot_z(rng.uniform(-3, 3))
        w_rd = rng.normal(scale=3, size=3)
        w_r = pl.omega_r(R_r, w_rd, DELTA, EPS)
        b = R_r[:, 2]
        assert E3 @ np.cross(w_r, b) >= -1e-14
        assert np.linalg.norm(w_r) <= 2 * np.linalg.norm(w_rd) + 1e-12


def test_omega_r_desired_and_planner_error():
    z = np.zeros(3)
    R_ep, e = pl.planner_error(2.0, I3, I3)
    assert_array_equal(pl.omega_r_desired(I3, I3, z, z, e), z)
    for th in (0.1, -0.7, 2.0):
        _, e = pl.planner_error(2.0, rot_z(th), I3)
        assert_allclose(e, [0, 0, 2 * math.sin(th)], atol=1e-15)


# ---------------------------------------------------------------- planner


def test_planner_rejects_bad_config():
    with pytest.raises(ValueError):
        pl.Planner("bogus")
    with pytest.raises(ValueError):
        pl.Planner("dynamic", theta_M=2.0)
    with pytest.raises(ValueError):
        pl.Planner("dynamic", dw_r_method="central")


def test_static_mode_outputs_command_frame():
    P = pl.Planner("static")
    s = ref.HoverScenario().sample(0.0)
    f, df, ddf = force_traj(1.3)
    st = P.rates(f, df, s)
    out = P.accelerations(st, f, df, ddf, s)
    fr = pl.command_frame(f, df, s.psi_d, s.dpsi_d, ddf, s.ddpsi_d)
    assert_array_equal(out.R_p, fr.R_c)
    assert_array_equal(out.w_p, fr.w_c)
    assert_array_equal(out.dw_p, fr.dw_c)
    assert out.theta_c == 0.0
    P.advance(np.ones(3), 1e-3)
    assert_array_equal(P.R_r, I3)


def test_unconstrained_planner_converges_to_desired():
    # f_d nearly vertical, R_d = I, cone effectively inactive: R_e^p -> I
    P = pl.Planner("dynamic", theta_M=math.radians(89.0), k_d=2.0)
    s = ref.HoverScenario().sample(0.0)
    f = np.array([0.5, -0.3, 9.81])
    z = np.zeros(3)
    for _ in range(5000):
        st = P.rates(f, z, s)
        P.advance(st.w_r, 2e-3)
    st = P.rates(f, z, s)
    assert np.linalg.norm(st.R_ep - I3) < 1e-6


def test_retraction_restores_cone():
    P = pl.Planner("dynamic")
    R = rot_axis_angle(E1, TH_M * 1.001)
    Rr = P.retract(R)
    assert math.acos(Rr[2, 2]) == pytest.approx(TH_M, abs=1e-12)
    assert P.retractions == 1
    assert is_rotation(Rr)
    with pytest.raises(pl.ConeFault):
        P.retract(rot_axis_angle(E1, 2.0))


def _flow(P, sample_at, R0, t0, t1):
    """Integrate dR_r/dt = hat(w_r) R_r independently with DOP853."""

    def rhs(t, y):
        R = y.reshape(3, 3)
        f, df, _ = force_traj(t)
        st = P.rates(f, df, sample_at(t), R_r=R)
        return (hat(st.w_r) @ R).ravel()

    sol = solve_ivp(rhs, (t0, t1), R0.ravel(), method="DOP853", rtol=1e-13, atol=1e-13,
                    max_step=0.01)
    return sol.y[:, -1].reshape(3, 3)


def _switches(P, sc, stencil):
    # True when the projection's outward branch toggles inside the stencil
    flags = set()
    for s_, Rr in stencil:
        f, df, _ = force_traj(s_)
        st = P.rates(f, df, sc.sample(s_), R_r=Rr)
        b = Rr[:, 2]
        rr = math.hypot(b[0], b[1])
        sig = pl.sigma_ramp(rr, DELTA, EPS)[0]
        a = ((b[2] * b - E3) / rr) @ np.cross(st.w_rd, b) if rr > 0 else -1.0
        flags.add(bool(sig > 0 and a > 0))
    return len(flags) > 1


@pytest.mark.parametrize("attitude", ["level", "euler"])
def test_planner_derivative_chain_along_flow(attitude):
    # second-order convergence of central differences proves the analytic chain
    att = ref.LevelAttitude() if attitude == "level" else ref.EulerAttitude(
        roll=(0.0, 0.15, 0.8, 0.0), pitch=(0.0, 0.1, 0.5, 0.3), yaw=(0.0, 0.4, 0.3, 0.0))
    sc = ref.HoverScenario(attitude=att, horizon=100.0)
    P = pl.Planner("dynamic", theta_M=TH_M, eps=EPS, k_d=2.0)
    P.cone_slack = 1e-2  # the oracle's trial stages may probe just outside

    def out_at(s, Rr):
        f, df, ddf = force_traj(s)
        smp = sc.sample(s)
        st = P.rates(f, df, smp, R_r=Rr)
        return P.accelerations(st, f, df, ddf, smp)

    R = I3.copy()
    t = 0.0
    active = checked = 0
    for t_next in np.arange(0.5, 12.0, 0.5):
        R = _flow(P, sc.sample, R, t, t_next)
        t = t_next
        o0 = out_at(t, R)
        assert o0.theta_c <= TH_M + 1e-9
        rho = math.hypot(R[0, 2], R[1, 2])
        active += pl.sigma_ramp(rho, DELTA, EPS)[0] > 0
        errs = []
        for h in (2e-4, 1e-4):
            Rp_, Rm_ = _flow(P, sc.sample, R, t, t + h), _flow(P, sc.sample, R, t, t - h)
            if _switches(P, sc, ((t - h, Rm_), (t, R), (t + h, Rp_))):
                errs = None
                break
            op, om = out_at(t + h, Rp_), out_at(t - h, Rm_)
            errs.append((
                np.linalg.norm((op.R_p - om.R_p) / (2 * h) - o0.R_p @ hat(o0.w_p)),
                np.linalg.norm((op.w_r - om.w_r) / (2 * h) - o0.dw_r),
                np.linalg.norm((op.w_p - om.w_p) / (2 * h) - o0.dw_p),
            ))
        if errs is None:
            continue
        checked += 1
        for e2, e1 in zip(errs[0], errs[1]):
            assert e1 < 1e-8 or 3.0 < e2 / e1 < 5.0, (t, errs)
        assert errs[1][0] < 1e-4
    assert active > 0, "projection never engaged; scenario is too mild"
    assert checked >= 15


def test_backward_differencing_option():
    P = pl.Planner("dynamic", dw_r_method="backward")
    s = ref.HoverScenario().sample(0.0)
    f, df, ddf = force_traj(0.0)
    st = P.rates(f, df, s)
    out = P.accelerations(st, f, df, ddf, s, dt=1e-3)
    assert_array_equal(out.dw_r, np.zeros(3))
    P.advance(st.w_r, 1e-3)
    st2 = P.rates(f, df, s)
    out2 = P.accelerations(st2, f, df, ddf, s, dt=1e-3)
    assert_allclose(out2.dw_r, (st2.w_r - st.w_r) / 1e-3)


def test_theta_c_matches_cone_axis():
    P = pl.Planner("dynamic")
    P.reset(rot_axis_angle(E1, 0.1))
    s = ref.HoverScenario().sample(0.0)
    f, df, ddf = force_traj(0.0)
    out = P.accelerations(P.rates(f, df, s), f, df, ddf, s)
    assert math.cos(out.theta_c) == pytest.approx(E3 @ P.R_r @ E3, abs=1e-15)
