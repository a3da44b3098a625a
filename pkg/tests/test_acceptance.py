"""Acceptance criteria 1-11 at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from vtolplan.config import load_config
from vtolplan.properties import run_property_suite
from vtolplan.sim import COL, derivative_chain_check, run_sim, window_overlap
from vtolplan.vehicle import VehicleParams, mixer_matrix, numerical_rank

pytestmark = pytest.mark.slow

CHECKPOINTS = {"sim": {"checkpoint_every": 100}}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def sim_a():
    return run_sim(load_config("A", CHECKPOINTS))


@pytest.fixture(scope="module")
def sim_b():
    return run_sim(load_config("B", CHECKPOINTS))


@pytest.fixture(scope="module")
def props():
    return {s["name"]: s for s in run_property_suite(seed=0)["suites"]}


def _vec(data, name):
    return data[:, [COL[f"{name}_x"], COL[f"{name}_y"], COL[f"{name}_z"]]]


def test_criterion_01_simulation_a(sim_a):
    s = sim_a.summary
    t = sim_a.data[:, COL["t"]]
    ex = np.linalg.norm(_vec(sim_a.data, "ex"), axis=1)
    bounded = bool(np.all(np.isfinite(ex[t >= 5.0]))) and s["max_ex_after"] < 1.0
    ok = (bounded and s["rms_ex_steady"] < 0.1
          and abs(s["theta_v_peak_deg"] - 22.0) <= 4.0 and 19.0 <= s["t_theta_v_peak"] <= 23.0
          and s["max_abs_psi_deg"] < 2.0 and s["runtime_s"] <= 60.0)
    record(1, ok, f"rms={s['rms_ex_steady']:.4f} m, max|e_x|(t>=5)={s['max_ex_after']:.3f} m, "
                  f"peak theta_v={s['theta_v_peak_deg']:.2f} deg at {s['t_theta_v_peak']:.2f} s, "
                  f"max|psi|={s['max_abs_psi_deg']:.2f} deg, runtime={s['runtime_s']:.1f} s")


def test_criterion_02_simulation_b(sim_b):
    s = sim_b.summary
    thc = np.degrees(sim_b.data[:, COL["theta_c"]])
    cone_ok = bool(np.all(thc <= s["theta_M_deg"] + 0.01))
    overlap = window_overlap(s["infeasible_windows"], (17.0, 26.0))
    ok = (cone_ok and s["max_theta_v_feasible_deg"] < 1.5
          and abs(s["theta_v_peak_after_deg"] - 11.7) <= 3.0
          and 19.0 <= s["t_theta_v_peak_after"] <= 23.0 and overlap >= 0.8)
    record(2, ok, f"max theta_c={thc.max():.6f} deg (theta_M={s['theta_M_deg']:.1f}), "
                  f"max theta_v feasible={s['max_theta_v_feasible_deg']:.3f} deg, "
                  f"peak theta_v={s['theta_v_peak_after_deg']:.2f} deg at "
                  f"{s['t_theta_v_peak_after']:.2f} s, windows={s['infeasible_windows']}, "
                  f"IoU={overlap:.3f}")


def test_criterion_03_vectored_thrust(sim_a):
    lat = np.abs(sim_a.data[:, [COL["fc_x"], COL["fc_y"]]]).max()
    record(3, lat < 1e-12, f"max |f_c1|,|f_c2| = {lat:.3e} N")


def test_criterion_04_lyapunov(props):
    s = props["lyapunov"]
    m = s["metrics"]
    record(4, s["passed"] and s["samples"] == 20,
           f"{s['samples']} runs, min step margin={m['min_step_margin']:.2e}, "
           f"max rel dV/dt error={m['max_fd_rel_err']:.2e}, violations={s['violations']}")


def test_criterion_05_delta_R_bound(props):
    s = props["delta_R"]
    m = s["metrics"]
    record(5, s["passed"] and s["samples"] == 10_000,
           f"{s['samples']} samples, identity error={m['max_identity_error']:.2e}, "
           f"min bound margin={m['min_bound_margin']:.3e}, rho={m['rho']:.4f}, "
           f"violations={s['violations']}")


def test_criterion_06_planner_feasibility(sim_a, sim_b):
    worst, ratios = 0.0, []
    for r in (sim_a, sim_b):
        d = derivative_chain_check(r.config, r.checkpoints)
        worst = max(worst, d["R_p_h"])
        ratios.append(d["ratio_R_p"])
    ok = worst <= 1e-3 and all(3.5 <= q <= 4.5 for q in ratios)
    record(6, ok, f"max |FD(R_p) - R_p hat(w_p)|_F = {worst:.3e} at h=1e-4, "
                  f"halving ratios A/B = {ratios[0]:.3f}/{ratios[1]:.3f}")


def test_criterion_07_cone_stress(props):
    s = props["cone_stress"]
    m = s["metrics"]
    record(7, s["passed"] and s["samples"] == 100 and m["all_adversarial"],
           f"{s['samples']} runs, faults/violations={s['violations']}, "
           f"max theta_c - theta_M = {m['max_theta_c_minus_theta_M']:.2e} rad")


def test_criterion_08_allocation(props):
    s = props["allocation"]
    m = s["metrics"]
    r0 = numerical_rank(mixer_matrix(VehicleParams(alpha=0.0)), 1e-8)
    r20 = numerical_rank(mixer_matrix(VehicleParams(alpha=math.radians(20.0))), 1e-8)
    ok = s["passed"] and s["samples"] == 10_000 and r0 == 4 and r20 == 6
    record(8, ok, f"{s['samples']} wrenches, max residual={m['max_residual']:.2e}, "
                  f"rank M(0)={r0}, rank M(20)={r20}")


def test_criterion_09_equilibrium():
    r = run_sim(load_config("hover"))
    d = r.data
    R = d[:, COL["R11"]:COL["R33"] + 1].reshape(-1, 3, 3)
    Rp = d[:, COL["Rp11"]:COL["Rp33"] + 1].reshape(-1, 3, 3)
    errs = {
        "e_x": np.linalg.norm(_vec(d, "ex"), axis=1).max(),
        "e_v": np.linalg.norm(_vec(d, "ev"), axis=1).max(),
        "R-R_p": np.linalg.norm(R - Rp, axis=(1, 2)).max(),
        "w-w_p": np.linalg.norm(_vec(d, "w") - _vec(d, "wp"), axis=1).max(),
    }
    ok = r.summary["horizon"] >= 10.0 and all(v < 1e-6 for v in errs.values())
    record(9, ok, ", ".join(f"max {k}={v:.1e}" for k, v in errs.items()))


def test_criterion_10_large_error_recovery():
    r = run_sim(load_config("recovery"))
    d = r.data
    e0 = float(np.linalg.norm(_vec(d, "ex")[0]))
    V0 = float(d[0, COL["V_R"]])
    ell_R = r.config.attitude.ell_R
    s = r.summary
    ok = abs(e0 - 10.0) < 1e-9 and V0 < ell_R and s["rms_ex_steady"] < 0.1
    record(10, ok, f"|e_x(0)|={e0:.1f} m, V_R(0)={V0:.3f} < ell_R={ell_R:.2f}, "
                   f"rms on {s['steady_window']} s = {s['rms_ex_steady']:.4f} m")


def test_criterion_11_derivative_chain(sim_b):
    d = derivative_chain_check(sim_b.config, sim_b.checkpoints)
    tol = {"f_d": 1e-4, "w_c": 1e-4, "dw_c": 1e-3, "w_p": 1e-4, "dw_p": 1e-3}
    ok = d["checked"] >= 300 and all(d[k] <= v for k, v in tol.items())
    record(11, ok, f"{d['checked']} points ({d['skipped']} switch stencils skipped): "
                   + ", ".join(f"{k}={d[k]:.1e}<={v:.0e}" for k, v in tol.items()))
