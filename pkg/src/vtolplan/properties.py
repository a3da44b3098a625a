"""Randomized property suites with counterexample reporting.

Each suite returns a :class:`SuiteResult`; failures are data, never
exceptions. Every random case draws from its own child of one
``SeedSequence``, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .attitude import delta_R, lyapunov_VR
from .config import SimConfig, load_config
from .planner import build_Rc, proj_G, sigma_ramp
from .reference import EulerAttitude
from .sim import attitude_only_run, cone_stress_run
from .so3 import cross, expm_so3, is_rotation
from .vehicle import Allocator, mixer_matrix, numerical_rank

DEFAULT_COUNTS = {
    "delta_R": 10_000,
    "allocation": 10_000,
    "lyapunov": 20,
    "cone_stress": 100,
    "projection": 10_000,
    "command_frame": 2_000,
}
MAX_COUNTEREXAMPLES = 5

# tolerances
TOL_IDENTITY = 1e-10
TOL_ALLOC = 1e-9
TOL_V_SLACK = 1e-8
TOL_V_DOT = 1e-5
TOL_CONE = 1e-12  # rad, rounding of the boundary retraction


@dataclass
class SuiteResult:
    name: str
    passed: bool
    samples: int
    violations: int
    metrics: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, dict):
        return {k: _tolist(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_tolist(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


class _Collector:
    def __init__(self, name: str, n: int):
        self.res = SuiteResult(name, True, n, 0)

    def fail(self, **inputs) -> None:
        self.res.violations += 1
        self.res.passed = False
        if len(self.res.counterexamples) < MAX_COUNTEREXAMPLES:
            self.res.counterexamples.append(_tolist(inputs))


def _rng(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(ss)


# --------------------------------------------------------------------------
# algebraic suites


def suite_delta_R(cfg: SimConfig, n: int, ss: np.random.SeedSequence) -> SuiteResult:
    """Closed-form identity and certified bound of the force mismatch."""
    rng = _rng(ss)
    col = _Collector("delta_R", n)
    Re = Rotation.random(n, random_state=rng).as_matrix()
    Rp = Rotation.random(n, random_state=rng).as_matrix()
    worst_id = 0.0
    min_margin = math.inf
    for i in range(n):
        rep = delta_R(cfg.attitude, Re[i], Rp[i])
        d_id = abs(rep.norm_F - rep.identity_F)
        worst_id = max(worst_id, d_id)
        min_margin = min(min_margin, rep.margin)
        if d_id > TOL_IDENTITY or rep.margin < 0.0:
            col.fail(R_e=Re[i], R_p=Rp[i], norm_F=rep.norm_F, identity_F=rep.identity_F,
                     bound=rep.bound)
    col.res.metrics = {"max_identity_error": worst_id, "min_bound_margin": min_margin,
                       "rho": cfg.attitude.rho}
    return col.res


def suite_allocation(cfg: SimConfig, n: int, ss: np.random.SeedSequence) -> SuiteResult:
    """Exact allocation of random feasible wrenches at the configured tilt, plus ranks."""
    rng = _rng(ss)
    p = cfg.vehicle if cfg.vehicle.alpha != 0.0 else cfg.vehicle.with_(alpha=math.radians(20))
    col = _Collector("allocation", n)
    al = Allocator(p)
    u = rng.uniform(0.05, 1.0, size=(n, 6)) * p.w_rot_max**2
    worst = 0.0
    for ui in u:
        w = al.M @ ui
        a = al(w[:3], w[3:])
        r = float(np.linalg.norm(al.M @ a.u_bar - w))
        worst = max(worst, r)
        if r >= TOL_ALLOC or a.clamped:
            col.fail(u=ui, wrench=w, residual=r, clamped=a.clamped)
    ranks = {"alpha_0": numerical_rank(mixer_matrix(p.with_(alpha=0.0))),
             "alpha_cfg": numerical_rank(al.M)}
    if ranks["alpha_0"] != 4 or ranks["alpha_cfg"] != 6:
        col.fail(ranks=ranks)
    col.res.metrics = {"max_residual": worst, "alpha_deg": math.degrees(p.alpha), **ranks}
    return col.res


def suite_projection(cfg: SimConfig, n: int, ss: np.random.SeedSequence) -> SuiteResult:
    """Non-expansiveness, inactive identity, tangential pass-through and boundary blocking."""
    rng = _rng(ss)
    col = _Collector("projection", n)
    delta = math.sin(cfg.theta_M if cfg.planner_mode == "dynamic" else math.radians(10.0))
    eps = cfg.attitude.eps
    r0 = delta / math.sqrt(1.0 + eps)
    for _ in range(n):
        rho = rng.uniform(0.0, delta)
        phi = rng.uniform(0.0, 2 * math.pi)
        p = np.array([rho * math.cos(phi), rho * math.sin(phi), math.sqrt(1.0 - rho * rho)])
        w = cross(rng.normal(size=3), p)
        out = proj_G(p, w, delta, eps)
        bad = []
        if np.linalg.norm(out) > np.linalg.norm(w) * (1 + 1e-12) + 1e-15:
            bad.append("expansive")
        if abs(float(out @ p)) > 1e-12 * max(1.0, np.linalg.norm(w)):
            bad.append("leaves tangent plane")
        if rho <= r0 and np.linalg.norm(out - w) > 0.0:
            bad.append("inactive region modified")
        if rho > 0.0:
            e_phi = np.array([-math.sin(phi), math.cos(phi), 0.0])
            t_dir = e_phi - (e_phi @ p) * p
            wt = float(rng.normal()) * t_dir
            if np.linalg.norm(proj_G(p, wt, delta, eps) - wt) > 1e-12:
                bad.append("tangential modified")
        # at the boundary the planar radius cannot grow
        pb = np.array([delta * math.cos(phi), delta * math.sin(phi), math.sqrt(1 - delta**2)])
        wb = cross(rng.normal(size=3), pb)
        ob = proj_G(pb, wb, delta, eps)
        if pb[0] * ob[0] + pb[1] * ob[1] > 1e-12 * max(1.0, np.linalg.norm(wb)):
            bad.append("boundary outward rate")
        if bad:
            col.fail(p=p, w=w, reasons=bad)
    col.res.metrics = {"delta": delta, "eps": eps, "sigma_at_delta": sigma_ramp(delta, delta, eps)[0]}
    return col.res


def suite_command_frame(cfg: SimConfig, n: int, ss: np.random.SeedSequence) -> SuiteResult:
    """``R_c`` is a rotation aligned with ``f_d`` holding the requested heading."""
    rng = _rng(ss)
    col = _Collector("command_frame", n)
    worst = 0.0
    for _ in range(n):
        f = rng.normal(size=3) * np.array([5.0, 5.0, 2.0]) + np.array([0, 0, 9.81])
        if f[2] <= 0.5:
            f[2] = 0.5 + abs(f[2])
        psi = rng.uniform(-math.pi, math.pi)
        R = build_Rc(f, psi)
        e_axis = float(np.linalg.norm(R[:, 2] - f / np.linalg.norm(f)))
        e_head = abs(math.remainder(math.atan2(-R[0, 1], R[1, 1]) - psi, 2 * math.pi))
        worst = max(worst, e_axis, e_head)
        if not is_rotation(R) or e_axis > 1e-12 or e_head > 1e-9:
            col.fail(f_d=f, psi=psi, axis_error=e_axis, heading_error=e_head)
    col.res.metrics = {"max_error": worst}
    return col.res


# --------------------------------------------------------------------------
# simulation suites (one case per child seed, optionally in parallel)


def _random_reference(rng: np.random.Generator) -> EulerAttitude:
    def ang():
        return (rng.uniform(-0.2, 0.2), rng.uniform(0.0, 0.5), rng.uniform(0.2, 1.5),
                rng.uniform(0.0, 2 * math.pi))
    return EulerAttitude(ang(), ang(), ang())


def _lyapunov_case(cfg: SimConfig, ss: np.random.SeedSequence) -> dict:
    rng = _rng(ss)
    ref = _random_reference(rng)
    R_p0, w_p0, *_ = ref.evaluate(0.0)
    J = np.asarray(cfg.vehicle.J, dtype=float)
    while True:
        axis = rng.normal(size=3)
        R_e = expm_so3(axis / np.linalg.norm(axis) * rng.uniform(0.0, math.pi))
        e_w = rng.normal(size=3) * 2.0
        if lyapunov_VR(cfg.attitude, R_e, e_w, J).in_S_a:
            break
    R0 = R_e @ R_p0
    w0 = e_w + w_p0
    run = attitude_only_run(cfg, ref, R0, w0)
    return {"R0": R0, "w0": w0, "V0": float(run.V[0]), "V_end": float(run.V[-1]),
            "min_margin": run.min_margin, "fd_rel_err": run.fd_rel_err, "in_S_a": run.in_S_a,
            "reference": [list(ref.roll), list(ref.pitch), list(ref.yaw)]}


def _cone_case(cfg: SimConfig, ss: np.random.SeedSequence) -> dict:
    return cone_stress_run(cfg, _rng(ss))


def _map(fn, cfg, seeds, workers: int) -> list[dict]:
    if workers <= 1:
        return [fn(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, [cfg] * len(seeds), seeds))


def suite_lyapunov(cfg: SimConfig, n: int, ss: np.random.SeedSequence,
                   workers: int = 1) -> SuiteResult:
    """Attitude-only decrease of ``V_R`` from random starts inside the basin."""
    col = _Collector("lyapunov", n)
    cases = _map(_lyapunov_case, cfg, ss.spawn(n), workers)
    for c in cases:
        if not c["in_S_a"] or c["min_margin"] < -TOL_V_SLACK or c["fd_rel_err"] > TOL_V_DOT:
            col.fail(**c)
    col.res.metrics = {
        "min_step_margin": min(c["min_margin"] for c in cases) if cases else None,
        "max_fd_rel_err": max(c["fd_rel_err"] for c in cases) if cases else None,
        "max_V_end_over_V0": max(c["V_end"] / c["V0"] for c in cases if c["V0"] > 0)
        if cases else None,
    }
    return col.res


def suite_cone_stress(cfg: SimConfig, n: int, ss: np.random.SeedSequence,
                      workers: int = 1) -> SuiteResult:
    """Planner-only runs against attitude references that violate the cone condition."""
    col = _Collector("cone_stress", n)
    cases = _map(_cone_case, cfg, ss.spawn(n), workers)
    for i, c in enumerate(cases):
        if c["fault"] is not None or c["max_theta_c"] > c["theta_M"] + TOL_CONE \
                or not c["violates_cone_trackability"]:
            col.fail(case=i, **c)
    col.res.metrics = {
        "max_theta_c_minus_theta_M": max(c["max_theta_c"] - c["theta_M"] for c in cases)
        if cases else None,
        "max_excess_before_retraction": max(c["max_excess"] for c in cases) if cases else None,
        "all_adversarial": all(c["violates_cone_trackability"] for c in cases),
    }
    return col.res


SUITES = ("delta_R", "allocation", "projection", "command_frame", "lyapunov", "cone_stress")


def run_property_suite(seed: int = 0, counts: dict | None = None, cfg: SimConfig | None = None,
                       workers: int = 1, only: tuple[str, ...] | None = None) -> dict:
    """Run every suite (or ``only`` these) and return a JSON-ready report.

    Args:
        seed: root seed; each suite and case uses a spawned child.
        counts: per-suite sample counts overriding :data:`DEFAULT_COUNTS`.
        cfg: configuration supplying gains and vehicle; default preset ``"B"``.
        workers: process count for the simulation suites.
    """
    cfg = cfg if cfg is not None else load_config("B")
    n = {**DEFAULT_COUNTS, **(counts or {})}
    unknown = set(n) - set(DEFAULT_COUNTS)
    if unknown:
        raise ValueError(f"unknown suites in counts: {sorted(unknown)}")
    names = SUITES if only is None else only
    children = dict(zip(SUITES, np.random.SeedSequence(seed).spawn(len(SUITES))))
    fns = {"delta_R": suite_delta_R, "allocation": suite_allocation,
           "projection": suite_projection, "command_frame": suite_command_frame}
    results = []
    for name in names:
        if name in fns:
            results.append(fns[name](cfg, n[name], children[name]))
        elif name == "lyapunov":
            results.append(suite_lyapunov(cfg, n[name], children[name], workers))
        elif name == "cone_stress":
            results.append(suite_cone_stress(cfg, n[name], children[name], workers))
        else:
            raise ValueError(f"unknown suite {name!r}")
    return {"seed": seed, "passed": all(r.passed for r in results),
            "suites": [_tolist(asdict(r)) for r in results]}


__all__ = ["SuiteResult", "run_property_suite", "DEFAULT_COUNTS", "SUITES"]
