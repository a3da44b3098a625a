"""Simulation configuration: schema, presets, YAML loading and validation.

Angles in configuration files are in degrees (keys end in ``_deg``); every
other quantity is SI. Unknown keys are rejected so that typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attitude import AttitudeGains
from .planner import Planner
from .position import PositionGains
from .reference import (
    CircularScenario,
    EulerAttitude,
    HoverScenario,
    LevelAttitude,
    Scenario,
    TabulatedScenario,
    scenario_bounds,
)
from .so3 import SO3Error, expm_so3
from .vehicle import RANK_TOL, VehicleParams, mixer_matrix, numerical_rank


class ConfigError(ValueError):
    """Invalid configuration; the message names the violated condition."""


DEFAULTS: dict = {
    "name": "custom",
    "scenario": {
        "kind": "circular",  # circular | hover | file
        "radius": 1.0,
        "omega1": 0.85,
        "omega2": 1.15,
        "t1": 12.0,
        "t2": 29.0,
        "horizon": 40.0,
        "phase": "product",
        "literal_cos": False,
        "point": [1.0, 0.0, 0.0],
        "file": None,
        "smoothing": 0.0,
        "attitude": {
            "kind": "level",  # level | euler
            # each angle: [offset_deg, amplitude_deg, freq_rad_s, phase_rad]
            "roll": [0.0, 0.0, 0.0, 0.0],
            "pitch": [0.0, 0.0, 0.0, 0.0],
            "yaw": [0.0, 0.0, 0.0, 0.0],
        },
    },
    "vehicle": {
        "m": 1.0,
        "J": [0.008, 0.008, 0.016],
        "alpha_deg": 0.0,
        "k_f": 6.5e-6,
        "k_tau": 6.5e-6 * 0.016,
        "arm": 0.25,
        "w_rot_max": 1200.0,
        "tau_p": 0.05,
        "D_a": [0.04, 0.04, 0.02],
        "c_d": 0.01,
        "c_I": 0.05,
        "sigma_cone": 0.5,
        "g": 9.81,
        "drag": True,
        "rotor_lag": True,
        "tilt_pattern": "alternating",
    },
    "position": {"k1": 0.06, "k2": 9.0, "lam1": 1.0, "lam2": 9.0, "knee": 0.1},
    "attitude": {
        "K_R": [0.6, 0.6, 1.4],
        "K_w": [0.2, 0.2, 0.2],
        "ell": 2.1,
        "scaling": "tilt",
        "psi_M": None,
    },
    "planner": {
        "mode": "static",  # static | dynamic
        "theta_M_deg": None,  # None: sigma_cone * alpha
        "k_d": 2.0,
        "eps": 0.05,
        "dw_r_method": "analytic",
    },
    "sim": {
        "dt": 1e-3,
        "horizon": None,  # None: scenario horizon
        "seed": 0,
        "substeps": 1,
        "scheme": "rkmk4",
        "x0": [1.0, 0.0, 0.0],
        "v0": [0.0, 0.0, 0.0],
        "rotvec0": [0.0, 0.0, 0.0],
        "w0": [0.0, 0.0, 0.0],
        "steady_window": None,  # [t0, t1]; None: last 10 s
        "transient": 2.0,
        "bounded_after": 5.0,
        "checkpoint_every": 0,  # keep full states every N steps (0: never)
        "ev_dot": "accelerometer",  # accelerometer | model
    },
    "output": {"dir": "out", "telemetry": "telemetry.csv", "summary": "summary.json"},
}

PRESETS: dict[str, dict] = {
    "A": {
        "name": "simulation-A",
        "vehicle": {"alpha_deg": 0.0},
        "planner": {"mode": "static"},
    },
    "B": {
        "name": "simulation-B",
        "vehicle": {"alpha_deg": 20.0},
        "planner": {"mode": "dynamic"},
    },
    "hover": {
        "name": "hover",
        "scenario": {"kind": "hover", "horizon": 10.0},
        "vehicle": {"alpha_deg": 20.0, "drag": False},
        "planner": {"mode": "dynamic"},
        "sim": {"steady_window": [0.0, 10.0]},
    },
    # 10 m error with a tilted, spinning start; the slow linear mode (rate k1)
    # needs ~80 s to shrink it to the centimetre level
    "recovery": {
        "name": "recovery",
        "scenario": {"kind": "hover", "horizon": 100.0},
        "vehicle": {"alpha_deg": 20.0},
        "planner": {"mode": "dynamic"},
        "sim": {"x0": [7.0, -8.0, 0.0], "rotvec0": [0.3, -0.2, 0.4], "w0": [0.5, -0.5, 0.2],
                "steady_window": [90.0, 100.0]},
    },
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


@dataclass
class SimConfig:
    """Resolved configuration; ``raw`` keeps the merged key-value tree."""

    raw: dict
    name: str
    scenario: Scenario
    vehicle: VehicleParams
    position: PositionGains
    attitude: AttitudeGains
    planner_mode: str
    theta_M: float
    dw_r_method: str
    dt: float
    horizon: float
    seed: int
    substeps: int
    scheme: str
    x0: np.ndarray
    v0: np.ndarray
    R0: np.ndarray
    w0: np.ndarray
    steady_window: tuple[float, float]
    transient: float
    bounded_after: float
    checkpoint_every: int
    ev_dot: str
    output_dir: Path
    telemetry_name: str
    summary_name: str
    checks: list[str] = field(default_factory=list)

    def make_planner(self) -> Planner:
        # a static planner never reads theta_M
        theta_M = self.theta_M if self.planner_mode == "dynamic" else math.radians(10.0)
        return Planner(self.planner_mode, theta_M=theta_M, eps=self.attitude.eps,
                       k_d=self.attitude.k_d, dw_r_method=self.dw_r_method)

    def with_overrides(self, over: dict) -> "SimConfig":
        return build_config(_merge(self.raw, over))


def _vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be three finite numbers")
    return a


def _angle_profile(v, name: str) -> tuple[float, float, float, float]:
    if len(v) != 4:
        raise ConfigError(f"{name} needs [offset_deg, amplitude_deg, freq, phase]")
    return (math.radians(v[0]), math.radians(v[1]), float(v[2]), float(v[3]))


def _scenario(sc: dict) -> Scenario:
    att = sc["attitude"]
    if att["kind"] == "level":
        attitude = LevelAttitude()
    elif att["kind"] == "euler":
        attitude = EulerAttitude(_angle_profile(att["roll"], "roll"),
                                 _angle_profile(att["pitch"], "pitch"),
                                 _angle_profile(att["yaw"], "yaw"))
    else:
        raise ConfigError(f"unknown attitude kind {att['kind']!r}")
    kind = sc["kind"]
    if kind == "circular":
        return CircularScenario(radius=sc["radius"], omega1=sc["omega1"], omega2=sc["omega2"],
                                t1=sc["t1"], t2=sc["t2"], horizon=sc["horizon"],
                                phase=sc["phase"], literal_cos=sc["literal_cos"],
                                attitude=attitude)
    if kind == "hover":
        return HoverScenario(point=_vec3(sc["point"], "scenario.point"), horizon=sc["horizon"],
                             attitude=attitude)
    if kind == "file":
        if not sc["file"]:
            raise ConfigError("scenario.file is required for kind 'file'")
        return TabulatedScenario.from_csv(sc["file"], smoothing=sc["smoothing"])
    raise ConfigError(f"unknown scenario kind {kind!r}")


def build_config(raw: dict) -> SimConfig:
    """Resolve a merged key-value tree into typed objects (no validation)."""
    v, pz, at, pl, sm, out = (raw[k] for k in
                              ("vehicle", "position", "attitude", "planner", "sim", "output"))
    try:
        veh = VehicleParams(
            m=float(v["m"]), J=np.diag(_vec3(v["J"], "vehicle.J")),
            alpha=math.radians(v["alpha_deg"]), k_f=float(v["k_f"]), k_tau=float(v["k_tau"]),
            arm=float(v["arm"]), w_rot_max=float(v["w_rot_max"]), tau_p=float(v["tau_p"]),
            D_a=np.diag(_vec3(v["D_a"], "vehicle.D_a")), c_d=float(v["c_d"]),
            c_I=float(v["c_I"]), sigma_cone=float(v["sigma_cone"]), g=float(v["g"]),
            drag=bool(v["drag"]), rotor_lag=bool(v["rotor_lag"]),
            tilt_pattern=v["tilt_pattern"],
        )
        pos = PositionGains(k1=float(pz["k1"]), k2=float(pz["k2"]), lam1=float(pz["lam1"]),
                            lam2=float(pz["lam2"]), knee=float(pz["knee"]))
        att = AttitudeGains(K_R=np.diag(_vec3(at["K_R"], "attitude.K_R")),
                            K_w=np.diag(_vec3(at["K_w"], "attitude.K_w")),
                            ell=float(at["ell"]), k_d=float(pl["k_d"]), eps=float(pl["eps"]),
                            scaling=at["scaling"], psi_M=at["psi_M"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    scenario = _scenario(raw["scenario"])
    theta_M = (veh.theta_M if pl["theta_M_deg"] is None else math.radians(pl["theta_M_deg"]))
    horizon = scenario.horizon if sm["horizon"] is None else float(sm["horizon"])
    win = sm["steady_window"]
    window = (max(0.0, horizon - 10.0), horizon) if win is None else (float(win[0]), float(win[1]))
    return SimConfig(
        raw=raw, name=str(raw["name"]), scenario=scenario, vehicle=veh, position=pos,
        attitude=att, planner_mode=pl["mode"], theta_M=theta_M,
        dw_r_method=pl["dw_r_method"], dt=float(sm["dt"]), horizon=horizon,
        seed=int(sm["seed"]), substeps=int(sm["substeps"]), scheme=sm["scheme"],
        x0=_vec3(sm["x0"], "sim.x0"), v0=_vec3(sm["v0"], "sim.v0"),
        R0=expm_so3(_vec3(sm["rotvec0"], "sim.rotvec0")), w0=_vec3(sm["w0"], "sim.w0"),
        steady_window=window, transient=float(sm["transient"]),
        bounded_after=float(sm["bounded_after"]), checkpoint_every=int(sm["checkpoint_every"]),
        ev_dot=sm["ev_dot"],
        output_dir=Path(out["dir"]), telemetry_name=out["telemetry"],
        summary_name=out["summary"],
    )


def load_config(source: str | Path | dict, overrides: dict | None = None) -> SimConfig:
    """Build a :class:`SimConfig` from a preset name, a YAML path or a mapping.

    A YAML file may name a preset under the top-level key ``preset``; its own
    keys then override the preset.
    """
    if isinstance(source, dict):
        user = copy.deepcopy(source)
    elif str(source) in PRESETS:
        user = {"preset": str(source)}
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"no preset or file named {str(source)!r}")
        user = yaml.safe_load(path.read_text()) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    raw = copy.deepcopy(DEFAULTS)
    preset = user.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw = _merge(raw, PRESETS[preset])
    raw = _merge(raw, user)
    if overrides:
        raw = _merge(raw, overrides)
    return build_config(raw)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=False)


# --------------------------------------------------------------------------
# validator chain


def validate(cfg: SimConfig) -> list[str]:
    """Run every validator in order; return the passed checks or raise.

    Raises:
        ConfigError: naming the first violated inequality.
    """
    passed: list[str] = []

    def check(cond: bool, label: str, detail: str) -> None:
        if not cond:
            raise ConfigError(f"{label} violated: {detail}")
        passed.append(label)

    try:
        cfg.vehicle.validate()
    except ValueError as exc:
        raise ConfigError(f"vehicle parameters: {exc}") from exc
    passed.append("vehicle parameters")
    check(cfg.dt > 0.0, "dt > 0", f"dt={cfg.dt}")
    check(cfg.substeps >= 1, "substeps >= 1", f"substeps={cfg.substeps}")
    check(cfg.scheme in ("rkmk4", "rk4_matrix"), "integration scheme", repr(cfg.scheme))
    check(0.0 < cfg.horizon <= cfg.scenario.horizon + 1e-12, "0 < horizon <= scenario horizon",
          f"{cfg.horizon} vs {cfg.scenario.horizon}")
    w0, w1 = cfg.steady_window
    check(0.0 <= w0 < w1 <= cfg.horizon + 1e-12, "steady window inside the horizon",
          f"{cfg.steady_window}")
    check(cfg.ev_dot in ("accelerometer", "model"), "ev_dot source", repr(cfg.ev_dot))
    check(cfg.planner_mode in ("static", "dynamic"), "planner mode", repr(cfg.planner_mode))
    check(cfg.dw_r_method in ("analytic", "backward"), "dw_r method", repr(cfg.dw_r_method))

    bounds = scenario_bounds(cfg.scenario, cfg.vehicle.m, dt=0.01)
    check(bounds.f_ss_min > 0.0, "inf |f_ss| > 0 (bounded, non-degenerate reference)",
          f"inf |f_ss| = {bounds.f_ss_min:.6g}")
    check(math.isfinite(bounds.f_ss_max), "sup |f_ss| < inf", f"{bounds.f_ss_max}")
    try:
        cfg.position.validate(vertical_margin=bounds.vertical_margin)
    except ValueError as exc:
        raise ConfigError(f"lam2 < inf m|g + a_d3| violated or bad gains: {exc}") from exc
    passed.append(f"lam2 = {cfg.position.lam2} < inf m|g + a_d3| = {bounds.vertical_margin:.4g}")
    try:
        cfg.attitude.validate()
    except (ValueError, SO3Error) as exc:
        raise ConfigError(f"attitude gains: {exc}") from exc
    passed.append("ell > 2, tr(K_R) I - K_R > 0, K_w > 0")

    if cfg.planner_mode == "dynamic":
        check(cfg.vehicle.alpha != 0.0, "dynamic planner needs tilted rotors", "alpha = 0")
        check(abs(cfg.theta_M - cfg.vehicle.theta_M) <= 1e-12,
              "theta_M = sigma * alpha",
              f"theta_M={math.degrees(cfg.theta_M):.6g} deg, sigma*alpha="
              f"{math.degrees(cfg.vehicle.theta_M):.6g} deg")
        check(0.0 < cfg.theta_M < math.pi / 2, "0 < theta_M < 90 deg",
              f"{math.degrees(cfg.theta_M)}")
        check(numerical_rank(mixer_matrix(cfg.vehicle), RANK_TOL) == 6, "rank M(alpha) = 6",
              "mixer is rank deficient for the configured alpha")
    return passed


def validated(cfg: SimConfig) -> SimConfig:
    cfg.checks = validate(cfg)
    return cfg
