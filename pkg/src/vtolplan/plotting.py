"""Static SVG figures from a telemetry CSV.

Output is byte-deterministic for a fixed input: the SVG hash salt is fixed
and the date metadata is suppressed.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import read_telemetry  # noqa: E402

SVG_SALT = "vtolplan"

# selector -> (title, y label, [(column, legend label)], scale)
_SERIES = {
    "err": ("Position error", "e_x [m]", [("ex_x", "x"), ("ex_y", "y"), ("ex_z", "z")], 1.0),
    "att": ("Inclination and heading", "angle [deg]",
            [("theta_v", "theta_v"), ("psi", "psi")], 180.0 / math.pi),
    "cone": ("Cone constraint", "angle [deg]",
             [("theta_n", "theta_n"), ("theta_c", "theta_c")], 180.0 / math.pi),
    "fc": ("Body force", "f_c [N]", [("fc_x", "x"), ("fc_y", "y"), ("fc_z", "z")], 1.0),
    "omega_p": ("Planner angular velocity", "w_p [rad/s]",
                [("wp_x", "x"), ("wp_y", "y"), ("wp_z", "z")], 1.0),
}
SELECTORS = tuple(_SERIES) + ("traj",)


class PlotError(ValueError):
    """Unknown selector or a telemetry file missing a required column."""


def _col(header, data, name: str):
    try:
        return data[:, header.index(name)]
    except ValueError:
        raise PlotError(f"unknown column {name!r} in telemetry") from None


def _theta_M_from_summary(csv_path: Path) -> float | None:
    js = csv_path.with_name("summary.json")
    if not js.exists():
        return None
    return json.loads(js.read_text()).get("theta_M_deg")


def plot(csv_path: str | Path, selector: str, out_path: str | Path | None = None,
         theta_M_deg: float | None = None) -> Path:
    """Render one figure; returns the SVG path (default: next to the CSV).

    Args:
        theta_M_deg: cone half-angle drawn by ``cone``; read from a sibling
            ``summary.json`` when omitted.

    Raises:
        PlotError: unknown selector or missing column.
    """
    if selector not in SELECTORS:
        raise PlotError(f"unknown selector {selector!r}; choose from {', '.join(SELECTORS)}")
    csv_path = Path(csv_path)
    header, data = read_telemetry(csv_path)
    out = Path(out_path) if out_path is not None else csv_path.with_name(f"{selector}.svg")
    plt.rcParams["svg.hashsalt"] = SVG_SALT
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    if selector == "traj":
        for name, lab in (("x", "x"), ("xd", "x_d")):
            ax.plot(_col(header, data, f"{name}_x"), _col(header, data, f"{name}_y"), label=lab)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title("Horizontal trajectory")
    else:
        title, ylab, series, scale = _SERIES[selector]
        t = _col(header, data, "t")
        for name, lab in series:
            ax.plot(t, scale * _col(header, data, name), label=lab)
        if selector == "cone":
            th = theta_M_deg if theta_M_deg is not None else _theta_M_from_summary(csv_path)
            if th is not None:
                ax.axhline(th, color="k", linestyle="--", label="theta_M")
        ax.set_xlabel("t [s]")
        ax.set_ylabel(ylab)
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def plot_all(csv_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    d = Path(out_dir) if out_dir is not None else Path(csv_path).parent
    return [plot(csv_path, s, d / f"{s}.svg") for s in SELECTORS]


__all__ = ["plot", "plot_all", "PlotError", "SELECTORS"]
