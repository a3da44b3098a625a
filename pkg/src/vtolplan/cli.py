"""Command-line entry point: ``vtolplan sim|check|props|plot``.

Exit codes: 0 success, 1 a property suite failed or the run aborted, 2 the
configuration was rejected, 3 bad plot input. ``VTOLPLAN_OUT`` overrides the
output directory of every subcommand.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, dump_config, load_config, validated
from .planner import ConeFault, HeadingSingularity
from .plotting import SELECTORS, PlotError, plot, plot_all
from .position import GainError
from .properties import DEFAULT_COUNTS, run_property_suite
from .sim import check_trajectory, run_sim, trackability_summary, write_outputs
from .vehicle import IntegrationError

ENV_OUT = "VTOLPLAN_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INPUT = 0, 1, 2, 3

log = logging.getLogger("vtolplan")


def _out_dir(default: Path) -> Path:
    env = os.environ.get(ENV_OUT)
    return Path(env) if env else Path(default)


def _load(source: str, seed: int | None):
    cfg = load_config(source, {"sim": {"seed": seed}} if seed is not None else None)
    return validated(cfg)


def _cmd_sim(a) -> int:
    cfg = _load(a.config, a.seed)
    for c in cfg.checks:
        log.info("ok: %s", c)
    res = run_sim(cfg, validate_first=False)
    out = _out_dir(cfg.output_dir)
    csv_path, json_path = write_outputs(res, out)
    (out / "config.yaml").write_text(dump_config(cfg))
    if a.plots:
        plot_all(csv_path, out)
    print(json.dumps(res.summary, indent=2, sort_keys=True))
    log.info("wrote %s and %s", csv_path, json_path)
    return EXIT_OK


def _cmd_check(a) -> int:
    cfg = _load(a.config, None)
    rep = trackability_summary(check_trajectory(cfg))
    rep["validators"] = cfg.checks
    out = _out_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(rep, indent=2, sort_keys=True)
    (out / "trackability.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_props(a) -> int:
    counts = {k: max(1, v // 10) for k, v in DEFAULT_COUNTS.items()} if a.quick else None
    cfg = validated(load_config(a.config))
    rep = run_property_suite(a.seed, counts=counts, cfg=cfg, workers=a.workers)
    out = _out_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "properties.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    for s in rep["suites"]:
        print(f"{'PASS' if s['passed'] else 'FAIL'} {s['name']}: "
              f"{s['violations']}/{s['samples']} violations")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def _cmd_plot(a) -> int:
    csv_path = Path(a.csv)
    if not csv_path.is_file():
        raise PlotError(f"no telemetry file {csv_path}")
    out_dir = Path(os.environ[ENV_OUT]) if os.environ.get(ENV_OUT) else csv_path.parent
    if a.selector == "all":
        paths = plot_all(csv_path, out_dir)
    else:
        paths = [plot(csv_path, a.selector, out_dir / f"{a.selector}.svg",
                      theta_M_deg=a.theta_M)]
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vtolplan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log validator results")
    sub = ap.add_subparsers(dest="cmd", required=True)
    cfg_help = f"preset ({', '.join(PRESETS)}) or YAML file"

    p = sub.add_parser("sim", help="run a closed-loop simulation")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plots", action="store_true", help="also render every SVG figure")
    p.set_defaults(fn=_cmd_sim)

    p = sub.add_parser("check", help="validate a config and report trackability")
    p.add_argument("config", help=cfg_help)
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("props", help="run the randomized property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default="B", help=cfg_help)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quick", action="store_true", help="a tenth of the default samples")
    p.set_defaults(fn=_cmd_props)

    p = sub.add_parser("plot", help="render an SVG figure from telemetry")
    p.add_argument("csv")
    p.add_argument("selector", choices=SELECTORS + ("all",))
    p.add_argument("--theta-M", dest="theta_M", type=float, default=None,
                   help="cone half-angle in deg for the cone figure")
    p.set_defaults(fn=_cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except ConfigError as exc:
        print(f"configuration rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlotError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, ConeFault, HeadingSingularity, GainError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
