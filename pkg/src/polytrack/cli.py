"""Command-line front end: synth, run, compare, report.

Exit codes are stable contracts: 0 success, 1 configuration error,
2 synthesis/solve failure, 3 episode failure, 64 usage error.  All
randomness flows from the explicit --seed; log level comes from the
POLYTRACK_LOG environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .config import (CONTROLLER_NAMES, ConfigError, emit_config, load_config,
                     make_controller)
from .sim import metrics, run_closed_loop
from .switched import (RegionSynthesisError, ScheduleFileError, load_schedule,
                       save_schedule, synthesize_schedule)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVE = 2
EXIT_EPISODE = 3
EXIT_USAGE = 64

COMPARE_COLUMNS = ("controller", "scenario", "corner", "rms_ey", "max_ey",
                   "rms_epsi", "control_energy", "switch_count",
                   "infeasible_steps", "failed")

CORNERS = ("nominal", "--", "-+", "+-", "++")

log = logging.getLogger("polytrack.cli")


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(EXIT_USAGE)


def _setup_logging():
    level = os.environ.get("POLYTRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _schedule_path(cfg, out_dir):
    return os.path.join(out_dir or cfg.output_dir, "gain_schedule.txt")


def corner_scales(cfg, corner):
    """Stiffness scale pair realizing a named uncertainty corner."""
    p = cfg.params
    table = {
        "nominal": (1.0, 1.0),
        "--": (1.0 - p.dCf, 1.0 - p.dCr),
        "-+": (1.0 - p.dCf, 1.0 + p.dCr),
        "+-": (1.0 + p.dCf, 1.0 - p.dCr),
        "++": (1.0 + p.dCf, 1.0 + p.dCr),
    }
    if corner not in table:
        raise ConfigError(f"unknown corner {corner!r}")
    return table[corner]


def cmd_synth(args):
    cfg = load_config(args.config)
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        schedule = synthesize_schedule(cfg.params, cfg.switched,
                                       regions=cfg.regions,
                                       arbitrary=cfg.arbitrary_switching)
    except RegionSynthesisError as exc:
        print(f"synthesis failed: region {exc.region_index} infeasible at "
              f"rho={exc.rho} (binding constraint class: {exc.binding})",
              file=sys.stderr)
        return EXIT_SOLVE
    path = _schedule_path(cfg, args.out)
    save_schedule(schedule, path)
    print(f"gain schedule written to {path}")
    print(f"mu={schedule.cert.mu:.6g} dwell_steps={schedule.cert.dwell_steps} "
          f"arbitrary_switching={int(schedule.cert.arbitrary_switching_ok)}")
    for region, gains in zip(schedule.regions, schedule.gains):
        print(f"region {region.index} [{region.v_lo:g}, {region.v_hi:g}] m/s: "
              f"solved (trace Q = {float(gains.Q.trace()):.6g})")
    return EXIT_OK


def _config_hash(cfg, scenario):
    text = emit_config(cfg) + f"|{scenario.name}|{scenario.cf_scale}|{scenario.cr_scale}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _run_episode(cfg, controller_name, scenario, seed, out_dir):
    schedule = None
    if controller_name == "switched-lpv":
        schedule = load_schedule(_schedule_path(cfg, out_dir),
                                 expect_params=cfg.params)
    controller = make_controller(cfg, controller_name, schedule=schedule,
                                 scenario=scenario)
    return run_closed_loop(scenario, controller, seed=seed, Ts=cfg.Ts,
                           config_hash=_config_hash(cfg, scenario))


def _metrics_line(m):
    parts = []
    for key in ("rms_ey", "max_ey", "rms_epsi", "max_delta", "control_energy"):
        parts.append(f"{key}={m[key]:.9g}")
    parts.append(f"switch_count={m['switch_count']}")
    parts.append(f"infeasible_steps={m['infeasible_steps']}")
    parts.append(f"failed={int(m['failed'])}")
    return " ".join(parts)


def cmd_run(args):
    cfg = load_config(args.config)
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    scenario = (cfg.scenario_named(args.scenario) if args.scenario
                else cfg.scenario)
    try:
        logbook = _run_episode(cfg, args.controller, scenario, args.seed, args.out)
    except (ScheduleFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    if cfg.emit_csv:
        csv_path = os.path.join(
            out_dir, f"episode_{args.controller}_{scenario.name}_{args.seed}.csv")
        logbook.write_csv(csv_path)
        print(f"episode log written to {csv_path}")
    m = metrics(logbook)
    print(_metrics_line(m))
    if logbook.failed:
        print(f"episode failed: {logbook.failure_reason}", file=sys.stderr)
        return EXIT_EPISODE
    return EXIT_OK


def _compare_job(job):
    """Worker entry point; reloads the config so jobs pickle cheaply."""
    config_path, controller_name, scenario_name, corner, seed, out_dir = job
    cfg = load_config(config_path)
    scenario = cfg.scenario_named(scenario_name)
    cf, cr = corner_scales(cfg, corner)
    scenario = dataclasses.replace(scenario, cf_scale=cf, cr_scale=cr)
    try:
        logbook = _run_episode(cfg, controller_name, scenario, seed, out_dir)
        m = metrics(logbook)
    except Exception as exc:  # any worker failure becomes a failed row
        log.warning("compare job %s/%s/%s failed: %s", controller_name,
                    scenario_name, corner, exc)
        m = {"rms_ey": math.nan, "max_ey": math.nan, "rms_epsi": math.nan,
             "max_delta": math.nan, "control_energy": math.nan,
             "switch_count": 0, "infeasible_steps": 0, "failed": True}
    return (controller_name, scenario_name, corner), m


def cmd_compare(args):
    cfg = load_config(args.config)
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    controllers = args.controllers.split(",") if args.controllers else []
    controllers = [c.strip() for c in controllers if c.strip()]
    if not controllers:
        print("error: no controllers given", file=sys.stderr)
        return EXIT_USAGE
    for c in controllers:
        if c not in CONTROLLER_NAMES:
            print(f"error: unknown controller {c!r}", file=sys.stderr)
            return EXIT_USAGE
    scenario_names = (args.scenarios.split(",") if args.scenarios
                      else sorted(cfg.scenarios))
    scenario_names = [s.strip() for s in scenario_names if s.strip()]
    corners = args.corners.split(",") if args.corners else list(CORNERS)

    jobs = [(args.config, c, s, corner, args.seed, args.out)
            for c in controllers for s in scenario_names for corner in corners]
    results = {}
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for key, m in pool.map(_compare_job, jobs):
                results[key] = m
    else:
        for job in jobs:
            key, m = _compare_job(job)
            results[key] = m

    rows = []
    for c in controllers:
        for s in scenario_names:
            for corner in corners:
                m = results[(c, s, corner)]
                rows.append([c, s, corner,
                             f"{m['rms_ey']:.9g}", f"{m['max_ey']:.9g}",
                             f"{m['rms_epsi']:.9g}", f"{m['control_energy']:.9g}",
                             str(m["switch_count"]), str(m["infeasible_steps"]),
                             str(int(m["failed"]))])
    table_path = os.path.join(out_dir, "compare.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        writer.writerows(rows)
    print(f"comparison table written to {table_path} ({len(rows)} rows)")
    if rows and all(r[-1] == "1" for r in rows):
        print("error: every episode failed", file=sys.stderr)
        return EXIT_EPISODE
    return EXIT_OK


def cmd_report(args):
    try:
        with open(args.table) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except (OSError, StopIteration) as exc:
        print(f"error: cannot read table {args.table}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="polytrack",
                     description="Path-following control laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize the switched gain schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run one closed-loop episode")
    p.add_argument("--config", required=True)
    p.add_argument("--controller", required=True, choices=CONTROLLER_NAMES)
    p.add_argument("--scenario", default=None, help="named scenario variant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run the controller/scenario/corner matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--controllers", required=True,
                   help="comma-separated controller names")
    p.add_argument("--scenarios", default=None,
                   help="comma-separated scenario names (default: all)")
    p.add_argument("--corners", default=None,
                   help="comma-separated corners out of " + ",".join(CORNERS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render a comparison table")
    p.add_argument("table", help="compare.csv produced by the compare command")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return exc.code
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegionSynthesisError as exc:
        print(f"synthesis error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
