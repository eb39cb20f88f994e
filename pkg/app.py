"""
RBC channel simulator – command-line entry point.

Usage:
  python app.py validate --scenario scenarios/baseline.toml
  python app.py run --scenario scenarios/baseline.toml --channel optimized --out out/
  python app.py sweep --sweep scenarios/sweep_distance.toml --out out/ --format both
  python app.py sweep --sweep scenarios/sweep_depth.toml --format xlsx --zip --grid-n 256

Exit codes: 0 success, 1 usage/parse/output error, 2 solver did not converge (run).
"""

import argparse
import logging
import sys

from report_engine import FORMATS, emit_outputs, render_mode_png
from scenario import apply_overrides, load_scenario
from shared import RbcError, write_outputs
from sweep_engine import (
    CHANNEL_MODES, COLUMNS, SweepTable,
    load_sweep, load_sweep_scenario, run_point, run_sweep, validate_sweep_domain,
)

_log = logging.getLogger("rbc")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-n", type=int, default=None, help="Override grid samples per side")
    common.add_argument("--seed", type=int, default=None, help="Override the seed-field seed")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")

    parser = _Parser(description="Resonant-beam channel simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", parents=[common], help="Single evaluation of a scenario")
    p_run.add_argument("--scenario", required=True, help="Scenario TOML file")
    p_run.add_argument("--channel", choices=CHANNEL_MODES, default="optimized",
                       help="Channel(s) to solve")
    p_run.add_argument("--out", default=None, help="Folder for the row CSV and mode images")

    p_sweep = sub.add_parser("sweep", parents=[common], help="Parameter sweep")
    p_sweep.add_argument("--sweep", required=True, help="Sweep TOML file")
    p_sweep.add_argument("--scenario", default=None, help="Scenario TOML (default: from the sweep file)")
    p_sweep.add_argument("--out", default=".", help="Output folder")
    p_sweep.add_argument("--format", choices=FORMATS, default="csv", help="Output format")
    p_sweep.add_argument("--zip", action="store_true", help="Bundle outputs into one zip")
    p_sweep.add_argument("--no-cache", action="store_true", help="Do not reuse solved channels")

    p_val = sub.add_parser("validate", parents=[common], help="Parse scenario/sweep files only")
    p_val.add_argument("--scenario", default=None, help="Scenario TOML file")
    p_val.add_argument("--sweep", default=None, help="Sweep TOML file")
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


# ── Subcommands ──────────────────────────────────────────────────

def cmd_validate(args):
    if not args.scenario and not args.sweep:
        print("validate: give --scenario and/or --sweep", file=sys.stderr)
        return EXIT_USAGE
    scenario = None
    if args.sweep:
        sweep = load_sweep(args.sweep)
        print(f"Sweep OK: {sweep.variable} {sweep.start:g} -> {sweep.stop:g} ({sweep.count} points, {sweep.channel})")
        if args.scenario or sweep.scenario_path:
            scenario = apply_overrides(load_sweep_scenario(sweep, args.scenario), args.grid_n, args.seed)
            validate_sweep_domain(scenario, sweep)
    elif args.scenario:
        scenario = apply_overrides(load_scenario(args.scenario), args.grid_n, args.seed)
    if scenario is not None:
        print(f"Scenario OK: {scenario.name}")
        for key, value in scenario.describe().items():
            print(f"  {key:22s} {value}")
    return EXIT_OK


def cmd_run(args):
    scenario = apply_overrides(load_scenario(args.scenario), args.grid_n, args.seed)
    row, solutions = run_point(scenario, args.channel)
    print(f"Scenario: {scenario.name} ({args.channel})")
    for key in COLUMNS[1:]:
        print(f"  {key:14s} {row[key]}")

    if args.out:
        table = SweepTable(columns=COLUMNS, rows=[{"sweep_value": scenario.distance_z, **row}],
                           variable="z", name=f"{scenario.name}_run")
        emit_outputs(table, "csv", args.out)
        images = [(f"{scenario.name}_{kind}_mode.png", render_mode_png(result.mode))
                  for kind, result in solutions.items() if kind in ("direct", "irs")]
        for path in write_outputs(images, args.out):
            print(f"  wrote {path}")

    if row["status"] != "converged":
        print("Solver did not converge.", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(args):
    sweep = load_sweep(args.sweep)
    scenario = apply_overrides(load_sweep_scenario(sweep, args.scenario), args.grid_n, args.seed)
    validate_sweep_domain(scenario, sweep)
    print(f"Sweep {sweep.name}: {sweep.variable} over {sweep.count} points ({sweep.channel})")
    table = run_sweep(scenario, sweep, cache=not args.no_cache)
    for path in emit_outputs(table, args.format, args.out, bundle=args.zip):
        print(f"  wrote {path}")
    failed = sum(1 for row in table.rows if row["status"] != "converged")
    if failed:
        print(f"  {failed} point(s) did not converge (see status column)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except RbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
