"""
Regenerate every bundled figure family (CSV + SVG per sweep) into the next
free 'Sample N' folder.

Usage:
  python figure_samples.py                          # all bundled sweeps
  python figure_samples.py --output-dir /path/to/dir  # custom base folder
  python figure_samples.py --only sweep_depth --grid-n 256
"""

import argparse
import glob
import logging
import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from report_engine import emit_outputs
from scenario import apply_overrides
from shared import RbcError, next_run_dir
from sweep_engine import load_sweep, load_sweep_scenario, run_sweep

_SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
SCENARIO_DIR = os.path.join(_SCRIPT_DIR, "scenarios")
_DEFAULT_OUTPUT = os.environ.get("RBC_OUTPUT_DIR", os.path.expanduser("~/rbc_output"))


def bundled_sweeps():
    return sorted(glob.glob(os.path.join(SCENARIO_DIR, "sweep_*.toml")))


def main():
    parser = argparse.ArgumentParser(description="Regenerate the bundled figure families")
    parser.add_argument("--output-dir", default=_DEFAULT_OUTPUT, help="Base output directory")
    parser.add_argument("--only", nargs="*", default=None, help="Sweep names to run (file stems)")
    parser.add_argument("--grid-n", type=int, default=None, help="Override grid samples per side")
    parser.add_argument("--format", default="both", choices=("csv", "plot", "both", "xlsx"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    sweeps = bundled_sweeps()
    if args.only:
        sweeps = [s for s in sweeps if os.path.splitext(os.path.basename(s))[0] in args.only]
    if not sweeps:
        print("No sweeps selected.")
        return 1

    out_dir = next_run_dir(args.output_dir)
    print(f"Output folder: {out_dir}")

    failures = 0
    for path in sweeps:
        name = os.path.splitext(os.path.basename(path))[0]
        print(f"\n{'='*50}")
        print(f"{name}")
        print(f"{'='*50}")
        start = time.time()
        try:
            sweep = load_sweep(path)
            scenario = apply_overrides(load_sweep_scenario(sweep), grid_n=args.grid_n)
            table = run_sweep(scenario, sweep)
            for written in emit_outputs(table, args.format, out_dir):
                print(f"  -> {written}")
        except RbcError as e:
            failures += 1
            print(f"  FAILED: {e}")
            continue
        print(f"  {len(table.rows)} rows in {time.time() - start:.1f} s")

    print(f"\nDone! Output saved to {out_dir}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
