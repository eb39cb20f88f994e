"""
Shared utilities used across multiple modules of the RBC channel simulator.

Holds the error hierarchy, filename sanitising, numbered run folders and the
zip bundling used by the report engine and the sample generator.
"""

import os
import re
import zipfile
from io import BytesIO


# ── Errors ───────────────────────────────────────────────────────

class RbcError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(RbcError, ValueError):
    """Invalid grid, profile, shift or channel specification."""


class DomainError(RbcError, ValueError):
    """Value outside the domain of a physical formula."""


class GeometryError(RbcError, ValueError):
    """IRS placement the beam cannot follow."""


class DegenerateModeError(RbcError):
    """Mode carries no power, efficiencies are undefined."""


class AllocationStateError(RbcError):
    """Split optimisation requested before both channels were solved."""


class OutputError(RbcError, OSError):
    """Output path cannot be written."""


class ScenarioError(RbcError):
    """Scenario/sweep file problem, rendered as ``path:line: key: message``."""

    def __init__(self, message, path=None, line=None, key=None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line
        self.key = key

    def __str__(self):
        where = ""
        if self.path:
            where = str(self.path)
            if self.line:
                where += f":{self.line}"
            where += ": "
        if self.key:
            where += f"{self.key}: "
        return where + self.message


class ScenarioSyntaxError(ScenarioError):
    pass


class MissingFieldError(ScenarioError):
    pass


class UnknownKeyError(ScenarioError):
    pass


class UnitError(ScenarioError):
    pass


class RangeError(ScenarioError):
    pass


# ── Filenames & folders ──────────────────────────────────────────

def sanitize_filename(name):
    """Replace spaces and unsafe characters for use in filenames."""
    return re.sub(r"[^\w\-.]", "_", str(name)).strip("_")


def next_run_dir(base_dir, prefix="Sample"):
    """Find the next '<prefix> N' folder number and create it."""
    os.makedirs(base_dir, exist_ok=True)
    existing = [
        d for d in os.listdir(base_dir)
        if os.path.isdir(os.path.join(base_dir, d)) and d.startswith(prefix + " ")
    ]
    nums = []
    for d in existing:
        try:
            nums.append(int(d.split(prefix + " ")[1]))
        except (ValueError, IndexError):
            pass
    next_num = max(nums, default=0) + 1
    run_dir = os.path.join(base_dir, f"{prefix} {next_num}")
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


# ── Bundling ─────────────────────────────────────────────────────

def zip_outputs(results):
    """Bundle a list of (filename, BytesIO) tuples into an in-memory zip."""
    zip_buf = BytesIO()
    with zipfile.ZipFile(zip_buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, buf in results:
            buf.seek(0)
            zf.writestr(name, buf.read())
    zip_buf.seek(0)
    return zip_buf


def write_outputs(results, out_dir):
    """Write (filename, BytesIO) tuples under out_dir; returns written paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output folder {out_dir}: {exc}") from exc
    written = []
    for name, buf in results:
        fpath = os.path.join(out_dir, name)
        buf.seek(0)
        try:
            with open(fpath, "wb") as f:
                f.write(buf.read())
        except OSError as exc:
            raise OutputError(f"cannot write {fpath}: {exc}") from exc
        written.append(fpath)
    return written
