"""
RBC channel simulator – sweep engine module

Runs single evaluations and one-variable parameter sweeps over a Scenario.

Sweep file ([sweep] table, TOML):
  variable    z | d | dx | dy | theta_y | P_i | l_s | gamma | z_o
              (aliases Δx, Δy, θ_y, γ)
  start/stop  quantity strings or numbers (SI)
  count       int >= 2
  channel     direct | irs | both | optimized
  scenario    optional path of the scenario file, relative to the sweep file
  y_columns   optional list of columns to plot
Optional tables:
  [series]    variable, values: one table row block per series value
  [fixed]     sweep variables pinned before sweeping (e.g. d = "1 mm")

Every distinct channel is solved once (keyed by its canonical description)
in a process pool sized by RBC_WORKERS; rows are assembled in sweep order.
Solved channels and calibrated scenarios are kept in least-recently-used
caches of RBC_CACHE_SIZE entries (default 64) and RBC_CACHE_SIZE // 8.
"""

from __future__ import annotations

import json
import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from allocator import AllocationInputs, optimize_gamma
from cavity_solver import Obstruction, solve_channel
from comm_metrics import link_metrics, required_power
from optics_ops import MisalignmentSpec, irs_path_lengths
from power_model import ChannelEfficiencies, calibrate_laser, solve_power_budget
from scenario import load_scenario, key_line, parse_quantity
from shared import (
    ConfigurationError, ScenarioError, ScenarioSyntaxError, MissingFieldError, UnknownKeyError,
    RangeError,
)

_log = logging.getLogger(__name__)


# ── Variables ────────────────────────────────────────────────────

SWEEP_VARIABLES = {
    # name: (unit, label)
    "z": ("m", "distance z (m)"),
    "d": ("m", "obstruction depth d (m)"),
    "dx": ("m", "translation Δx (m)"),
    "dy": ("m", "translation Δy (m)"),
    "theta_y": ("rad", "rotation θ_y (rad)"),
    "P_i": ("W", "pump power P_i (W)"),
    "l_s": ("m", "SHG thickness l_s (m)"),
    "gamma": ("", "split ratio γ"),
    "z_o": ("", "obstruction position z_o"),
}
ALIASES = {"Δx": "dx", "Δy": "dy", "θ_y": "theta_y", "γ": "gamma", "distance_z": "z"}
CHANNEL_MODES = ("direct", "irs", "both", "optimized")

COLUMNS = [
    "sweep_value", "eta_direct", "eta_irs", "P_o", "P_o_2v", "P_oc_d", "P_oc_i",
    "gamma_opt", "P_oc", "SNR_dB", "SE_bps_hz", "status", "capacity_bps", "P_t_2v", "eta_S",
]
SWEEP_KEYS = {"variable", "start", "stop", "count", "channel", "scenario", "y_columns"}
DEFAULT_Y_COLUMNS = {
    "direct": ["eta_direct", "P_o"],
    "irs": ["eta_irs", "P_o"],
    "both": ["P_oc_d", "P_oc_i", "P_oc"],
    "optimized": ["P_oc", "gamma_opt"],
}

DEFAULT_CACHE_SIZE = 64
LENS_SCALE = (0.5, 2.4)
PLACEMENT_SCALE = (0.25, 3.0)
APERTURE_FILL = 0.6        # largest fitted radius, as a fraction of the grid half-width
GEOMETRY_XTOL = 1e-3

_SOLUTION_CACHE = OrderedDict()
_CALIBRATION_CACHE = OrderedDict()


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    start: float
    stop: float
    count: int
    channel: str = "direct"
    series_variable: str | None = None
    series_values: tuple = ()
    fixed: dict = field(default_factory=dict)
    y_columns: tuple = ()
    scenario_path: str | None = None
    name: str = "sweep"

    @property
    def values(self):
        return np.linspace(self.start, self.stop, self.count)

    @property
    def label(self):
        return SWEEP_VARIABLES[self.variable][1]

    def plot_columns(self):
        return list(self.y_columns) or DEFAULT_Y_COLUMNS[self.channel]


@dataclass
class SweepTable:
    columns: list
    rows: list
    variable: str
    series_variable: str | None = None
    name: str = "sweep"
    y_columns: list = field(default_factory=list)
    x_label: str = ""

    def column(self, name):
        return [row[name] for row in self.rows]


# ── Variable application ─────────────────────────────────────────

def canonical_variable(name):
    name = ALIASES.get(name, name)
    if name not in SWEEP_VARIABLES:
        raise ConfigurationError(f"unknown sweep variable {name!r}")
    return name


def check_value(scenario, variable, value):
    """Physical domain of each sweep variable; raises ConfigurationError."""
    r_B = scenario.obstruction.radius_B if scenario.obstruction else Obstruction().radius_B
    checks = {
        "z": (value > 0, "z must be > 0"),
        "d": (0.0 <= value <= r_B, f"d must lie in [0, r_B] = [0, {r_B:g}] m"),
        "dx": (abs(value) < scenario.grid.half_width / 2, "|Δx| must stay below half_width/2"),
        "dy": (abs(value) < scenario.grid.half_width / 2, "|Δy| must stay below half_width/2"),
        "theta_y": (abs(value) < math.pi / 2, "|θ_y| must stay below 90 deg"),
        "P_i": (value >= 0, "P_i must be >= 0"),
        "l_s": (value > 0, "l_s must be > 0"),
        "gamma": (0.0 <= value <= 1.0, "γ must lie in [0, 1]"),
        "z_o": (0.0 < value < 1.0, "z_o must lie in (0, 1)"),
    }
    ok, message = checks[variable]
    if not ok:
        raise ConfigurationError(f"{message}, got {value:g}")


def apply_variable(scenario, variable, value):
    """Scenario with one sweep variable set."""
    check_value(scenario, variable, value)
    mis = scenario.misalignment or MisalignmentSpec()
    ob = scenario.obstruction or Obstruction()
    if variable == "z":
        irs = scenario.irs
        if irs is not None:
            scale = value / sum(irs_path_lengths(irs))
            irs = replace(irs, D_x_i=irs.D_x_i * scale, D_x_r=irs.D_x_r * scale)
        return scenario.with_(distance_z=value, irs=irs)
    if variable == "d":
        return scenario.with_(obstruction=replace(ob, depth_d=value))
    if variable == "z_o":
        return scenario.with_(obstruction=replace(ob, position=value))
    if variable == "dx":
        return scenario.with_(misalignment=replace(mis, dx=value))
    if variable == "dy":
        return scenario.with_(misalignment=replace(mis, dy=value))
    if variable == "theta_y":
        return scenario.with_(misalignment=replace(mis, rotation=(("y", value),)))
    if variable == "P_i":
        return scenario.with_(laser=scenario.laser.with_(P_i=value))
    if variable == "l_s":
        return scenario.with_(crystal=replace(scenario.crystal, l_s=value))
    return scenario.with_(gamma=value)


# ── Solving ──────────────────────────────────────────────────────

def channel_key(spec, seed, tol, max_round_trips):
    """Canonical JSON of everything that determines a steady state."""
    payload = {"spec": asdict(spec), "seed": seed, "tol": tol, "max": max_round_trips}
    return json.dumps(payload, sort_keys=True, default=str)


def _solve_job(job):
    spec, seed, tol, max_round_trips = job
    return solve_channel(spec, seed=seed, tol=tol, max_round_trips=max_round_trips)


def pool_size():
    env = os.environ.get("RBC_WORKERS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            _log.warning("ignoring RBC_WORKERS=%r (not an integer)", env)
    return os.cpu_count() or 1


def cache_size():
    env = os.environ.get("RBC_CACHE_SIZE", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            _log.warning("ignoring RBC_CACHE_SIZE=%r (not an integer)", env)
    return DEFAULT_CACHE_SIZE


def _remember(cache, key, value, size):
    cache[key] = value
    cache.move_to_end(key)
    while len(cache) > size:
        cache.popitem(last=False)


def solve_many(jobs, workers=None, cache=True):
    """{key: SteadyStateResult} for (key, spec, seed, tol, max) jobs, solving each key once."""
    results = {}
    pending = []
    for key, spec, seed, tol, max_rt in jobs:
        if key in results or any(key == p[0] for p in pending):
            continue
        if cache and key in _SOLUTION_CACHE:
            _log.debug("cache hit for %s channel", spec.kind)
            _SOLUTION_CACHE.move_to_end(key)
            results[key] = _SOLUTION_CACHE[key]
            continue
        pending.append((key, (spec, seed, tol, max_rt)))

    workers = workers or pool_size()
    if pending:
        _log.info("solving %d distinct channel(s) with %d worker(s)", len(pending), min(workers, len(pending)))
    if len(pending) > 1 and workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(pending))) as pool:
            solved = list(pool.map(_solve_job, [job for _, job in pending]))
    else:
        solved = [_solve_job(job) for _, job in pending]

    size = cache_size()
    for (key, _), result in zip(pending, solved):
        results[key] = result
        if cache:
            _remember(_SOLUTION_CACHE, key, result, size)
    return results


def clear_cache():
    _SOLUTION_CACHE.clear()
    _CALIBRATION_CACHE.clear()


def _required_kinds(channel):
    if channel == "direct":
        return ("direct",)
    if channel == "irs":
        return ("irs",)
    return ("direct", "irs")


def _job(scenario, spec):
    return (channel_key(spec, scenario.seed, scenario.tol, scenario.max_round_trips),
            spec, scenario.seed, scenario.tol, scenario.max_round_trips)


def _jobs_for(scenario, channel):
    jobs = {kind: _job(scenario, scenario.channel_spec(kind)) for kind in _required_kinds(channel)}
    if channel == "optimized" and scenario.obstruction is not None and scenario.obstruction.depth_d > 0:
        flush = replace(scenario.obstruction, depth_d=0.0)
        jobs["direct_bound"] = _job(scenario, scenario.with_(obstruction=flush).channel_spec("direct"))
    return jobs


# ── Calibration ──────────────────────────────────────────────────

def _solve_one(scenario, kind, workers, cache):
    job = _job(scenario, scenario.channel_spec(kind))
    return solve_many([job], workers, cache)[job[0]]


def _fit_factor(evaluate, lo, hi, target, label):
    """(factor, reached) with evaluate(factor) = target on [lo, hi]; evaluate is monotone."""
    memo = {}

    def residual(k):
        if k not in memo:
            memo[k] = evaluate(k) - target
        return memo[k]

    r_lo, r_hi = residual(lo), residual(hi)
    if r_lo * r_hi > 0:
        best = lo if abs(r_lo) <= abs(r_hi) else hi
        _log.warning("%s target %.4f is unreachable on [%g, %g]; using %g", label, target, lo, hi, best)
        return best, False
    return float(brentq(residual, lo, hi, xtol=GEOMETRY_XTOL)), True


def _with_lens_scale(scenario, k):
    return scenario.with_(tx=replace(scenario.tx, r_L=scenario.tx.r_L * k),
                          rx=replace(scenario.rx, r_L=scenario.rx.r_L * k))


def _with_gain_scale(scenario, k):
    return scenario.with_(tx=replace(scenario.tx, r_G=scenario.tx.r_G * k))


def _with_placement_scale(scenario, k):
    irs = scenario.irs
    return scenario.with_(irs=replace(irs, D_x_i=irs.D_x_i * k, D_x_r=irs.D_x_r * k))


def fit_geometry(point, eta_direct=None, eta_irs=None, workers=None, cache=True):
    """Calibration point whose optics reproduce the end-to-end efficiency targets.

    Both cat's-eye lens radii are scaled together first; when the direct target
    stays out of reach the gain aperture is scaled on top of the best lens. The
    two IRS legs are then stretched or shortened together for the IRS target.
    """
    if eta_direct is not None:
        knobs = (
            ("lens radius", _with_lens_scale, max(point.tx.r_L, point.rx.r_L)),
            ("gain aperture", _with_gain_scale, point.tx.r_G),
        )
        for label, scale, radius in knobs:
            lo, hi = LENS_SCALE
            hi = max(lo, min(hi, APERTURE_FILL * point.grid.half_width / radius))
            base = point

            def direct_eta(k, scale=scale, base=base):
                return _solve_one(scale(base, k), "direct", workers, cache).e2e_efficiency

            factor, reached = _fit_factor(direct_eta, lo, hi, eta_direct, f"eta_direct ({label})")
            point = scale(base, factor)
            _log.info("fitted %s scale %.4f", label, factor)
            if reached:
                break

    if eta_irs is not None and point.irs is not None:
        base = point

        def irs_eta(k):
            return _solve_one(_with_placement_scale(base, k), "irs", workers, cache).e2e_efficiency

        factor, _ = _fit_factor(irs_eta, *PLACEMENT_SCALE, eta_irs, "eta_irs (IRS placement)")
        point = _with_placement_scale(base, factor)
        _log.info("fitted IRS placement scale %.4f", factor)
    return point


def _calibration_key(scenario):
    return json.dumps(asdict(scenario), sort_keys=True, default=str)


def calibrated(scenario, workers=None, cache=True):
    """Scenario whose unstated constants were refit at the [calibration] point."""
    if not scenario.calibration:
        return scenario
    key = _calibration_key(scenario)
    if cache and key in _CALIBRATION_CACHE:
        _CALIBRATION_CACHE.move_to_end(key)
        return _CALIBRATION_CACHE[key]
    fitted = _calibrate(scenario, workers, cache)
    if cache:
        _remember(_CALIBRATION_CACHE, key, fitted, max(1, cache_size() // 8))
    return fitted


def _calibrate(scenario, workers, cache):
    cal = scenario.calibration
    point = scenario.with_(
        distance_z=cal["distance_z"], obstruction=None, misalignment=None,
        laser=scenario.laser.with_(P_i=cal["P_i"]),
    )
    point = fit_geometry(point, cal.get("eta_direct"), cal.get("eta_irs"), workers, cache)

    jobs = _jobs_for(point, "both")
    if cal.get("doubled_distance_z") is not None:
        jobs["doubled"] = _job(point, point.with_(distance_z=cal["doubled_distance_z"]).channel_spec("direct"))
    if cal.get("switch_depth") is not None:
        blocked = replace(scenario.obstruction or Obstruction(), depth_d=cal["switch_depth"])
        jobs["switch"] = _job(point, point.with_(obstruction=blocked).channel_spec("direct"))
    solved = solve_many(jobs.values(), workers, cache)
    eff = {kind: ChannelEfficiencies.from_mapping(solved[job[0]].segment_efficiencies)
           for kind, job in jobs.items()}

    targets = {k: cal[k] for k in ("P_o_direct", "P_threshold", "P_o_irs", "P_o_2v", "P_i_low", "P_o_2v_low")}
    if cal.get("SNR_dB") is not None:
        targets["P_oc"] = required_power(cal["SNR_dB"], scenario.detector)
        targets["l_s_signal"] = cal["snr_l_s"]
    fit = calibrate_laser(
        point.laser, point.crystal, eff["direct"], eff["irs"], targets, scenario.wavelength,
        doubled=eff.get("doubled"), switch=eff.get("switch"),
    )
    if not fit.reached:
        _log.warning("calibration of %r did not reach every target", scenario.name)
    return scenario.with_(
        tx=point.tx, rx=point.rx, irs=point.irs,
        laser=fit.laser.with_(P_i=scenario.laser.P_i),
        crystal=replace(fit.crystal, l_s=scenario.crystal.l_s),
        calibration=None,
    )


# ── Rows ─────────────────────────────────────────────────────────

def evaluate_point(scenario, channel, solutions):
    """One result row (without sweep_value) from solved channels."""
    results = {kind: solutions.get(kind) for kind in ("direct", "irs", "direct_bound")}
    eff = {
        kind: ChannelEfficiencies.from_mapping(r.segment_efficiencies) if r is not None else None
        for kind, r in results.items()
    }
    lam = scenario.wavelength
    gamma_opt = scenario.gamma

    if channel == "direct":
        budget = solve_power_budget(scenario.laser, scenario.crystal, eff["direct"], None, 1.0, lam)
        gamma_opt = 1.0
    elif channel == "irs":
        budget = solve_power_budget(scenario.laser, scenario.crystal, None, eff["irs"], 0.0, lam)
        gamma_opt = 0.0
    elif channel == "both":
        budget = solve_power_budget(scenario.laser, scenario.crystal, eff["direct"], eff["irs"],
                                    scenario.gamma, lam)
    else:
        state = AllocationInputs(scenario.laser, scenario.crystal, eff["direct"], eff["irs"], lam)
        upper = None
        if eff["direct_bound"] is not None:
            bound = AllocationInputs(scenario.laser, scenario.crystal, eff["direct_bound"], eff["irs"], lam)
            upper = optimize_gamma(bound).P_oc_direct_only
        alloc = optimize_gamma(state, upper_bound=upper)
        budget = alloc.budget
        gamma_opt = alloc.gamma_opt

    metrics = link_metrics(budget.P_oc, scenario.detector)
    converged = all(r.converged for r in results.values() if r is not None)
    nan = float("nan")
    return {
        "eta_direct": results["direct"].e2e_efficiency if results["direct"] is not None else nan,
        "eta_irs": results["irs"].e2e_efficiency if results["irs"] is not None else nan,
        "P_o": budget.P_o,
        "P_o_2v": budget.P_o_2v,
        "P_oc_d": budget.P_oc_d,
        "P_oc_i": budget.P_oc_i,
        "gamma_opt": gamma_opt,
        "P_oc": budget.P_oc,
        "SNR_dB": metrics.snr_db,
        "SE_bps_hz": metrics.se_bps_hz,
        "status": "converged" if converged else "not-converged",
        "capacity_bps": metrics.capacity_bps,
        "P_t_2v": budget.P_t_2v,
        "eta_S": budget.eta_S,
    }


def run_point(scenario, channel="both", workers=None, cache=True):
    """Single evaluation: (row, {kind: SteadyStateResult})."""
    if channel not in CHANNEL_MODES:
        raise ConfigurationError(f"channel must be one of {', '.join(CHANNEL_MODES)}, got {channel!r}")
    scenario = calibrated(scenario, workers, cache)
    jobs = _jobs_for(scenario, channel)
    solved = solve_many(jobs.values(), workers, cache)
    solutions = {kind: solved[job[0]] for kind, job in jobs.items()}
    return evaluate_point(scenario, channel, solutions), solutions


def run_sweep(scenario, sweep, workers=None, cache=True):
    """Result table with one row per (series value, sweep value), in sweep order."""
    scenario = calibrated(scenario, workers, cache)
    for name, value in sweep.fixed.items():
        scenario = apply_variable(scenario, name, value)

    series = sweep.series_values if sweep.series_variable else (None,)
    points = []
    for s in series:
        base = apply_variable(scenario, sweep.series_variable, s) if sweep.series_variable else scenario
        for x in sweep.values:
            points.append((s, float(x), apply_variable(base, sweep.variable, float(x))))

    point_jobs = [_jobs_for(sc, sweep.channel) for _, _, sc in points]
    solved = solve_many([job for jobs in point_jobs for job in jobs.values()], workers, cache)

    rows = []
    for (s, x, sc), jobs in zip(points, point_jobs):
        solutions = {kind: solved[job[0]] for kind, job in jobs.items()}
        row = {"sweep_value": x, **evaluate_point(sc, sweep.channel, solutions)}
        if sweep.series_variable:
            row = {"series_value": s, **row}
        rows.append(row)
        if row["status"] != "converged":
            _log.warning("sweep point %s=%g did not converge", sweep.variable, x)

    columns = (["series_value"] if sweep.series_variable else []) + COLUMNS
    _log.info("sweep %s over %s: %d rows", sweep.name, sweep.variable, len(rows))
    return SweepTable(columns=columns, rows=rows, variable=sweep.variable,
                      series_variable=sweep.series_variable, name=sweep.name,
                      y_columns=sweep.plot_columns(), x_label=sweep.label)


# ── Sweep files ──────────────────────────────────────────────────

def _sweep_range(cond, message, key, text, path, section="sweep"):
    if not cond:
        raise RangeError(message, path, key_line(text, section, key.split(".")[-1]), key)


def loads_sweep(text, path=None):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioSyntaxError(str(exc), path) from exc
    for section in data:
        if section not in ("sweep", "series", "fixed"):
            raise UnknownKeyError("unknown section", path, key_line(text, section, None), section)
    table = data.get("sweep")
    if table is None:
        raise MissingFieldError("required table is missing", path, None, "sweep")
    for key in table:
        if key not in SWEEP_KEYS:
            raise UnknownKeyError("unknown key", path, key_line(text, "sweep", key), f"sweep.{key}")
    for key in ("variable", "start", "stop", "count"):
        if key not in table:
            raise MissingFieldError("required key is missing", path, key_line(text, "sweep", None), f"sweep.{key}")

    try:
        variable = canonical_variable(table["variable"])
    except ConfigurationError as exc:
        raise RangeError(str(exc), path, key_line(text, "sweep", "variable"), "sweep.variable") from exc
    unit = SWEEP_VARIABLES[variable][0]
    start = parse_quantity(table["start"], unit, "sweep.start", path, key_line(text, "sweep", "start"))
    stop = parse_quantity(table["stop"], unit, "sweep.stop", path, key_line(text, "sweep", "stop"))
    count = table["count"]
    _sweep_range(isinstance(count, int) and count >= 2, "count must be an integer >= 2", "sweep.count", text, path)
    channel = table.get("channel", "direct")
    _sweep_range(channel in CHANNEL_MODES, f"channel must be one of {', '.join(CHANNEL_MODES)}",
                 "sweep.channel", text, path)
    y_columns = tuple(table.get("y_columns", ()))
    for col in y_columns:
        _sweep_range(col in COLUMNS, f"unknown column {col!r}", "sweep.y_columns", text, path)

    series_variable, series_values = None, ()
    if "series" in data:
        s = data["series"]
        try:
            series_variable = canonical_variable(s.get("variable", ""))
        except ConfigurationError as exc:
            raise RangeError(str(exc), path, key_line(text, "series", "variable"), "series.variable") from exc
        s_unit = SWEEP_VARIABLES[series_variable][0]
        series_values = tuple(
            parse_quantity(v, s_unit, "series.values", path, key_line(text, "series", "values"))
            for v in s.get("values", ())
        )
        _sweep_range(len(series_values) > 0, "series needs at least one value", "series.values", text, path, "series")

    fixed = {}
    for key, value in data.get("fixed", {}).items():
        try:
            name = canonical_variable(key)
        except ConfigurationError as exc:
            raise UnknownKeyError(str(exc), path, key_line(text, "fixed", key), f"fixed.{key}") from exc
        fixed[name] = parse_quantity(value, SWEEP_VARIABLES[name][0], f"fixed.{key}", path,
                                     key_line(text, "fixed", key))

    scenario_path = table.get("scenario")
    if scenario_path and path is not None:
        scenario_path = str(Path(path).parent / scenario_path)
    name = Path(path).stem if path else "sweep"
    return SweepSpec(
        variable=variable, start=start, stop=stop, count=count, channel=channel,
        series_variable=series_variable, series_values=series_values, fixed=fixed,
        y_columns=y_columns, scenario_path=scenario_path, name=name,
    )


def load_sweep(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read sweep file: {exc.strerror}", path) from exc
    return loads_sweep(text, path)


def validate_sweep_domain(scenario, sweep):
    """Check every sweep and series value against the scenario before solving."""
    for name, value in sweep.fixed.items():
        scenario = apply_variable(scenario, name, value)
    for x in (sweep.start, sweep.stop):
        check_value(scenario, sweep.variable, x)
    for s in sweep.series_values:
        check_value(scenario, sweep.series_variable, s)


def load_sweep_scenario(sweep, scenario_path=None):
    path = scenario_path or sweep.scenario_path
    if not path:
        raise MissingFieldError("no scenario given (use --scenario or sweep.scenario)", None, None, "scenario")
    return load_scenario(path)
