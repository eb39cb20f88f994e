"""
RBC channel simulator – scenario module

Loads TOML scenario files into a validated Scenario. Dimensional values are
strings with units ("5 m", "1260 W/cm^2", "5100 uA", "90 deg") converted to SI
with astropy.units; bare numbers are taken as SI. Unknown sections or keys,
unit mistakes and out-of-range values are rejected with a
``path:line: key: message`` diagnostic.

Sections and keys: see SCENARIO_SCHEMA. Required keys: source.wavelength and
channel.distance_z. Everything else falls back to DEFAULT_SCENARIO.
"""

from __future__ import annotations

import logging
import math
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, replace
from pathlib import Path

from astropy import units as u

from cavity_solver import ChannelSpec, TxOptics, RxOptics, Obstruction
from comm_metrics import DetectorParams
from field_grid import GridSpec
from optics_ops import IrsGeometry, MisalignmentSpec
from power_model import LaserParams, ShgCrystal
from shared import (
    ConfigurationError, ScenarioError, ScenarioSyntaxError, MissingFieldError, UnknownKeyError,
    UnitError, RangeError,
)

_log = logging.getLogger(__name__)


# ── Schema ───────────────────────────────────────────────────────
# unit tags: astropy unit string, "" dimensionless, or int/bool/str/rotation/pair

SCENARIO_SCHEMA = {
    "scenario": {"name": "str"},
    "source": {"wavelength": "m"},
    "grid": {"n": "int", "half_width": "m", "pad_long_throws": "bool", "band_limit": "bool"},
    "solver": {"tol": "", "max_round_trips": "int", "seed": "int"},
    "channel": {"distance_z": "m", "gamma": ""},
    "tx": {"r_M": "m", "r_L": "m", "r_G": "m", "l_c": "m", "f_c": "m"},
    "rx": {"r_M": "m", "r_L": "m", "l_c": "m", "f_c": "m"},
    "obstruction": {"radius_B": "m", "depth_d": "m", "position": "", "side": "str"},
    "misalignment": {"dx": "m", "dy": "m", "dz": "m", "rotation": "rotation"},
    "irs": {
        "theta_i": "rad", "phi_i": "rad", "theta_r": "rad", "phi_r": "rad",
        "D_x_i": "m", "D_x_r": "m", "amplitude_reflection": "", "programmed_gradient": "pair",
    },
    "laser": {
        "P_i": "W", "eta_e": "", "A_g": "m2", "A_b": "m2", "I_s": "W/m2",
        "R_i_v": "", "R_i_2v": "", "R_o": "", "R_o_2v": "", "R_E": "", "T_S": "",
        "eta_g": "", "eta_irs": "", "eta_irs_2v": "",
    },
    "shg": {"C_n": "m/V", "l_s": "m", "n_idx": "", "beam_radius": "m", "power_exponent": "int"},
    "detector": {"eta_c": "A/W", "I_k": "A", "B": "Hz", "L_r": "Ohm", "T": "K", "B_c": "Hz"},
    "calibration": {
        "enabled": "bool", "distance_z": "m", "P_i": "W",
        "P_o_direct": "W", "P_threshold": "W", "P_o_irs": "W",
        "eta_direct": "", "eta_irs": "", "doubled_distance_z": "m", "P_o_2v": "W", "P_i_low": "W",
        "P_o_2v_low": "W", "SNR_dB": "", "snr_l_s": "m", "switch_depth": "m",
    },
}

REQUIRED_KEYS = (("source", "wavelength"), ("channel", "distance_z"))

DEFAULT_SCENARIO = {
    "scenario": {"name": "scenario"},
    "grid": {"n": 512, "half_width": None, "pad_long_throws": True, "band_limit": False},
    "solver": {"tol": 1e-6, "max_round_trips": 1000, "seed": 0},
    "channel": {"gamma": 1.0},
    "tx": {"r_M": 2.5e-3, "r_L": 2.5e-3, "r_G": 2.5e-3, "l_c": 0.05, "f_c": 0.05},
    "rx": {"r_M": 2.5e-3, "r_L": 2.5e-3, "l_c": 0.05, "f_c": None},
    "obstruction": {"radius_B": 2.5e-3, "depth_d": 0.0, "position": 0.5, "side": "-x"},
    "misalignment": {"dx": 0.0, "dy": 0.0, "dz": 0.0, "rotation": ()},
    "irs": {
        "theta_i": math.pi / 2, "phi_i": math.pi, "theta_r": math.pi / 4, "phi_r": 0.0,
        "D_x_i": 3.0, "D_x_r": 3.0, "amplitude_reflection": 1.0, "programmed_gradient": None,
    },
    "laser": {},
    "shg": {},
    "detector": {},
    "calibration": {
        "enabled": False, "distance_z": 5.0, "P_i": 200.0,
        "P_o_direct": 22.54, "P_threshold": 50.0, "P_o_irs": 13.01,
        "eta_direct": None, "eta_irs": None, "doubled_distance_z": None, "P_o_2v": 17.24,
        "P_i_low": 100.0, "P_o_2v_low": 1.16, "SNR_dB": None, "snr_l_s": 5e-3, "switch_depth": None,
    },
}

_UNIT_ALIASES = {"W/m2": "W / m2"}
_SIDES = ("+x", "-x", "+y", "-y")


# ── Scenario ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class Scenario:
    name: str
    wavelength: float
    grid: GridSpec
    distance_z: float
    gamma: float = 1.0
    pad: bool | None = None
    band_limit: bool = False
    seed: int = 0
    tol: float = 1e-6
    max_round_trips: int = 1000
    tx: TxOptics = TxOptics()
    rx: RxOptics = RxOptics()
    obstruction: Obstruction | None = None
    misalignment: MisalignmentSpec | None = None
    irs: IrsGeometry | None = None
    irs_gradient: tuple | None = None
    laser: LaserParams = LaserParams()
    crystal: ShgCrystal = ShgCrystal()
    detector: DetectorParams = DetectorParams()
    calibration: dict | None = None
    source_path: str | None = None

    def with_(self, **changes):
        return replace(self, **changes)

    def channel_spec(self, kind):
        common = dict(
            grid=self.grid, wavelength=self.wavelength, tx=self.tx, rx=self.rx,
            misalignment=self.misalignment, pad=self.pad, band_limit=self.band_limit,
        )
        if kind == "direct":
            return ChannelSpec(kind="direct", distance_z=self.distance_z,
                               obstruction=self.obstruction, **common)
        if kind == "irs":
            return ChannelSpec(kind="irs", irs=self.irs, irs_gradient=self.irs_gradient, **common)
        raise ConfigurationError(f"channel kind must be direct or irs, got {kind!r}")

    def describe(self):
        """Flat echo of the resolved geometry (SI)."""
        return {
            "name": self.name,
            "wavelength": self.wavelength,
            "distance_z": self.distance_z,
            "grid_n": self.grid.n,
            "half_width": self.grid.half_width,
            "tx.r_M": self.tx.r_M, "tx.r_L": self.tx.r_L, "tx.r_G": self.tx.r_G,
            "tx.l_c": self.tx.l_c, "tx.f_c": self.tx.f_c,
            "rx.r_M": self.rx.r_M, "rx.r_L": self.rx.r_L, "rx.l_c": self.rx.l_c,
            "gamma": self.gamma,
            "obstruction.depth_d": self.obstruction.depth_d if self.obstruction else 0.0,
            "calibration": bool(self.calibration),
        }


# ── Value parsing ────────────────────────────────────────────────

def key_line(text, section, key):
    """1-based line of `key` inside [section] (or of the section header)."""
    current = None
    header_line = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if current == section:
                header_line = lineno
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return lineno
    return header_line


def parse_quantity(value, unit, key="", path=None, line=None):
    """Convert a scenario value to a float in the SI unit `unit`."""
    if isinstance(value, bool):
        raise UnitError(f"expected a number, got {value!r}", path, line, key)
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a number or a quantity string, got {value!r}", path, line, key)
    text = value.replace("µ", "u").replace("μ", "u").replace("Ω", "Ohm")
    try:
        q = u.Quantity(text)
    except (ValueError, TypeError) as exc:
        raise UnitError(f"cannot parse quantity {value!r}: {exc}", path, line, key) from exc
    target = u.dimensionless_unscaled if unit == "" else u.Unit(_UNIT_ALIASES.get(unit, unit))
    try:
        return float(q.to_value(target))
    except u.UnitConversionError as exc:
        raise UnitError(f"{value!r} is not convertible to {target or 'a plain number'}", path, line, key) from exc


def _parse_value(value, unit, key, path, line):
    if unit == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise UnitError(f"expected an integer, got {value!r}", path, line, key)
        return value
    if unit == "bool":
        if not isinstance(value, bool):
            raise UnitError(f"expected true or false, got {value!r}", path, line, key)
        return value
    if unit == "str":
        if not isinstance(value, str):
            raise UnitError(f"expected a string, got {value!r}", path, line, key)
        return value
    if unit == "rotation":
        if not isinstance(value, list):
            raise UnitError("rotation must be a list of [axis, angle] pairs", path, line, key)
        out = []
        for item in value:
            if not (isinstance(item, list) and len(item) == 2 and isinstance(item[0], str)):
                raise UnitError(f"rotation entry {item!r} must be [axis, angle]", path, line, key)
            out.append((item[0].lower(), parse_quantity(item[1], "rad", key, path, line)))
        return tuple(out)
    if unit == "pair":
        if not (isinstance(value, list) and len(value) == 2):
            raise UnitError("expected a pair [x, y]", path, line, key)
        return tuple(parse_quantity(v, "", key, path, line) for v in value)
    return parse_quantity(value, unit, key, path, line)


# ── Loading ──────────────────────────────────────────────────────

def _syntax_line(exc):
    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


def parse_tables(text, path=None):
    """TOML text -> {section: {key: SI value}} for the keys present."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioSyntaxError(str(exc), path, _syntax_line(exc)) from exc

    parsed = {}
    for section, table in data.items():
        if section not in SCENARIO_SCHEMA:
            raise UnknownKeyError("unknown section", path, key_line(text, section, None), section)
        if not isinstance(table, dict):
            raise ScenarioSyntaxError("expected a [table]", path, None, section)
        parsed[section] = {}
        for key, value in table.items():
            dotted = f"{section}.{key}"
            line = key_line(text, section, key)
            if key not in SCENARIO_SCHEMA[section]:
                raise UnknownKeyError("unknown key", path, line, dotted)
            parsed[section][key] = _parse_value(value, SCENARIO_SCHEMA[section][key], dotted, path, line)
    return parsed


def _merged(parsed):
    out = {}
    for section in SCENARIO_SCHEMA:
        out[section] = {**DEFAULT_SCENARIO.get(section, {}), **parsed.get(section, {})}
    return out


def _range(cond, message, key, text, path):
    if not cond:
        section, _, name = key.partition(".")
        raise RangeError(message, path, key_line(text, section, name), key)


def _build(values, parsed, text, path):
    src, ch, grid_t = values["source"], values["channel"], values["grid"]
    tx_t, rx_t = values["tx"], values["rx"]

    _range(src["wavelength"] > 0, "wavelength must be > 0", "source.wavelength", text, path)
    _range(ch["distance_z"] > 0, "distance must be > 0", "channel.distance_z", text, path)
    _range(0.0 <= ch["gamma"] <= 1.0, "gamma must lie in [0, 1]", "channel.gamma", text, path)
    for owner, table in (("tx", tx_t), ("rx", rx_t)):
        for key, value in table.items():
            if value is not None:
                _range(value > 0, "must be > 0", f"{owner}.{key}", text, path)

    obstruction = None
    if "obstruction" in parsed:
        ob = values["obstruction"]
        _range(ob["radius_B"] > 0, "must be > 0", "obstruction.radius_B", text, path)
        _range(0.0 <= ob["depth_d"] <= ob["radius_B"],
               f"obstruction depth must satisfy d ∈ [0, r_B] = [0, {ob['radius_B']:g}] m",
               "obstruction.depth_d", text, path)
        _range(0.0 < ob["position"] < 1.0, "z_o must lie in (0, 1)", "obstruction.position", text, path)
        _range(ob["side"] in _SIDES, f"side must be one of {', '.join(_SIDES)}", "obstruction.side", text, path)
        obstruction = Obstruction(**ob)

    misalignment = None
    if "misalignment" in parsed:
        mis = values["misalignment"]
        for axis, angle in mis["rotation"]:
            _range(axis in ("x", "y", "z"), f"rotation axis {axis!r} must be x, y or z",
                   "misalignment.rotation", text, path)
            _range(axis == "z" or abs(angle) < math.pi / 2, "rotation about x or y must stay below 90 deg",
                   "misalignment.rotation", text, path)
        misalignment = MisalignmentSpec(**mis)

    radii = [v for t in (tx_t, rx_t) for k, v in t.items() if k.startswith("r_") and v is not None]
    half_width = grid_t["half_width"] or 4.0 * max(radii)

    irs_t = dict(values["irs"])
    gradient = irs_t.pop("programmed_gradient")
    cal = values["calibration"]
    try:
        grid = GridSpec(grid_t["n"], half_width)
        irs = IrsGeometry(**irs_t)
        laser = LaserParams(**values["laser"])
        crystal = ShgCrystal(**values["shg"])
        detector = DetectorParams(**values["detector"])
    except ConfigurationError as exc:
        raise RangeError(str(exc), path) from exc

    solver = values["solver"]
    return Scenario(
        name=values["scenario"]["name"],
        wavelength=src["wavelength"],
        grid=grid,
        distance_z=ch["distance_z"],
        gamma=ch["gamma"],
        pad=None if grid_t["pad_long_throws"] else False,
        band_limit=grid_t["band_limit"],
        seed=solver["seed"],
        tol=solver["tol"],
        max_round_trips=solver["max_round_trips"],
        tx=TxOptics(**tx_t),
        rx=RxOptics(**rx_t),
        obstruction=obstruction,
        misalignment=misalignment,
        irs=irs,
        irs_gradient=gradient,
        laser=laser,
        crystal=crystal,
        detector=detector,
        calibration=dict(cal) if cal["enabled"] else None,
        source_path=str(path) if path else None,
    )


def loads_scenario(text, path=None):
    parsed = parse_tables(text, path)
    for section, key in REQUIRED_KEYS:
        if key not in parsed.get(section, {}):
            raise MissingFieldError("required key is missing", path, key_line(text, section, None), f"{section}.{key}")
    scenario = _build(_merged(parsed), parsed, text, path)
    _log.debug("loaded scenario %r from %s", scenario.name, path or "<string>")
    return scenario


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc.strerror}", path) from exc
    return loads_scenario(text, path)


def apply_overrides(scenario, grid_n=None, seed=None):
    """CLI overrides (--grid-n, --seed)."""
    changes = {}
    if grid_n is not None:
        changes["grid"] = GridSpec(grid_n, scenario.grid.half_width)
    if seed is not None:
        changes["seed"] = seed
    return scenario.with_(**changes) if changes else scenario
