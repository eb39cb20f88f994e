"""
RBC channel simulator – cavity solver module

Builds the round-trip operator of a resonant-beam channel and iterates it to
the self-reproducing mode (Fox–Li power iteration).

The round trip is recorded at the gain-medium plane and is made of five named
factors, applied in this order:

  H_D       gain plane -> receiver entrance (free space, obstruction, misalignment)
  T_R       receiver cat's-eye reflector (lens, focal-plane mirror, lens)
  H_D_ret   receiver -> gain plane
  T_T_ret   gain plane -> transmitter mirror M1
  T_T       M1 -> gain plane

For the IRS channel H_D becomes H_Dti, the IRS relay and H_Dir.

ChannelSpec expected fields:
  kind            "direct" | "irs"
  distance_z      float, m (direct channel)
  irs             IrsGeometry (irs channel)
  tx              TxOptics(r_M, r_L, r_G, l_c, f_c)
  rx              RxOptics(r_M, r_L, l_c, f_c)
  obstruction     Obstruction | None  (direct path only)
  misalignment    MisalignmentSpec | None
  grid            GridSpec
  wavelength      float, m
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from field_grid import (
    GridSpec, ComplexField, make_field, random_phase_disc, l1_norm, l2_power,
)
from optics_ops import (
    IrsGeometry, MisalignmentSpec,
    propagate, propagate_shifted, propagate_rotated, return_shifted, return_rotated,
    apply_aperture, apply_lens, apply_obstruction, lens_is_sampled,
    focus_to_plane, unfocus_from_plane, irs_relay, irs_path_lengths,
)
from shared import ConfigurationError, DegenerateModeError

_log = logging.getLogger(__name__)


# ── Solver defaults ──────────────────────────────────────────────
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ROUND_TRIPS = 1000
CONVERGED_STREAK = 3
TRACE_LOG_EVERY = 50

SEGMENTS = ("ig", "go", "og", "gi", "gr", "irs", "ro")
DIRECT_FACTORS = ("H_D", "T_R", "H_D_ret", "T_T_ret", "T_T")


# ── Channel description ──────────────────────────────────────────

@dataclass(frozen=True)
class TxOptics:
    r_M: float = 2.5e-3
    r_L: float = 2.5e-3
    r_G: float = 2.5e-3
    l_c: float = 0.05
    f_c: float = 0.05


@dataclass(frozen=True)
class RxOptics:
    r_M: float = 2.5e-3
    r_L: float = 2.5e-3
    l_c: float = 0.05
    f_c: float | None = None

    @property
    def focal(self):
        return self.l_c if self.f_c is None else self.f_c


@dataclass(frozen=True)
class Obstruction:
    radius_B: float = 2.5e-3
    depth_d: float = 0.0
    position: float = 0.5
    side: str = "-x"


@dataclass(frozen=True)
class ChannelSpec:
    kind: str
    grid: GridSpec
    wavelength: float
    distance_z: float = 0.0
    irs: IrsGeometry | None = None
    tx: TxOptics = field(default_factory=TxOptics)
    rx: RxOptics = field(default_factory=RxOptics)
    obstruction: Obstruction | None = None
    misalignment: MisalignmentSpec | None = None
    irs_gradient: tuple | None = None
    pad: bool | None = None
    band_limit: bool = False

    def __post_init__(self):
        if self.kind not in ("direct", "irs"):
            raise ConfigurationError(f"channel kind must be direct or irs, got {self.kind!r}")
        for owner, optics in (("tx", self.tx), ("rx", self.rx)):
            for name, value in vars(optics).items():
                if value is not None and not value > 0:
                    raise ConfigurationError(f"{owner}.{name} must be > 0, got {value}")
        if self.kind == "direct" and not self.distance_z > 0:
            raise ConfigurationError(f"distance_z must be > 0, got {self.distance_z}")
        if self.kind == "irs":
            if self.irs is None:
                raise ConfigurationError("irs channel needs an IrsGeometry")
            if self.obstruction is not None:
                raise ConfigurationError("the obstruction sits on the direct path; the irs channel has none")
            irs_path_lengths(self.irs)
        if self.obstruction is not None:
            ob = self.obstruction
            if not 0.0 < ob.position < 1.0:
                raise ConfigurationError(f"obstruction position z_o must lie in (0, 1), got {ob.position}")
            if not ob.radius_B > 0:
                raise ConfigurationError(f"obstruction radius_B must be > 0, got {ob.radius_B}")

    @property
    def free_space_length(self):
        """Total Tx->Rx path length (m), including any Δz."""
        dz = self.misalignment.dz if self.misalignment else 0.0
        if self.kind == "irs":
            d_ti, d_ir = irs_path_lengths(self.irs)
            return d_ti + d_ir + dz
        return self.distance_z + dz


# ── Operators ────────────────────────────────────────────────────

@dataclass(frozen=True)
class Stage:
    name: str
    segment: str
    op: Callable[[ComplexField], ComplexField]


class OpticalOperator:
    """Ordered named factors, each a tuple of stages, applied first to last."""

    def __init__(self, factors=()):
        self.factors = tuple((name, tuple(stages)) for name, stages in factors)

    @classmethod
    def identity(cls):
        return cls(())

    @property
    def stages(self):
        return [s for _, stages in self.factors for s in stages]

    @property
    def factor_names(self):
        return [name for name, _ in self.factors]

    def then(self, other):
        """self first, then other."""
        return OpticalOperator(self.factors + other.factors)

    def scaled(self, c):
        stage = Stage("scale", "", partial(_scale, c=c))
        return OpticalOperator(self.factors + (("scale", (stage,)),))

    def __call__(self, f):
        for stage in self.stages:
            f = stage.op(f)
        return f

    def __len__(self):
        return len(self.factors)

    def __repr__(self):
        return f"OpticalOperator({' -> '.join(self.factor_names) or 'identity'})"


def _scale(f, c):
    return f.scaled(c)


def _stage(name, segment, fn, *args, **kwargs):
    return Stage(name, segment, partial(fn, *args, **kwargs) if (args or kwargs) else fn)


# ── Chain construction ───────────────────────────────────────────

def _free_space_legs(length, segment, ret_segment, misalignment, prop, tag):
    """Forward and return stages of a free-space leg ending at the receiver."""
    mis = misalignment or MisalignmentSpec()
    fwd, ret = [], []
    if mis.is_rotated:
        fwd.append(_stage(f"{tag}_rotated", segment, propagate_rotated, z=length,
                          rotation=mis.rotation, **prop))
        if mis.is_shifted:
            fwd.append(_stage(f"{tag}_shift", segment, propagate_shifted, z=0.0,
                              dx=mis.dx, dy=mis.dy, **prop))
            ret.append(_stage(f"{tag}_shift_ret", ret_segment, return_shifted, z=0.0,
                              dx=mis.dx, dy=mis.dy, **prop))
        ret.append(_stage(f"{tag}_rotated_ret", ret_segment, return_rotated, z=length,
                          rotation=mis.rotation, **prop))
    elif mis.is_shifted:
        fwd.append(_stage(f"{tag}_shifted", segment, propagate_shifted, z=length,
                          dx=mis.dx, dy=mis.dy, **prop))
        ret.append(_stage(f"{tag}_shifted_ret", ret_segment, return_shifted, z=length,
                          dx=mis.dx, dy=mis.dy, **prop))
    else:
        fwd.append(_stage(tag, segment, propagate, z=length, **prop))
        ret.append(_stage(f"{tag}_ret", ret_segment, propagate, z=length, **prop))
    return fwd, ret


def _direct_path(spec, prop):
    """H_D and H_D_ret for the direct line-of-sight channel."""
    mis = spec.misalignment
    D = spec.distance_z + (mis.dz if mis else 0.0)
    if D <= 0:
        raise ConfigurationError(f"distance plus Δz must stay > 0, got {D:g} m")
    ob = spec.obstruction
    if ob is None:
        return _free_space_legs(D, "go", "og", mis, prop, "H_D")

    # P_B stays in the chain at d = 0, where it is the r_B aperture
    D1 = ob.position * D
    D2 = D - D1
    mask = _stage("P_B", "go", apply_obstruction, radius_B=ob.radius_B, depth_d=ob.depth_d, side=ob.side)
    mask_ret = _stage("P_B_ret", "og", apply_obstruction, radius_B=ob.radius_B, depth_d=ob.depth_d, side=ob.side)
    fwd2, ret2 = _free_space_legs(D2, "go", "og", mis, prop, "H_D2")
    fwd = [_stage("H_D1", "go", propagate, z=D1, **prop), mask] + fwd2
    ret = ret2 + [mask_ret, _stage("H_D1_ret", "og", propagate, z=D1, **prop)]
    return fwd, ret


def _irs_path(spec, prop):
    """H_Dti, IRS relay and H_Dir, plus their counter-pass."""
    g = spec.irs
    d_ti, d_ir = irs_path_lengths(g)
    mis = spec.misalignment
    d_ir += mis.dz if mis else 0.0
    if d_ir <= 0:
        raise ConfigurationError(f"IRS->Rx distance plus Δz must stay > 0, got {d_ir:g} m")
    gradient = spec.irs_gradient
    fwd_ir, ret_ir = _free_space_legs(d_ir, "ro", "og", mis, prop, "H_Dir")
    fwd = [
        _stage("H_Dti", "gr", propagate, z=d_ti, **prop),
        _stage("P_R", "irs", irs_relay, g=g, direction="forward", programmed_gradient=gradient),
    ] + fwd_ir
    ret = ret_ir + [
        _stage("P_R_ret", "og", irs_relay, g=g, direction="reverse", programmed_gradient=gradient),
        _stage("H_Dti_ret", "og", propagate, z=d_ti, **prop),
    ]
    return fwd, ret


def _cats_eye(r_L, r_M, spacing, focal, grid, prefix, seg_in, seg_out, prop):
    """Lens + mirror reflector: (stages toward the mirror, stages back)."""
    if math.isclose(spacing, focal, rel_tol=1e-12):
        toward = [
            _stage(f"{prefix}_focus", seg_in, focus_to_plane, radius=r_L, focal=focal),
            _stage(f"{prefix}_mirror", seg_in, apply_aperture, radius=r_M),
        ]
        back = [_stage(f"{prefix}_unfocus", seg_out, unfocus_from_plane, radius=r_L, focal=focal, spec=grid)]
        return toward, back

    _log.warning(
        "%s: lens-to-mirror spacing %.4g m differs from focal length %.4g m, "
        "using the sampled lens phase", prefix, spacing, focal,
    )
    toward = [
        _stage(f"{prefix}_lens", seg_in, apply_lens, radius=r_L, focal=focal),
        _stage(f"{prefix}_to_mirror", seg_in, propagate, z=spacing, **prop),
        _stage(f"{prefix}_mirror", seg_in, apply_aperture, radius=r_M),
    ]
    back = [
        _stage(f"{prefix}_from_mirror", seg_out, propagate, z=spacing, **prop),
        _stage(f"{prefix}_lens_ret", seg_out, apply_lens, radius=r_L, focal=focal),
    ]
    return toward, back


def _check_lens_sampling(spec):
    for owner, optics, focal in (("tx", spec.tx, spec.tx.f_c), ("rx", spec.rx, spec.rx.focal)):
        if not math.isclose(optics.l_c, focal, rel_tol=1e-12) and \
                not lens_is_sampled(spec.grid, spec.wavelength, optics.r_L, focal):
            _log.warning(
                "%s lens chirp is undersampled on a %.3g m pitch (focal %.3g m)",
                owner, spec.grid.pitch, focal,
            )


def build_round_trip(spec):
    """Round-trip operator of the channel, recorded at the gain plane."""
    prop = {"pad": spec.pad, "band_limit": spec.band_limit}
    tx, rx = spec.tx, spec.rx
    _check_lens_sampling(spec)

    if spec.kind == "direct":
        path_fwd, path_ret = _direct_path(spec, prop)
    else:
        path_fwd, path_ret = _irs_path(spec, prop)
    rx_entrance_segment = "go" if spec.kind == "direct" else "ro"
    path_fwd.append(_stage("P_L_rx", rx_entrance_segment, apply_aperture, radius=rx.r_L))

    rx_toward, rx_back = _cats_eye(rx.r_L, rx.r_M, rx.l_c, rx.focal, spec.grid, "rx", "og", "og", prop)
    tx_toward, tx_back = _cats_eye(tx.r_L, tx.r_M, tx.l_c, tx.f_c, spec.grid, "tx", "gi", "ig", prop)

    H_D = path_fwd
    T_R = rx_toward + rx_back
    H_D_ret = path_ret + [_stage("P_G_in", "og", apply_aperture, radius=tx.r_G)]
    T_T_ret = [_stage("H_fc", "gi", propagate, z=tx.f_c, **prop)] + tx_toward
    T_T = tx_back + [
        _stage("H_fc_ret", "ig", propagate, z=tx.f_c, **prop),
        _stage("P_G_out", "ig", apply_aperture, radius=tx.r_G),
    ]
    return OpticalOperator(zip(DIRECT_FACTORS, (H_D, T_R, H_D_ret, T_T_ret, T_T)))


# ── Steady state ─────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SteadyStateResult:
    mode: ComplexField
    rho: complex
    round_trips: int
    converged: bool
    trace: tuple = ()
    power_ratio: float = 0.0
    segment_efficiencies: dict = field(default_factory=dict)

    @property
    def eta(self):
        return abs(self.rho) ** 2

    @property
    def delta(self):
        return 1.0 - abs(self.rho) ** 2

    @property
    def status(self):
        return "converged" if self.converged else "not-converged"

    @property
    def eta_o(self):
        """Round-trip efficiency η_ig·η_go·η_og·η_gi."""
        eff = self.segment_efficiencies
        return eff.get("eta_ig", 0.0) * eff.get("eta_go", 0.0) * eff.get("eta_og", 0.0) * eff.get("eta_gi", 0.0)

    @property
    def e2e_efficiency(self):
        return math.sqrt(self.eta_o)

    def with_efficiencies(self, eff):
        return SteadyStateResult(
            self.mode, self.rho, self.round_trips, self.converged,
            self.trace, self.power_ratio, dict(eff),
        )


def seed_field(spec, seed=0):
    """Uniform disc over the gain aperture with small seeded random phase."""
    return make_field(spec.grid, spec.wavelength, random_phase_disc(spec.tx.r_G, seed))


def solve_steady_state(op, seed_field, tol=DEFAULT_TOL, max_round_trips=DEFAULT_MAX_ROUND_TRIPS):
    """Power-iterate op until |ρ| settles for three consecutive round trips."""
    if not tol > 0:
        raise ConfigurationError(f"tol must be > 0, got {tol}")
    if max_round_trips < 10:
        raise ConfigurationError(f"max_round_trips must be >= 10, got {max_round_trips}")

    norm = l1_norm(seed_field)
    if norm == 0:
        raise DegenerateModeError("seed field carries no amplitude")
    U = seed_field.scaled(1.0 / norm)

    trace = []
    streak = 0
    rho = 0j
    power_ratio = 0.0
    for n in range(1, max_round_trips + 1):
        V = op(U)
        a = l1_norm(U)
        b = l1_norm(V)
        p_in = l2_power(U)
        power_ratio = l2_power(V) / p_in if p_in > 0 else 0.0
        if b == 0:
            _log.warning("round trip %d extinguished the field, |ρ| = 0", n)
            trace.append(0.0)
            return SteadyStateResult(V, 0j, n, True, tuple(trace), 0.0)

        overlap = np.vdot(U.values, V.values)
        rho = (b / a) * np.exp(1j * np.angle(overlap))
        trace.append(abs(rho))
        if n % TRACE_LOG_EVERY == 0:
            _log.debug("round trip %d: |ρ| = %.9f", n, abs(rho))

        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            streak += 1
        else:
            streak = 0
        U = V.scaled(1.0 / b)
        if streak >= CONVERGED_STREAK:
            _log.info("steady state after %d round trips: |ρ| = %.6f, η = %.4f", n, abs(rho), abs(rho) ** 2)
            return SteadyStateResult(U, complex(rho), n, True, tuple(trace), power_ratio)

    _log.warning(
        "no steady state within %d round trips (last |ρ| = %.6f)", max_round_trips, abs(rho),
    )
    return SteadyStateResult(U, complex(rho), max_round_trips, False, tuple(trace), power_ratio)


def segment_efficiencies(spec_or_op, mode):
    """One-way power ratios of each chain segment, starting from the gain-plane mode.

    Keys: eta_ig, eta_go, eta_og, eta_gi (+ eta_gr, eta_irs, eta_ro for IRS
    chains, where eta_go = eta_gr·eta_irs·eta_ro) and eta_o, the round trip.
    """
    op = build_round_trip(spec_or_op) if isinstance(spec_or_op, ChannelSpec) else spec_or_op
    if l2_power(mode) == 0:
        raise DegenerateModeError("mode carries no power")

    eff = {}
    f = mode
    for stage in op.stages:
        p_in = l2_power(f)
        f = stage.op(f)
        if not stage.segment:
            continue
        ratio = l2_power(f) / p_in if p_in > 0 else 0.0
        eff[stage.segment] = eff.get(stage.segment, 1.0) * ratio

    irs_parts = [s for s in ("gr", "irs", "ro") if s in eff]
    if irs_parts:
        eff["go"] = math.prod(eff[s] for s in irs_parts)
    out = {f"eta_{s}": eff.get(s, 1.0) for s in ("ig", "go", "og", "gi")}
    for s in irs_parts:
        out[f"eta_{s}"] = eff[s]
    out["eta_o"] = out["eta_ig"] * out["eta_go"] * out["eta_og"] * out["eta_gi"]
    return out


def solve_channel(spec, seed=0, tol=DEFAULT_TOL, max_round_trips=DEFAULT_MAX_ROUND_TRIPS):
    """Build, solve and attach segment efficiencies."""
    op = build_round_trip(spec)
    _log.info(
        "solving %s channel: path %.4g m, grid n=%d", spec.kind, spec.free_space_length, spec.grid.n,
    )
    result = solve_steady_state(op, seed_field(spec, seed), tol, max_round_trips)
    try:
        eff = segment_efficiencies(op, result.mode)
    except DegenerateModeError:
        _log.warning("%s channel mode is extinguished, efficiencies set to 0", spec.kind)
        eff = {f"eta_{s}": 0.0 for s in ("ig", "go", "og", "gi", "o")}
    return result.with_efficiencies(eff)
