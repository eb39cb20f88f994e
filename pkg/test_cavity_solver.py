import itertools
import math
from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavity_solver import (
    ChannelSpec, TxOptics, RxOptics, Obstruction, Stage, OpticalOperator,
    DIRECT_FACTORS, build_round_trip, seed_field, solve_steady_state,
    segment_efficiencies, solve_channel,
)
from field_grid import GridSpec, make_field, uniform_disc, random_phase_disc, zeros_like, l2_power
from optics_ops import (
    IrsGeometry, MisalignmentSpec, propagate, apply_aperture, apply_obstruction,
    apply_lens, apply_tilt, fresnel_reference,
)
from shared import ConfigurationError, DegenerateModeError

LAMBDA = 1064e-9
STRAIGHT_IRS = IrsGeometry(math.pi / 2, math.pi, math.pi / 2, 0.0, 2.0, 3.0)


def _seed(n=32, half_width=5e-3):
    return make_field(GridSpec(n, half_width), LAMBDA, random_phase_disc(2e-3, 0))


def _op(*fns, segment="go"):
    return OpticalOperator([("chain", [Stage(f"s{i}", segment, fn) for i, fn in enumerate(fns)])])


def _direct(grid, **kw):
    return ChannelSpec(kind="direct", grid=grid, wavelength=LAMBDA, distance_z=kw.pop("distance_z", 5.0), **kw)


# ── Power iteration ──────────────────────────────────────────────

def test_identity_operator_converges_immediately():
    result = solve_steady_state(OpticalOperator.identity(), _seed())
    assert result.converged
    assert result.round_trips <= 4
    assert result.rho == pytest.approx(1.0)
    assert result.delta == pytest.approx(0.0)


def test_scaled_identity_reports_its_loss():
    result = solve_steady_state(OpticalOperator.identity().scaled(0.9), _seed())
    assert result.converged
    assert abs(result.rho) == pytest.approx(0.9)
    assert result.delta == pytest.approx(0.19, abs=1e-12)
    assert result.status == "converged"


def test_solver_argument_checks():
    with pytest.raises(ConfigurationError):
        solve_steady_state(OpticalOperator.identity(), _seed(), tol=0.0)
    with pytest.raises(ConfigurationError):
        solve_steady_state(OpticalOperator.identity(), _seed(), max_round_trips=5)
    with pytest.raises(DegenerateModeError):
        solve_steady_state(OpticalOperator.identity(), zeros_like(_seed()))


def test_oscillating_operator_does_not_converge():
    factors = itertools.cycle([0.5, 0.9])
    op = _op(lambda f: f.scaled(next(factors)))
    result = solve_steady_state(op, _seed(), max_round_trips=50)
    assert not result.converged
    assert result.status == "not-converged"
    assert result.round_trips == 50
    assert len(result.trace) == 50


def test_extinguishing_operator_returns_zero_rho():
    result = solve_steady_state(_op(zeros_like), _seed())
    assert result.rho == 0
    assert result.converged


_PASSIVE_STEPS = st.one_of(
    st.floats(1.5e-3, 6e-3).map(lambda r: partial(apply_aperture, radius=r)),
    st.floats(0.0, 3e-3).map(lambda d: partial(apply_obstruction, radius_B=4e-3, depth_d=d)),
    st.floats(0.1, 1.0).map(lambda z: partial(propagate, z=z)),
    st.floats(2.0, 20.0).map(lambda focal: partial(apply_lens, radius=8e-3, focal=focal)),
    st.floats(-1e-5, 1e-5).map(lambda sx: partial(apply_tilt, sx=sx, sy=0.0)),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(_PASSIVE_STEPS, min_size=1, max_size=6))
def test_passive_chains_never_gain(fns):
    result = solve_steady_state(_op(*fns), _seed(), max_round_trips=200)
    assert result.power_ratio <= 1 + 1e-12
    if result.converged:
        assert abs(result.rho) <= 1 + 1e-4

# ── Segment efficiencies ─────────────────────────────────────────

def test_lossless_segments_have_unit_efficiency():
    op = OpticalOperator([
        ("out", [Stage("a", "ig", lambda f: f), Stage("b", "go", partial(apply_aperture, radius=1.0))]),
        ("back", [Stage("c", "og", lambda f: f), Stage("d", "gi", lambda f: f)]),
    ])
    eff = segment_efficiencies(op, _seed())
    for key in ("eta_ig", "eta_go", "eta_og", "eta_gi", "eta_o"):
        assert eff[key] == pytest.approx(1.0, abs=1e-9)


def test_segment_efficiency_of_a_half_mask():
    spec = GridSpec(128, 5e-3)
    f = make_field(spec, LAMBDA, uniform_disc(2e-3))
    op = _op(partial(apply_obstruction, radius_B=2e-3, depth_d=2e-3), segment="og")
    eff = segment_efficiencies(op, f)
    assert eff["eta_og"] == pytest.approx(0.5, rel=0.03)
    assert eff["eta_o"] == pytest.approx(eff["eta_og"])


def test_zero_mode_has_no_efficiencies():
    with pytest.raises(DegenerateModeError):
        segment_efficiencies(OpticalOperator.identity(), zeros_like(_seed()))


# ── Channel construction ─────────────────────────────────────────

def test_direct_round_trip_factor_order(small_grid):
    op = build_round_trip(_direct(small_grid))
    assert op.factor_names == list(DIRECT_FACTORS)
    assert len(op) == 5
    segments = {s.segment for s in op.stages}
    assert segments == {"go", "og", "gi", "ig"}


def test_irs_round_trip_uses_irs_segments(small_grid):
    op = build_round_trip(ChannelSpec(kind="irs", grid=small_grid, wavelength=LAMBDA, irs=STRAIGHT_IRS))
    segments = {s.segment for s in op.stages}
    assert {"gr", "irs", "ro"} <= segments
    assert "go" not in segments


def test_zero_depth_obstruction_keeps_its_aperture(small_grid):
    op = build_round_trip(_direct(small_grid, obstruction=Obstruction(depth_d=0.0)))
    names = [s.name for s in op.stages]
    assert "P_B" in names and "P_B_ret" in names
    assert "P_B" not in [s.name for s in build_round_trip(_direct(small_grid)).stages]


def test_obstruction_depth_is_continuous_at_zero(small_grid):
    f = seed_field(_direct(small_grid), 0)
    flush = build_round_trip(_direct(small_grid, obstruction=Obstruction(depth_d=0.0)))(f)
    grazing = build_round_trip(_direct(small_grid, obstruction=Obstruction(depth_d=1e-9)))(f)
    assert np.max(np.abs(flush.values - grazing.values)) <= 1e-12

def test_channel_spec_validation(small_grid):
    with pytest.raises(ConfigurationError):
        ChannelSpec(kind="fiber", grid=small_grid, wavelength=LAMBDA, distance_z=5.0)
    with pytest.raises(ConfigurationError):
        _direct(small_grid, distance_z=0.0)
    with pytest.raises(ConfigurationError):
        _direct(small_grid, obstruction=Obstruction(depth_d=1e-3, position=1.0))
    with pytest.raises(ConfigurationError):
        _direct(small_grid, tx=TxOptics(r_G=0.0))
    with pytest.raises(ConfigurationError):
        ChannelSpec(kind="irs", grid=small_grid, wavelength=LAMBDA)
    with pytest.raises(ConfigurationError):
        ChannelSpec(kind="irs", grid=small_grid, wavelength=LAMBDA, irs=STRAIGHT_IRS,
                    obstruction=Obstruction(depth_d=1e-3))


def test_negative_total_distance_is_rejected(small_grid):
    spec = _direct(small_grid, distance_z=1.0, misalignment=MisalignmentSpec(dz=-2.0))
    with pytest.raises(ConfigurationError):
        build_round_trip(spec)


def test_free_space_length(small_grid):
    assert _direct(small_grid, misalignment=MisalignmentSpec(dz=0.5)).free_space_length == pytest.approx(5.5)
    irs = ChannelSpec(kind="irs", grid=small_grid, wavelength=LAMBDA, irs=STRAIGHT_IRS)
    assert irs.free_space_length == pytest.approx(5.0)


def test_detuned_cats_eye_logs_a_warning(small_grid, caplog):
    spec = _direct(small_grid, rx=RxOptics(l_c=0.05, f_c=0.06))
    with caplog.at_level("WARNING"):
        build_round_trip(spec)
    assert "differs from focal length" in caplog.text


# ── Full channels ────────────────────────────────────────────────

def test_channel_solution_is_deterministic(small_grid):
    spec = _direct(small_grid)
    a = solve_channel(spec, seed=3, max_round_trips=300)
    b = solve_channel(spec, seed=3, max_round_trips=300)
    assert a.rho == b.rho
    assert np.array_equal(a.mode.values, b.mode.values)


def test_direct_channel_efficiencies(small_grid):
    result = solve_channel(_direct(small_grid))
    assert result.converged
    eff = result.segment_efficiencies
    for key in ("eta_ig", "eta_go", "eta_og", "eta_gi"):
        assert 0.0 < eff[key] <= 1.0 + 1e-12
    assert result.eta_o == pytest.approx(eff["eta_o"])
    assert result.e2e_efficiency == pytest.approx(math.sqrt(eff["eta_o"]))


def test_straight_irs_matches_direct_channel(small_grid):
    direct = solve_channel(_direct(small_grid))
    irs = solve_channel(ChannelSpec(kind="irs", grid=small_grid, wavelength=LAMBDA, irs=STRAIGHT_IRS))
    assert direct.converged and irs.converged
    assert abs(irs.rho) == pytest.approx(abs(direct.rho), abs=1e-3)
    eff = irs.segment_efficiencies
    assert eff["eta_go"] == pytest.approx(eff["eta_gr"] * eff["eta_irs"] * eff["eta_ro"])


def test_efficiency_never_rises_with_depth(small_grid):
    depths = (0.0, 1e-9, 1e-4, 2.5e-4, 5e-4, 1e-3, 2e-3)
    etas = [solve_channel(_direct(small_grid, obstruction=Obstruction(depth_d=d))).e2e_efficiency
            for d in depths]
    assert etas[1] == pytest.approx(etas[0], abs=1e-12)
    assert all(b <= a + 1e-9 for a, b in zip(etas, etas[1:]))
    assert etas[-1] < etas[0]

def test_two_aperture_cavity_matches_fresnel_quadrature():
    spec = GridSpec(64, 10e-3)
    r, z = 2.5e-3, 5.0
    seed = make_field(spec, LAMBDA, random_phase_disc(r, 0))

    def cavity(step):
        return OpticalOperator([
            ("out", [Stage("a1", "go", partial(apply_aperture, radius=r)), Stage("p1", "go", step)]),
            ("back", [Stage("a2", "og", partial(apply_aperture, radius=r)), Stage("p2", "og", step)]),
        ])

    asm = solve_steady_state(cavity(partial(propagate, z=z)), seed)
    ref = solve_steady_state(cavity(partial(fresnel_reference, z=z)), seed)
    assert asm.converged and ref.converged
    assert asm.eta == pytest.approx(ref.eta, rel=0.05)
    assert l2_power(asm.mode) > 0
