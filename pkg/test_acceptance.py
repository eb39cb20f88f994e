"""Full-grid checks on the bundled scenario. Run with --runslow."""

import numpy as np
import pytest

from conftest import BASELINE
from scenario import apply_overrides, load_scenario
from sweep_engine import SweepSpec, apply_variable, calibrated, run_point, run_sweep

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def baseline():
    return calibrated(load_scenario(BASELINE))


@pytest.fixture
def at_3m(baseline):
    return apply_variable(baseline, "z", 3.0)


def _sweep(variable, start, stop, count, channel):
    return SweepSpec(variable=variable, start=start, stop=stop, count=count, channel=channel)


def test_calibrated_point_reproduces_output_powers(baseline):
    direct, _ = run_point(baseline, "direct")
    irs, _ = run_point(baseline, "irs")
    assert direct["status"] == irs["status"] == "converged"
    assert direct["P_o"] == pytest.approx(22.54, rel=0.15)
    assert irs["P_o"] == pytest.approx(13.01, rel=0.20)
    assert 0.5 < irs["eta_irs"] < direct["eta_direct"] <= 1.0


def test_calibrated_point_reproduces_efficiencies(baseline):
    row, _ = run_point(baseline, "both")
    assert row["eta_direct"] == pytest.approx(0.9014, abs=0.03)
    assert row["eta_irs"] == pytest.approx(0.8518, abs=0.03)


def test_depth_sweep_is_monotone_and_leaves_irs_alone(baseline):
    table = run_sweep(baseline, _sweep("d", 0.0, 2.5e-3, 11, "both"))
    eta = np.array(table.column("eta_direct"))
    assert np.all(np.diff(eta) <= 1e-9)
    eta_irs = np.array(table.column("eta_irs"))
    assert np.ptp(eta_irs) <= 1e-6


def test_efficiency_falls_with_distance(baseline):
    table = run_sweep(baseline, _sweep("z", 1.0, 10.0, 10, "direct"))
    eta = np.array(table.column("eta_direct"))
    assert np.all(np.diff(eta) < 0)


# ── Doubled output ───────────────────────────────────────────────

@pytest.mark.parametrize("P_i", [10.0, 25.0, 40.0])
def test_no_doubled_output_below_threshold(at_3m, P_i):
    row, _ = run_point(apply_variable(at_3m, "P_i", P_i), "direct")
    assert row["P_o_2v"] < 0.5


@pytest.mark.parametrize("P_i, expected", [(100.0, 1.16), (200.0, 17.24), (300.0, 69.74)])
def test_doubled_output_against_pump(at_3m, P_i, expected):
    row, _ = run_point(apply_variable(at_3m, "P_i", P_i), "direct")
    assert row["P_o_2v"] == pytest.approx(expected, rel=0.25)


@pytest.mark.parametrize("l_s, expected", [(2e-3, 17.25), (3e-3, 38.80), (4e-3, 68.98)])
def test_doubled_output_against_crystal_length(at_3m, l_s, expected):
    row, _ = run_point(apply_variable(at_3m, "l_s", l_s), "direct")
    assert row["P_o_2v"] == pytest.approx(expected, rel=0.25)


def test_irs_doubled_output_trails_the_direct_path(at_3m):
    direct, _ = run_point(at_3m, "direct")
    irs, _ = run_point(at_3m, "irs")
    assert 0 < irs["P_o_2v"] < direct["P_o_2v"]


def test_signal_to_noise_with_a_thick_crystal(baseline):
    row, _ = run_point(apply_variable(baseline, "l_s", 5e-3), "optimized")
    assert row["SNR_dB"] == pytest.approx(92.95, abs=3.0)


# ── Split ratio ──────────────────────────────────────────────────

def test_split_switches_to_irs_once(baseline):
    table = run_sweep(baseline, _sweep("d", 0.0, 2.5e-3, 11, "optimized"))
    gammas = table.column("gamma_opt")
    assert gammas[0] == 1.0
    assert gammas[-1] == 0.0
    switches = sum(1 for a, b in zip(gammas, gammas[1:]) if a != b)
    assert switches == 1


@pytest.mark.parametrize("d, expected", [(0.5e-3, 1.0), (1.0e-3, 0.0)])
def test_split_switches_near_three_quarters_of_a_millimetre(baseline, d, expected):
    row, _ = run_point(apply_variable(baseline, "d", d), "optimized")
    assert row["gamma_opt"] == expected


def test_grid_refinement_changes_efficiency_little(baseline):
    coarse, _ = run_point(baseline, "direct")
    fine, _ = run_point(apply_overrides(baseline, grid_n=1024), "direct")
    assert abs(coarse["eta_direct"] - fine["eta_direct"]) < 0.01
