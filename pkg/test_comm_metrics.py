import math

import pytest
from hypothesis import given, settings, strategies as st

from comm_metrics import (
    DetectorParams, snr, spectral_efficiency, capacity, link_metrics, noise_power, required_power,
)
from shared import ConfigurationError, DomainError

DET = DetectorParams()


def _hand_snr(P):
    # independent evaluation with the detector constants written out
    q, k = 1.602176634e-19, 1.380649e-23
    eta_c, I_k, B, L_r, T = 0.6, 5100e-6, 811.7e6, 5100e3, 300.0
    signal = (eta_c * P) ** 2
    noise = 2 * math.pi * math.e * (2 * q * (eta_c * P + I_k) * B + 4 * k * T * B / L_r)
    return signal / noise


def test_zero_power_has_no_signal():
    q = snr(0.0, DET)
    assert q.linear == 0.0
    assert q.dB == -math.inf


@pytest.mark.parametrize("P", [1e-6, 1e-3, 0.05, 1.0, 10.0])
def test_snr_matches_hand_evaluation(P):
    q = snr(P, DET)
    assert q.linear == pytest.approx(_hand_snr(P), rel=1e-12)
    assert q.dB == pytest.approx(10 * math.log10(_hand_snr(P)), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-9, 1e3), st.floats(1.0001, 10.0))
def test_snr_increases_with_power(P, factor):
    assert snr(P * factor, DET).linear > snr(P, DET).linear


def test_noise_floor_is_positive():
    assert noise_power(0.0, DET) > 0


def test_negative_power_is_rejected():
    with pytest.raises(DomainError):
        snr(-1e-3, DET)


@pytest.mark.parametrize("snr_linear, expected", [(0.0, 0.0), (3.0, 2.0), (1023.0, 10.0)])
def test_spectral_efficiency_examples(snr_linear, expected):
    assert spectral_efficiency(snr_linear) == pytest.approx(expected)


def test_spectral_efficiency_rejects_negative_snr():
    with pytest.raises(DomainError):
        spectral_efficiency(-0.5)


def test_capacity_is_bandwidth_times_efficiency():
    assert capacity(3.0, DET) == pytest.approx(2.0 * 811.7e6)


def test_link_metrics_bundle():
    m = link_metrics(0.1, DET)
    assert m.snr_linear == pytest.approx(_hand_snr(0.1))
    assert m.se_bps_hz == pytest.approx(math.log2(1 + m.snr_linear))
    assert m.capacity_bps == pytest.approx(DET.B_c * m.se_bps_hz)


@pytest.mark.parametrize("field", ["eta_c", "B", "L_r", "T"])
def test_detector_parameters_must_be_positive(field):
    with pytest.raises(ConfigurationError):
        DetectorParams(**{field: 0.0})


@pytest.mark.parametrize("snr_db", [10.0, 60.0, 92.95])
def test_required_power_inverts_snr(snr_db):
    P = required_power(snr_db, DET)
    assert snr(P, DET).dB == pytest.approx(snr_db, abs=1e-9)
