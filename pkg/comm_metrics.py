"""
RBC channel simulator – communication metrics module

SNR of a PIN receiver (shot + thermal noise) and the resulting spectral
efficiency / capacity. Detector defaults are SI conversions of the baseline
receiver (5100 µA background current, 5100 kΩ load).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

from scipy import constants

from shared import ConfigurationError, DomainError


@dataclass(frozen=True)
class DetectorParams:
    eta_c: float = 0.6            # A/W
    I_k: float = 5100e-6          # A
    B: float = 811.7e6            # Hz, noise bandwidth
    L_r: float = 5100e3           # Ohm
    T: float = 300.0              # K
    B_c: float = 811.7e6          # Hz, channel bandwidth
    q: float = constants.e
    K_b: float = constants.k

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigurationError(f"detector {f.name} must be > 0, got {getattr(self, f.name)}")


class LinkQuality(NamedTuple):
    linear: float
    dB: float


class LinkMetrics(NamedTuple):
    snr_linear: float
    snr_db: float
    se_bps_hz: float
    capacity_bps: float


def noise_power(P_oc, d):
    """Shot plus thermal noise term, including the 2πe factor."""
    shot = 2.0 * d.q * (d.eta_c * P_oc + d.I_k) * d.B
    thermal = 4.0 * d.K_b * d.T * d.B / d.L_r
    return 2.0 * math.pi * math.e * (shot + thermal)


def snr(P_oc, d):
    """(η_c P_oc)² over the shot+thermal noise; dB is -inf at zero power."""
    if P_oc < 0:
        raise DomainError(f"communication power must be >= 0, got {P_oc}")
    linear = (d.eta_c * P_oc) ** 2 / noise_power(P_oc, d)
    db = 10.0 * math.log10(linear) if linear > 0 else -math.inf
    return LinkQuality(linear, db)


def spectral_efficiency(snr_linear, d=None):
    """log2(1 + SNR) in bit/s/Hz."""
    if snr_linear < 0:
        raise DomainError(f"SNR must be >= 0, got {snr_linear}")
    return math.log2(1.0 + snr_linear)


def capacity(snr_linear, d):
    """B_c·log2(1 + SNR) in bit/s."""
    return d.B_c * spectral_efficiency(snr_linear)


def link_metrics(P_oc, d):
    q = snr(P_oc, d)
    return LinkMetrics(q.linear, q.dB, spectral_efficiency(q.linear), capacity(q.linear, d))


def required_power(snr_db, d):
    """Communication power whose SNR equals snr_db (positive root of the SNR quadratic)."""
    target = 10.0 ** (snr_db / 10.0)
    scale = target * 2.0 * math.pi * math.e
    b = scale * 2.0 * d.q * d.B
    c = scale * (2.0 * d.q * d.I_k * d.B + 4.0 * d.K_b * d.T * d.B / d.L_r)
    return (b + math.sqrt(b * b + 4.0 * c)) / (2.0 * d.eta_c)
