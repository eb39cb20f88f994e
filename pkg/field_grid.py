"""
RBC channel simulator – field grid module

Sampled scalar optical fields on a square physical window. Every other module
builds on the two types defined here:

  GridSpec       n samples per side (power of two, n >= 16) over
                 [-half_width, half_width]; pitch = 2*half_width/n.
                 Samples sit at cell centres, origin at the window centre.
  ComplexField   immutable n×n complex amplitudes + GridSpec + wavelength.

Profile descriptors accepted by make_field (plain dicts):
  {"kind": "uniform-disc", "radius": r}
  {"kind": "gaussian", "waist": w0}
  {"kind": "uniform-plane"}
  {"kind": "seeded-random-phase-disc", "radius": r, "seed": s}
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from shared import ConfigurationError


RANDOM_PHASE_SPAN = 0.01   # rad, seed-field phase is uniform in [-span, span]


# ── Types ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GridSpec:
    n: int
    half_width: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16 or (self.n & (self.n - 1)):
            raise ConfigurationError(f"grid n must be a power of two >= 16, got {self.n}")
        if not self.half_width > 0:
            raise ConfigurationError(f"grid half_width must be > 0, got {self.half_width}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def pitch(self):
        return 2.0 * self.half_width / self.n

    @property
    def coords(self):
        """1-D cell-centre coordinates (m)."""
        return _coords(self.n, self.half_width)

    def mesh(self):
        """(X, Y) coordinate arrays, X varying along axis 1."""
        return _mesh(self.n, self.half_width)

    def radius_squared(self):
        return _radius_squared(self.n, self.half_width)

    def scaled(self, factor):
        """Same pitch, factor× as many samples (used for zero padding)."""
        return GridSpec(self.n * factor, self.half_width * factor)


@dataclass(frozen=True, eq=False)
class ComplexField:
    spec: GridSpec
    values: np.ndarray
    wavelength: float

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128)
        if values.shape != (self.spec.n, self.spec.n):
            raise ConfigurationError(
                f"field values must be {self.spec.n}x{self.spec.n}, got {values.shape}"
            )
        if not self.wavelength > 0:
            raise ConfigurationError(f"wavelength must be > 0, got {self.wavelength}")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("field contains non-finite amplitudes")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "wavelength", float(self.wavelength))

    def with_values(self, values, spec=None):
        """New field on the same (or given) grid and wavelength."""
        return ComplexField(spec or self.spec, values, self.wavelength)

    def scaled(self, c):
        return self.with_values(self.values * c)

    @property
    def intensity(self):
        return np.abs(self.values) ** 2

    @property
    def k(self):
        return 2.0 * np.pi / self.wavelength


# ── Coordinate caches ────────────────────────────────────────────

@lru_cache(maxsize=32)
def _coords(n, half_width):
    pitch = 2.0 * half_width / n
    c = (np.arange(n) - (n - 1) / 2.0) * pitch
    c.flags.writeable = False
    return c


@lru_cache(maxsize=32)
def _mesh(n, half_width):
    c = _coords(n, half_width)
    X, Y = np.meshgrid(c, c)
    X.flags.writeable = False
    Y.flags.writeable = False
    return X, Y


@lru_cache(maxsize=32)
def _radius_squared(n, half_width):
    X, Y = _mesh(n, half_width)
    r2 = X**2 + Y**2
    r2.flags.writeable = False
    return r2


# ── Profiles ─────────────────────────────────────────────────────

def uniform_disc(radius):
    return {"kind": "uniform-disc", "radius": radius}


def gaussian(waist):
    return {"kind": "gaussian", "waist": waist}


def uniform_plane():
    return {"kind": "uniform-plane"}


def random_phase_disc(radius, seed):
    return {"kind": "seeded-random-phase-disc", "radius": radius, "seed": seed}


def _check_extent(spec, value, name):
    if not value > 0:
        raise ConfigurationError(f"{name} must be > 0, got {value}")
    if value > spec.half_width:
        raise ConfigurationError(
            f"{name} {value:g} m exceeds the window half-width {spec.half_width:g} m"
        )


def make_field(spec, wavelength, profile):
    """Sample an analytic profile at the cell centres of spec."""
    kind = profile.get("kind")
    r2 = spec.radius_squared()

    if kind == "uniform-plane":
        values = np.ones((spec.n, spec.n), dtype=np.complex128)
    elif kind == "uniform-disc":
        radius = profile["radius"]
        _check_extent(spec, radius, "disc radius")
        values = (r2 <= radius**2).astype(np.complex128)
    elif kind == "gaussian":
        waist = profile["waist"]
        _check_extent(spec, waist, "gaussian waist")
        values = np.exp(-r2 / waist**2).astype(np.complex128)
    elif kind == "seeded-random-phase-disc":
        radius = profile["radius"]
        _check_extent(spec, radius, "disc radius")
        rng = np.random.default_rng(profile.get("seed", 0))
        phase = rng.uniform(-RANDOM_PHASE_SPAN, RANDOM_PHASE_SPAN, size=(spec.n, spec.n))
        values = np.where(r2 <= radius**2, np.exp(1j * phase), 0.0)
    else:
        raise ConfigurationError(f"unknown field profile {kind!r}")

    return ComplexField(spec, values, wavelength)


def zeros_like(f):
    return f.with_values(np.zeros_like(f.values))


# ── Norms & diagnostics ──────────────────────────────────────────

def l1_norm(f):
    """Sum of amplitude magnitudes (the transfer-factor norm)."""
    return float(np.sum(np.abs(f.values)))


def l2_power(f):
    """Discrete integral of intensity, Σ|U|²·Δ²."""
    return float(np.sum(f.intensity) * f.spec.pitch**2)


def centroid(f):
    I = f.intensity
    total = I.sum()
    if total == 0:
        return 0.0, 0.0
    X, Y = f.spec.mesh()
    return float((X * I).sum() / total), float((Y * I).sum() / total)


def beam_radius(f):
    """Second-moment radius 2·sqrt(<x²>) along x (1/e² radius of a Gaussian)."""
    I = f.intensity
    total = I.sum()
    if total == 0:
        return 0.0
    X, _ = f.spec.mesh()
    xc, _ = centroid(f)
    return float(2.0 * np.sqrt(((X - xc) ** 2 * I).sum() / total))


def relative_l2_error(a, b):
    """‖a − b‖₂ / ‖b‖₂ on field values (or plain arrays)."""
    av = getattr(a, "values", a)
    bv = getattr(b, "values", b)
    ref = np.linalg.norm(bv)
    if ref == 0:
        return float(np.linalg.norm(av))
    return float(np.linalg.norm(av - bv) / ref)


# ── Padding ──────────────────────────────────────────────────────

def pad_values(values, factor):
    """Centre values inside a factor× larger zero array (same pitch)."""
    n = values.shape[0]
    m = n * factor
    out = np.zeros((m, m), dtype=np.complex128)
    lo = (m - n) // 2
    out[lo : lo + n, lo : lo + n] = values
    return out


def crop_values(values, n):
    """Take the centred n×n block back out of a padded array."""
    m = values.shape[0]
    lo = (m - n) // 2
    return values[lo : lo + n, lo : lo + n]


def pad_field(f, factor=2):
    return f.with_values(pad_values(f.values, factor), spec=f.spec.scaled(factor))


def crop_field(f, spec):
    return f.with_values(crop_values(f.values, spec.n), spec=spec)
