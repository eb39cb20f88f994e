"""
RBC channel simulator – optics operations module

Elementary field transforms of the resonator chain. Every function takes a
ComplexField and returns a new one; nothing is modified in place.

  propagate / propagate_shifted / propagate_rotated   angular-spectrum free space
  return_shifted / return_rotated                     physical counter-pass legs
  fresnel_reference / fresnel_convolution             Fresnel-integral oracles
  apply_aperture / apply_lens / apply_obstruction     transmission masks
  focus_to_plane / unfocus_from_plane                 lens <-> back focal plane
  irs_phase_gradient / apply_irs / irs_relay          IRS phase profile
  irs_path_lengths / rotate_point / rayleigh_distance geometry

Direction convention: direction="reverse" is the exact inverse of the forward
operator. The cavity's return legs travel the same positive distance with the
shift, rotation and IRS gradient negated; use the return_* helpers for those.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, signal

from field_grid import GridSpec, ComplexField, pad_values, crop_values
from shared import ConfigurationError, DomainError, GeometryError

_log = logging.getLogger(__name__)


# ── Numerical constants ──────────────────────────────────────────
PAD_THRESHOLD = 1.0        # m, propagate pads 2× beyond this |z|
PAD_FACTOR = 2
FFT_WORKERS = -1
_AXES = ("x", "y", "z")


# ── Types ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SpectralTransfer:
    nu_x: np.ndarray
    nu_y: np.ndarray
    z: float
    H: np.ndarray


@dataclass(frozen=True)
class IrsGeometry:
    theta_i: float
    phi_i: float
    theta_r: float
    phi_r: float
    D_x_i: float
    D_x_r: float
    amplitude_reflection: float = 1.0

    def __post_init__(self):
        for name in ("theta_i", "theta_r"):
            theta = getattr(self, name)
            if not 0.0 < theta < math.pi:
                raise GeometryError(f"{name} must lie in (0, pi), got {theta}")
        if not 0.0 < self.amplitude_reflection <= 1.0:
            raise ConfigurationError(
                f"amplitude_reflection must lie in (0, 1], got {self.amplitude_reflection}"
            )

    @property
    def incident_direction(self):
        return _unit_vector(self.theta_i, self.phi_i)

    @property
    def reflected_direction(self):
        return _unit_vector(self.theta_r, self.phi_r)


@dataclass(frozen=True)
class MisalignmentSpec:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    rotation: tuple = field(default_factory=tuple)

    def __post_init__(self):
        rot = tuple((str(axis).lower(), float(angle)) for axis, angle in self.rotation)
        if len(rot) > 3:
            raise ConfigurationError(f"at most 3 rotations allowed, got {len(rot)}")
        for axis, _ in rot:
            if axis not in _AXES:
                raise ConfigurationError(f"rotation axis must be one of x, y, z, got {axis!r}")
        object.__setattr__(self, "rotation", rot)

    @property
    def is_shifted(self):
        return self.dx != 0.0 or self.dy != 0.0

    @property
    def is_rotated(self):
        return any(angle != 0.0 for _, angle in self.rotation)

    def matrix(self):
        return rotation_matrix(self.rotation)

    def inverse_rotation(self):
        """Angles negated, order reversed."""
        return tuple((axis, -angle) for axis, angle in reversed(self.rotation))


def _unit_vector(theta, phi):
    return np.array([
        math.sin(theta) * math.cos(phi),
        math.sin(theta) * math.sin(phi),
        math.cos(theta),
    ])


# ── Rotations ────────────────────────────────────────────────────

def _axis_matrix(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ConfigurationError(f"rotation axis must be one of x, y, z, got {axis!r}")


def _rotation_list(rotation):
    if isinstance(rotation, MisalignmentSpec):
        return rotation.rotation
    return tuple((str(a).lower(), float(t)) for a, t in (rotation or ()))


def rotation_matrix(rotation):
    """Counter-clockwise product R_m1(θ1)·R_m2(θ2)··· in listed order."""
    M = np.eye(3)
    for axis, angle in _rotation_list(rotation):
        M = M @ _axis_matrix(axis, angle)
    return M


def rotate_point(p, rotation):
    return rotation_matrix(rotation) @ np.asarray(p, dtype=float)


def incidence_frame_change(theta, phi):
    """R_y(−θ)·R_z(−φ): maps a beam arriving at (θ, φ) onto the surface normal."""
    return rotation_matrix((("y", -theta), ("z", -phi)))


def rayleigh_distance(aperture_diameter, wavelength):
    if not wavelength > 0:
        raise DomainError(f"wavelength must be > 0, got {wavelength}")
    return 2.0 * aperture_diameter**2 / wavelength


# ── Transfer functions ───────────────────────────────────────────

def _fft_freqs(n, pitch):
    return sfft.fftfreq(n, d=pitch)


def band_limit_frequency(wavelength, z, window):
    """Largest alias-free frequency for a throw z on a window of given width."""
    return 1.0 / (wavelength * math.sqrt((2.0 * z / window) ** 2 + 1.0))


def _transfer_at(nu_x, nu_y, wavelength, z, band_limit=False, window=None):
    radicand = 1.0 / wavelength**2 - nu_x**2 - nu_y**2
    propagating = radicand >= 0
    H = np.where(
        propagating,
        np.exp(2j * np.pi * z * np.sqrt(np.where(propagating, radicand, 0.0))),
        0.0,
    )
    if band_limit and z != 0:
        f_lim = band_limit_frequency(wavelength, abs(z), window)
        H = np.where((np.abs(nu_x) <= f_lim) & (np.abs(nu_y) <= f_lim), H, 0.0)
    return H


@lru_cache(maxsize=24)
def _cached_transfer(n, half_width, wavelength, z, band_limit):
    pitch = 2.0 * half_width / n
    nu = _fft_freqs(n, pitch)
    NX, NY = np.meshgrid(nu, nu)
    _log.debug("building transfer function n=%d z=%.6g m band_limit=%s", n, z, band_limit)
    H = _transfer_at(NX, NY, wavelength, z, band_limit, window=n * pitch)
    H.flags.writeable = False
    return NX, NY, H


def spectral_transfer(spec, wavelength, z, band_limit=False):
    """Angular-spectrum transfer function in FFT layout for the given grid."""
    NX, NY, H = _cached_transfer(spec.n, spec.half_width, float(wavelength), float(z), bool(band_limit))
    return SpectralTransfer(nu_x=NX, nu_y=NY, z=float(z), H=H)


def _should_pad(z, pad):
    if pad is None:
        return abs(z) > PAD_THRESHOLD
    return bool(pad)


def _spectral_filter(f, z, extra=None, pad=None, band_limit=False):
    """F⁻¹{F{f}·H(z)·extra(νx, νy)} with optional 2× zero padding."""
    padded = _should_pad(z, pad)
    values = pad_values(f.values, PAD_FACTOR) if padded else f.values
    spec = f.spec.scaled(PAD_FACTOR) if padded else f.spec
    tf = spectral_transfer(spec, f.wavelength, z, band_limit)
    kernel = tf.H if extra is None else tf.H * extra(tf.nu_x, tf.nu_y)
    out = sfft.ifft2(sfft.fft2(values, workers=FFT_WORKERS) * kernel, workers=FFT_WORKERS)
    if padded:
        out = crop_values(out, f.spec.n)
    return f.with_values(out)


# ── Free-space propagation ───────────────────────────────────────

def propagate(f, z, pad=None, band_limit=False):
    """Angular-spectrum propagation over z (negative z is the exact inverse)."""
    if z == 0:
        return f.with_values(f.values)
    return _spectral_filter(f, z, pad=pad, band_limit=band_limit)


def _check_shift(f, dx, dy):
    limit = f.spec.half_width / 2.0
    if abs(dx) >= limit or abs(dy) >= limit:
        raise ConfigurationError(
            f"shift ({dx:g}, {dy:g}) m must stay below half_width/2 = {limit:g} m"
        )


def propagate_shifted(f, z, dx, dy, direction="forward", pad=None, band_limit=False):
    """Propagation to a receiver translated by (dx, dy)."""
    _check_shift(f, dx, dy)
    if direction == "reverse":
        z, dx, dy = -z, -dx, -dy
    elif direction != "forward":
        raise ConfigurationError(f"direction must be forward or reverse, got {direction!r}")
    if dx == 0 and dy == 0:
        return propagate(f, z, pad=pad, band_limit=band_limit)

    def shift(nu_x, nu_y):
        return np.exp(2j * np.pi * (nu_x * dx + nu_y * dy))

    return _spectral_filter(f, z, extra=shift, pad=pad, band_limit=band_limit)


def return_shifted(f, z, dx, dy, pad=None, band_limit=False):
    """Counter-pass from a translated receiver: same z, negated shift."""
    return propagate_shifted(f, z, -dx, -dy, "forward", pad=pad, band_limit=band_limit)


def _check_rotation(rotation):
    for axis, angle in _rotation_list(rotation):
        if axis in ("x", "y") and abs(angle) >= math.pi / 2:
            raise DomainError(f"rotation about {axis} must stay below 90 deg, got {math.degrees(angle):g}")


def rotation_jacobian(A, p_x, p_y, w):
    """|∂(qx, qy)/∂(px, py)| for q = A·(px, py, w(px, py))."""
    dwx = -p_x / w
    dwy = -p_y / w
    J = (A[0, 0] + A[0, 2] * dwx) * (A[1, 1] + A[1, 2] * dwy) \
        - (A[0, 1] + A[0, 2] * dwy) * (A[1, 0] + A[1, 2] * dwx)
    return np.abs(J)


def _remap_spectrum(values, spec, wavelength, R, carrier_in, carrier_out):
    """Angular spectrum of values seen from a frame rotated by R.

    Returns the centred output spectrum, the input-frame frequencies it was
    read at (for applying H there) and the validity mask.
    """
    n = spec.n
    window = n * spec.pitch
    S = sfft.fftshift(sfft.fft2(values, workers=FFT_WORKERS))
    nu = sfft.fftshift(_fft_freqs(n, spec.pitch))
    PX, PY = np.meshgrid(nu + carrier_out[0], nu + carrier_out[1])

    radicand = 1.0 / wavelength**2 - PX**2 - PY**2
    valid = radicand > 0
    W = np.sqrt(np.where(valid, radicand, 1.0))

    A = R.T
    QX = A[0, 0] * PX + A[0, 1] * PY + A[0, 2] * W
    QY = A[1, 0] * PX + A[1, 1] * PY + A[1, 2] * W
    QZ = A[2, 0] * PX + A[2, 1] * PY + A[2, 2] * W
    valid &= QZ > 0

    ix = (QX - carrier_in[0]) * window + n / 2.0
    iy = (QY - carrier_in[1]) * window + n / 2.0
    coords = np.array([iy, ix])
    re = ndimage.map_coordinates(S.real, coords, order=1, mode="constant", cval=0.0)
    im = ndimage.map_coordinates(S.imag, coords, order=1, mode="constant", cval=0.0)

    out = (re + 1j * im) * rotation_jacobian(A, PX, PY, W)
    out = np.where(valid, out, 0.0)
    return out, QX, QY, valid


def _carrier(M, wavelength):
    return (M[0, 2] / wavelength, M[1, 2] / wavelength)


def _is_identity(M):
    return np.allclose(M, np.eye(3), rtol=0.0, atol=1e-15)


def propagate_rotated(f, z, rotation, direction="forward", pad=None, band_limit=False):
    """Propagation onto a receiver plane rotated by the composed rotation.

    The geometric carrier tilt of the rotated frame is removed from the result.
    """
    _check_rotation(rotation)
    if direction not in ("forward", "reverse"):
        raise ConfigurationError(f"direction must be forward or reverse, got {direction!r}")
    M = rotation_matrix(rotation)
    if _is_identity(M):
        return propagate(f, z if direction == "forward" else -z, pad=pad, band_limit=band_limit)

    padded = _should_pad(z, pad)
    values = pad_values(f.values, PAD_FACTOR) if padded else f.values
    spec = f.spec.scaled(PAD_FACTOR) if padded else f.spec
    lam = f.wavelength
    window = spec.n * spec.pitch
    carrier = _carrier(M, lam)

    if direction == "forward":
        S, QX, QY, valid = _remap_spectrum(values, spec, lam, M, (0.0, 0.0), carrier)
        S = S * _transfer_at(QX, QY, lam, z, band_limit, window)
    else:
        S, _, _, valid = _remap_spectrum(values, spec, lam, M.T, carrier, (0.0, 0.0))
        nu = sfft.fftshift(_fft_freqs(spec.n, spec.pitch))
        NX, NY = np.meshgrid(nu, nu)
        S = S * _transfer_at(NX, NY, lam, -z, band_limit, window)

    out = sfft.ifft2(sfft.ifftshift(np.where(valid, S, 0.0)), workers=FFT_WORKERS)
    if padded:
        out = crop_values(out, f.spec.n)
    return f.with_values(out)


def return_rotated(f, z, rotation, pad=None, band_limit=False):
    """Counter-pass from a rotated receiver: inverse rotation, same positive z."""
    return propagate_rotated(f, -z, rotation, "reverse", pad=pad, band_limit=band_limit)


# ── Fresnel-integral oracles ─────────────────────────────────────

def fresnel_kernel_1d(offsets, wavelength, z):
    return np.exp(1j * np.pi * offsets**2 / (wavelength * z))


def fresnel_reference(f, z):
    """Direct quadrature of the Fresnel diffraction integral (small grids).

    The double sum over source cells factorises into one chirp matrix per axis,
    so the quadrature is evaluated as Ay·U·Axᵀ with the Δ² cell weight.
    """
    if not z > 0:
        raise DomainError(f"fresnel_reference needs z > 0, got {z}")
    lam = f.wavelength
    c = f.spec.coords
    chirp = fresnel_kernel_1d(c[:, None] - c[None, :], lam, z)
    prefactor = np.exp(1j * f.k * z) / (1j * lam * z) * f.spec.pitch**2
    return f.with_values(prefactor * (chirp @ f.values @ chirp.T))


def fresnel_convolution(f, z):
    """Linear convolution of f with the sampled Fresnel impulse response."""
    if not z > 0:
        raise DomainError(f"fresnel_convolution needs z > 0, got {z}")
    n = f.spec.n
    lam = f.wavelength
    offsets = (np.arange(2 * n - 1) - (n - 1)) * f.spec.pitch
    k1 = fresnel_kernel_1d(offsets, lam, z)
    h = np.exp(1j * f.k * z) / (1j * lam * z) * np.outer(k1, k1) * f.spec.pitch**2
    return f.with_values(signal.fftconvolve(f.values, h, mode="same"))


# ── Masks ────────────────────────────────────────────────────────

def apply_aperture(f, radius):
    if not radius > 0:
        raise ConfigurationError(f"aperture radius must be > 0, got {radius}")
    mask = f.spec.radius_squared() <= radius**2
    return f.with_values(np.where(mask, f.values, 0.0))


def apply_lens(f, radius, focal):
    """Thin lens exp(−iπ r²/(λ f)) inside the aperture."""
    if focal == 0:
        raise ConfigurationError("lens focal length must be non-zero")
    r2 = f.spec.radius_squared()
    phase = np.exp(-1j * np.pi * r2 / (f.wavelength * focal))
    return f.with_values(np.where(r2 <= radius**2, f.values * phase, 0.0))


def lens_is_sampled(spec, wavelength, radius, focal):
    """True when the lens chirp at the aperture rim is below Nyquist."""
    return spec.pitch <= wavelength * abs(focal) / (2.0 * radius)


_SIDE_AXIS = {"+x": (0, 1.0), "-x": (0, -1.0), "+y": (1, 1.0), "-y": (1, -1.0)}


def apply_obstruction(f, radius_B, depth_d, side="-x"):
    """Aperture of radius_B with an opaque edge intruding depth_d from `side`."""
    if not 0.0 <= depth_d <= 2.0 * radius_B:
        raise DomainError(
            f"obstruction depth must lie in [0, {2 * radius_B:g}] m, got {depth_d:g}"
        )
    try:
        axis, sign = _SIDE_AXIS[side]
    except KeyError:
        raise ConfigurationError(f"obstruction side must be one of {sorted(_SIDE_AXIS)}, got {side!r}")
    coord = sign * f.spec.mesh()[axis]
    keep = (f.spec.radius_squared() <= radius_B**2) & (coord <= radius_B - depth_d)
    return f.with_values(np.where(keep, f.values, 0.0))


# ── Focal-plane transforms ───────────────────────────────────────

def centered_dft(values):
    """Σ u_j exp(−i2π(j−c)(k−c)/n) on both axes, c = (n−1)/2."""
    n = values.shape[0]
    c = (n - 1) / 2.0
    ph = np.exp(2j * np.pi * c * np.arange(n) / n)
    ph2 = np.outer(ph, ph)
    glob = np.exp(-2j * np.pi * 2.0 * c * c / n)
    return glob * ph2 * sfft.fft2(values * ph2, workers=FFT_WORKERS)


def focal_spec(spec, wavelength, focal):
    pitch = wavelength * abs(focal) / (spec.n * spec.pitch)
    return GridSpec(spec.n, spec.n * pitch / 2.0)


def focus_to_plane(f, radius, focal):
    """Field in the back focal plane of a lens (aperture radius, focal length).

    Output lives on a grid of pitch λ·focal/(nΔ).
    """
    u = apply_aperture(f, radius)
    fspec = focal_spec(f.spec, f.wavelength, focal)
    lam = f.wavelength
    pref = np.exp(1j * f.k * focal) / (1j * lam * focal) * f.spec.pitch**2
    chirp = np.exp(1j * np.pi * fspec.radius_squared() / (lam * focal))
    return ComplexField(fspec, pref * chirp * centered_dft(u.values), lam)


def unfocus_from_plane(g, radius, focal, spec):
    """Back from the focal plane through the lens onto the lens grid `spec`."""
    lam = g.wavelength
    expected = focal_spec(spec, lam, focal)
    if not math.isclose(expected.pitch, g.spec.pitch, rel_tol=1e-9):
        raise ConfigurationError("focal-plane field does not match the lens grid")
    pref = np.exp(1j * g.k * focal) / (1j * lam * focal) * g.spec.pitch**2
    chirp = np.exp(1j * np.pi * g.spec.radius_squared() / (lam * focal))
    out = ComplexField(spec, pref * centered_dft(g.values * chirp), lam)
    return apply_aperture(out, radius)


# ── IRS ──────────────────────────────────────────────────────────

def irs_phase_gradient(g):
    gx = (math.cos(math.pi / 2 - g.theta_i) * math.cos(g.phi_i)
          + math.cos(math.pi / 2 - g.theta_r) * math.cos(g.phi_r))
    gy = (math.cos(math.pi / 2 - g.theta_i) * math.sin(g.phi_i)
          + math.cos(math.pi / 2 - g.theta_r) * math.sin(g.phi_r))
    return gx, gy


def apply_tilt(f, sx, sy):
    """Linear phase exp(i2π/λ·(sx·x + sy·y)), sx/sy direction cosines."""
    X, Y = f.spec.mesh()
    return f.with_values(f.values * np.exp(2j * np.pi / f.wavelength * (sx * X + sy * Y)))


def apply_irs(f, g, direction="forward", gradient=None):
    """m·exp(jΓ(x, y)) with Γ = 2π/λ·(Γx·x + Γy·y); reverse negates the gradient."""
    gx, gy = gradient if gradient is not None else irs_phase_gradient(g)
    if direction == "reverse":
        gx, gy = -gx, -gy
    elif direction != "forward":
        raise ConfigurationError(f"direction must be forward or reverse, got {direction!r}")
    return apply_tilt(f, gx, gy).scaled(g.amplitude_reflection)


def irs_relay(f, g, direction="forward", programmed_gradient=None):
    """Beam frame -> IRS plane -> reflected beam frame.

    Neutral in phase when the programmed gradient equals the geometric one.
    """
    sign = 1.0 if direction == "forward" else -1.0
    u_i = g.incident_direction
    u_r = g.reflected_direction
    onto = apply_tilt(f, -sign * u_i[0], -sign * u_i[1])
    reflected = apply_irs(onto, g, direction, gradient=programmed_gradient)
    return apply_tilt(reflected, -sign * u_r[0], -sign * u_r[1])


def irs_path_lengths(g):
    den_i = -math.cos(g.phi_i) * math.sin(g.theta_i)
    den_r = math.cos(g.phi_r) * math.sin(g.theta_r)
    if abs(den_i) < 1e-12 or abs(den_r) < 1e-12:
        raise GeometryError("IRS geometry has a grazing leg (zero denominator)")
    d_ti = g.D_x_i / den_i
    d_ir = g.D_x_r / den_r
    if not (d_ti > 0 and d_ir > 0):
        raise GeometryError(
            f"IRS path lengths must be positive, got d_ti={d_ti:g} m, d_ir={d_ir:g} m"
        )
    return d_ti, d_ir
