"""Ground-truth environment maps generated from a known illumination.

A light is described by its color temperature and a compass direction.  The
color comes from a blackbody spectrum projected onto analytic CIE 1931 color
matching functions; the direction becomes a horizontal Gaussian bump of
brightness on a small 16x32 latitude-longitude map.

Two encodings are produced:

* an RGB image of shape (16, 32, 3);
* a compact 514-vector ``[hue, saturation, brightness x 512]`` where hue and
  saturation are the HSV coordinates of the light color and the brightness is
  the HSV value channel of every map pixel (row-major).
"""

import colorsys
from functools import lru_cache

import numpy as np
import torch

ENVMAP_HEIGHT = 16
ENVMAP_WIDTH = 32
ENVMAP_PIXELS = ENVMAP_HEIGHT * ENVMAP_WIDTH
COMPACT_SIZE = ENVMAP_PIXELS + 2

KELVIN_RANGE = (1000.0, 12000.0)

# second radiation constant, m*K
_C2 = 1.4388e-2
_WAVELENGTHS_NM = np.arange(360.0, 831.0, 1.0)

# linear sRGB from CIE XYZ (D65)
_XYZ_TO_SRGB = np.array(
    [
        [3.2406, -1.5372, -0.4986],
        [-0.9689, 1.8758, 0.0415],
        [0.0557, -0.2040, 1.0570],
    ]
)


def _lobe(lam, mean, sigma_lo, sigma_hi):
    sigma = np.where(lam < mean, sigma_lo, sigma_hi)
    return np.exp(-0.5 * ((lam - mean) / sigma) ** 2)


def _cie1931_cmf(lam):
    """Multi-lobe Gaussian fit of the CIE 1931 2-degree observer (Wyman, Sloan & Shirley 2013)."""
    x = (
        1.056 * _lobe(lam, 599.8, 37.9, 31.0)
        + 0.362 * _lobe(lam, 442.0, 16.0, 26.7)
        - 0.065 * _lobe(lam, 501.1, 20.4, 26.2)
    )
    y = 0.821 * _lobe(lam, 568.8, 46.9, 40.5) + 0.286 * _lobe(lam, 530.9, 16.3, 31.1)
    z = 1.217 * _lobe(lam, 437.0, 11.8, 36.0) + 0.681 * _lobe(lam, 459.0, 26.0, 13.8)
    return x, y, z


_CMF = _cie1931_cmf(_WAVELENGTHS_NM)


def _srgb_encode(linear):
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1 / 2.4) - 0.055)


def _blackbody_xyz(temperature):
    lam_m = _WAVELENGTHS_NM * 1e-9
    spectrum = 1.0 / (lam_m**5 * np.expm1(_C2 / (lam_m * float(temperature))))
    return np.array([np.trapezoid(spectrum * cmf, _WAVELENGTHS_NM) for cmf in _CMF])


def kelvin_to_xy(temperature):
    """CIE 1931 chromaticity of a blackbody radiator."""
    xyz = _blackbody_xyz(temperature)
    return xyz[0] / xyz.sum(), xyz[1] / xyz.sum()


@lru_cache(maxsize=None)
def _kelvin_to_rgb_cached(temperature):
    xyz = _blackbody_xyz(temperature)
    linear = np.clip(_XYZ_TO_SRGB @ xyz, 0.0, None)
    linear = linear / linear.max()
    rgb = _srgb_encode(linear)
    rgb = rgb / rgb.max()
    return tuple(float(v) for v in rgb)


def kelvin_to_rgb(temperature):
    """Display RGB of a blackbody light, scaled so the largest channel is 1.

    The blackbody spectrum is integrated against the analytic color matching
    functions on a fixed 1 nm grid, mapped to linear sRGB, clipped at 0 and
    gamma encoded.  6500 K lands within 0.025 of pure white.

    Returns a float64 array of shape (3,).
    """
    t = float(temperature)
    if not (KELVIN_RANGE[0] <= t <= KELVIN_RANGE[1]) or not np.isfinite(t):
        raise ValueError(f"temperature {temperature} K outside supported range {KELVIN_RANGE}")
    return np.array(_kelvin_to_rgb_cached(t))


def light_hue_saturation(temperature):
    """HSV hue in [0, 1) and saturation in [0, 1] of ``kelvin_to_rgb(temperature)``."""
    h, s, _ = colorsys.rgb_to_hsv(*kelvin_to_rgb(temperature))
    return h, s


def direction_profile(direction_degrees, width=ENVMAP_WIDTH, height=ENVMAP_HEIGHT):
    """Horizontal brightness profile for a light at the given azimuth.

    Gaussian over the column index with wrap-around distance; the mean sits at
    ``direction_degrees / 360 * width`` and the standard deviation is 10% of
    the map height.  The result is rescaled so its maximum is exactly 1.
    """
    mu = (float(direction_degrees) % 360.0) / 360.0 * width
    sigma = 0.1 * height
    cols = np.arange(width, dtype=np.float64)
    dist = np.abs(cols - mu)
    dist = np.minimum(dist, width - dist)
    profile = np.exp(-(dist**2) / (2.0 * sigma**2))
    return profile / profile.max()


def generate_envmap_rgb(illum):
    """16x32x3 environment map: the light color scaled by the direction profile."""
    profile = direction_profile(illum.direction_degrees)
    rgb = kelvin_to_rgb(illum.color_temperature)
    row = profile[:, None] * rgb[None, :]
    return np.repeat(row[None, :, :], ENVMAP_HEIGHT, axis=0)


def generate_envmap_hsl(illum):
    """Compact 514-vector ``[hue, saturation, brightness...]`` for an illumination.

    Brightness is the direction profile replicated over all rows and
    flattened row-major, so its maximum (1.0) appears once per row.
    """
    hue, sat = light_hue_saturation(illum.color_temperature)
    profile = direction_profile(illum.direction_degrees)
    brightness = np.tile(profile, ENVMAP_HEIGHT)
    return np.concatenate([[hue, sat], brightness])


def hsv_to_rgb(hue, saturation, value):
    """Vectorized HSV to RGB; broadcasting inputs, output has a trailing RGB axis."""
    h = np.asarray(hue, dtype=np.float64) % 1.0
    s = np.asarray(saturation, dtype=np.float64)
    v = np.asarray(value, dtype=np.float64)
    h, s, v = np.broadcast_arrays(h, s, v)
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def compact_to_rgb(compact):
    """Expand a compact 514-vector back to a 16x32x3 RGB map."""
    compact = np.asarray(compact, dtype=np.float64)
    if compact.shape != (COMPACT_SIZE,):
        raise ValueError(f"expected compact envmap of shape ({COMPACT_SIZE},), got {compact.shape}")
    value = compact[2:].reshape(ENVMAP_HEIGHT, ENVMAP_WIDTH)
    return hsv_to_rgb(compact[0], compact[1], value)


def envmap_targets(illuminations, kind, dtype=torch.float32):
    """Stack ground-truth maps for a batch of illuminations into a tensor.

    ``kind="rgb"`` gives shape (B, 3, 16, 32); ``kind="compact"`` gives (B, 514).
    """
    if kind == "rgb":
        maps = [_cached_rgb(i.color_temperature, i.direction) for i in illuminations]
        return torch.as_tensor(np.stack(maps), dtype=dtype).permute(0, 3, 1, 2).contiguous()
    if kind == "compact":
        maps = [_cached_compact(i.color_temperature, i.direction) for i in illuminations]
        return torch.as_tensor(np.stack(maps), dtype=dtype)
    raise ValueError(f"unknown envmap kind {kind!r}")


@lru_cache(maxsize=None)
def _cached_rgb(temperature, direction):
    from .data import Illumination

    return generate_envmap_rgb(Illumination(temperature, direction))


@lru_cache(maxsize=None)
def _cached_compact(temperature, direction):
    from .data import Illumination

    return generate_envmap_hsl(Illumination(temperature, direction))


def upscale_nearest(image, factor=8):
    """Nearest-neighbor enlargement of an HxWxC array, for previews."""
    return np.repeat(np.repeat(image, factor, axis=0), factor, axis=1)
