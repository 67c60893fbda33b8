"""sRGB / CIE L*a*b* / HSV conversions and hue statistics.

All conversions are pixel-wise and operate on arrays whose last axis holds the
three channels, so single pixels, images and image stacks share one code path.
RGB values live in [0, 1]; Lab uses L in [0, 100] and a, b roughly in
[-110, 110]. Reference white is D65, companding is the sRGB curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from PIL import Image

AB_SCALE = 110.0

# sRGB primaries -> XYZ, D65
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# white = M @ (1, 1, 1) keeps the achromatic axis exact
WHITE_D65 = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


class ColorRangeError(ValueError):
    """Input channel values fall outside the valid range of their space."""


def _check_channels(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != 3:
        raise ValueError(f"{name}: expected trailing channel axis of size 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ColorRangeError(f"{name}: non-finite values")
    return arr


def validate_rgb(rgb, tol: float = 1e-9) -> np.ndarray:
    rgb = _check_channels(rgb, "rgb")
    lo, hi = rgb.min(), rgb.max()
    if lo < -tol or hi > 1.0 + tol:
        raise ColorRangeError(f"rgb values must lie in [0, 1], got range [{lo:.6g}, {hi:.6g}]")
    return np.clip(rgb, 0.0, 1.0)


def validate_lab(lab, tol: float = 1e-6) -> np.ndarray:
    lab = _check_channels(lab, "lab")
    L, ab = lab[..., 0], lab[..., 1:]
    if L.min() < -tol or L.max() > 100.0 + tol:
        raise ColorRangeError(f"L must lie in [0, 100], got [{L.min():.6g}, {L.max():.6g}]")
    if np.abs(ab).max(initial=0.0) > AB_SCALE + tol:
        raise ColorRangeError(f"a, b must lie in [-{AB_SCALE:g}, {AB_SCALE:g}]")
    return lab


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb) -> np.ndarray:
    """Convert sRGB in [0, 1] to L*a*b* (D65).

    Raises :class:`ColorRangeError` for channels outside [0, 1].
    """
    rgb = validate_rgb(rgb)
    xyz = srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / WHITE_D65[i]) for i in range(3))
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab, validate: bool = True) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`. Out-of-gamut results are clamped to [0, 1]."""
    lab = validate_lab(lab) if validate else _check_channels(lab, "lab")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(f) * WHITE_D65[i] for i, f in enumerate((fx, fy, fz))], axis=-1)
    return np.clip(linear_to_srgb(xyz @ _XYZ_TO_RGB.T), 0.0, 1.0)


def lab_in_gamut(lab, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of Lab pixels whose unclamped sRGB lies in [0, 1]."""
    lab = _check_channels(lab, "lab")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(f) * WHITE_D65[i] for i, f in enumerate((fx, fy, fz))], axis=-1)
    lin = xyz @ _XYZ_TO_RGB.T
    return np.all((lin >= -tol) & (lin <= 1.0 + tol), axis=-1)


def fit_chroma_to_gamut(lab, iterations: int = 24) -> np.ndarray:
    """Shrink a, b towards zero per pixel until the colour is displayable.

    L is left untouched, so the displayed lightness matches the input exactly
    (up to 8-bit quantisation). Uses bisection on the chroma scale factor.
    """
    lab = np.array(_check_channels(lab, "lab"), copy=True)
    lab[..., 0] = np.clip(lab[..., 0], 0.0, 100.0)
    ok = lab_in_gamut(lab)
    if ok.all():
        return lab
    lo = np.zeros(ok.shape)
    hi = np.ones(ok.shape)
    base = lab[..., 1:].copy()
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        trial = np.concatenate([lab[..., :1], base * mid[..., None]], axis=-1)
        inside = lab_in_gamut(trial)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    scale = np.where(ok, 1.0, lo)
    lab[..., 1:] = base * scale[..., None]
    return lab


def normalize_ab(ab: np.ndarray) -> np.ndarray:
    return np.asarray(ab) / AB_SCALE


def denormalize_ab(ab: np.ndarray) -> np.ndarray:
    return np.asarray(ab) * AB_SCALE


def normalize_l(L: np.ndarray) -> np.ndarray:
    """Map L in [0, 100] to [-1, 1] for network input."""
    return np.asarray(L) / 50.0 - 1.0


def denormalize_l(L: np.ndarray) -> np.ndarray:
    return (np.asarray(L) + 1.0) * 50.0


class HSV(NamedTuple):
    hue: np.ndarray  # degrees in [0, 360); NaN where undefined (achromatic)
    saturation: np.ndarray
    value: np.ndarray

    @property
    def hue_defined(self) -> np.ndarray:
        return ~np.isnan(self.hue)


def rgb_to_hsv(rgb) -> HSV:
    rgb = validate_rgb(rgb)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.select(
        [v == r, v == g],
        [((g - b) / safe_c) % 6.0, (b - r) / safe_c + 2.0],
        (r - g) / safe_c + 4.0,
    )
    hue = np.where(c > 0, (60.0 * h) % 360.0, np.nan)
    return HSV(hue, s, v)


@dataclass(frozen=True)
class HueHistogram:
    edges: np.ndarray  # bin_count + 1 edges in degrees, 0 .. 360
    frequencies: np.ndarray
    sample_count: int  # number of chromatic pixels that contributed

    @property
    def bins(self) -> list[tuple[tuple[float, float], float]]:
        return [
            ((float(self.edges[i]), float(self.edges[i + 1])), float(f))
            for i, f in enumerate(self.frequencies)
        ]

    def bin_of(self, hue_deg: float) -> int:
        return int(np.searchsorted(self.edges, hue_deg % 360.0, side="right") - 1)

    def mass_between(self, lo_deg: float, hi_deg: float) -> float:
        """Total frequency of bins whose lower edge lies in [lo_deg, hi_deg)."""
        lower = self.edges[:-1]
        return float(self.frequencies[(lower >= lo_deg) & (lower < hi_deg)].sum())


def hue_histogram(images: Iterable, bin_count: int = 36, min_saturation: float = 0.0) -> HueHistogram:
    """Normalised histogram of HSV hue over every chromatic pixel of ``images``.

    Pixels with undefined hue (S == 0) or saturation below ``min_saturation``
    are excluded. Order of the images does not affect the result.
    """
    if bin_count < 2:
        raise ValueError("bin_count must be >= 2")
    edges = np.linspace(0.0, 360.0, bin_count + 1)
    counts = np.zeros(bin_count, dtype=np.int64)
    n_images = 0
    for img in images:
        n_images += 1
        hsv = rgb_to_hsv(img)
        keep = hsv.hue_defined & (hsv.saturation >= min_saturation)
        idx = np.floor(hsv.hue[keep] / 360.0 * bin_count).astype(np.int64)
        counts += np.bincount(np.clip(idx, 0, bin_count - 1), minlength=bin_count)
    if n_images == 0:
        raise ValueError("hue_histogram needs at least one image")
    total = int(counts.sum())
    if total == 0:
        raise ValueError("no chromatic pixels: every pixel is achromatic")
    return HueHistogram(edges=edges, frequencies=counts / total, sample_count=total)


def load_rgb(path: str | Path) -> np.ndarray:
    """Read an 8-bit image file as float RGB in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb)).save(path)
