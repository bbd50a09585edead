"""Deformation fields, Gaussian smoothing, bending lines and the colour map.

Deformation is positive upward: ``h_after - h_before``.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from scipy import ndimage

from .errors import BadColorParams, ChainageOutOfRange, SigmaSmallerThanCell
from .surface import Axis, HeightGrid, Profile, Raster, sample_profile

MODES = ("diff-then-smooth", "smooth-then-diff")
NODATA_RGB = (128, 128, 128)


@dataclass
class DeformationField(Raster):
    epoch_before: str = ""
    epoch_after: str = ""


def diff_grids(before: Raster, after: Raster) -> DeformationField:
    """Cell-wise ``after - before``; NaN wherever either input is NODATA."""
    before.check_same_frame(after)
    return DeformationField(
        before.origin_e, before.origin_n, before.cell_size,
        after.values - before.values,
        epoch_before=getattr(before, "epoch_id", ""),
        epoch_after=getattr(after, "epoch_id", ""),
    )


@dataclass(frozen=True)
class SmoothingSpec:
    sigma: float  # m
    truncate: float = 4.0  # kernel radius in multiples of sigma

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("smoothing sigma must be positive")
        if self.truncate < 3:
            raise ValueError("kernel truncation must be at least 3 sigma")


def gaussian_kernel(sigma_cells: float, truncate: float = 4.0) -> np.ndarray:
    """Normalized discrete Gaussian ``exp(-k^2 / 2s^2)``, ``|k| <= round(truncate*s)``."""
    radius = int(truncate * sigma_cells + 0.5)
    k = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma_cells) ** 2)
    return w / w.sum()


def normalized_convolution(values: np.ndarray, sigma_cells: float, truncate: float = 4.0) -> np.ndarray:
    """Separable Gaussian smoothing that ignores NaN cells.

    The kernel is renormalized over the valid cells it covers, and cells that
    were NaN stay NaN, so holes are never filled.
    """
    v = np.asarray(values, dtype=float)
    valid = np.isfinite(v)
    kern = gaussian_kernel(sigma_cells, truncate)
    num = np.where(valid, v, 0.0)
    den = valid.astype(float)
    for ax in range(v.ndim):
        num = ndimage.correlate1d(num, kern, axis=ax, mode="constant", cval=0.0)
        den = ndimage.correlate1d(den, kern, axis=ax, mode="constant", cval=0.0)
    out = np.full(v.shape, np.nan)
    ok = valid & (den > 0)
    out[ok] = num[ok] / den[ok]
    return out


def _sigma_cells(sigma: float, cell: float) -> float:
    if sigma < cell / 2:
        warnings.warn(
            f"smoothing sigma {sigma} m is below half the sample spacing {cell} m",
            SigmaSmallerThanCell, stacklevel=3,
        )
    return sigma / cell


def gaussian_smooth(obj, spec: SmoothingSpec):
    """Smooth a raster (2D) or a profile (1D) with a metric sigma.

    Returns an object of the same type.
    """
    if isinstance(obj, Raster):
        s = _sigma_cells(spec.sigma, obj.cell_size)
        return obj.with_values(normalized_convolution(obj.values, s, spec.truncate))
    if isinstance(obj, Profile):
        s = _sigma_cells(spec.sigma, obj.spacing)
        return obj.with_values(normalized_convolution(obj.values, s, spec.truncate))
    if isinstance(obj, BendingLine):
        return obj.with_values(gaussian_smooth(obj.profile, spec).values)
    raise TypeError(f"cannot smooth {type(obj).__name__}")


@dataclass
class BendingLine:
    profile: Profile  # values: deformation in m, positive up
    epoch_before: str
    epoch_after: str
    sigma: float
    mode: str

    @property
    def chainage(self) -> np.ndarray:
        return self.profile.chainage

    @property
    def values(self) -> np.ndarray:
        return self.profile.values

    def with_values(self, values) -> "BendingLine":
        return BendingLine(self.profile.with_values(values), self.epoch_before,
                           self.epoch_after, self.sigma, self.mode)


def bending_line(
    before: HeightGrid,
    after: HeightGrid,
    axis: Axis,
    spacing: float,
    spec: SmoothingSpec,
    mode: str = "diff-then-smooth",
    corridor: str = "offsets",
) -> BendingLine:
    """Deformation profile along ``axis`` between two epochs.

    ``diff-then-smooth`` subtracts the unfiltered height profiles and smooths
    the difference; ``smooth-then-diff`` smooths each height profile first.
    Both are identical on hole-free data; with NODATA the kernel
    renormalization makes them differ.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    before.check_same_frame(after)
    pb = sample_profile(before, axis, spacing, corridor=corridor)
    pa = sample_profile(after, axis, spacing, corridor=corridor)
    if mode == "diff-then-smooth":
        prof = gaussian_smooth(pa.with_values(pa.values - pb.values), spec)
    else:
        sa, sb = gaussian_smooth(pa, spec), gaussian_smooth(pb, spec)
        prof = sa.with_values(sa.values - sb.values)
    return BendingLine(prof, before.epoch_id, after.epoch_id, spec.sigma, mode)


def _extent_along(raster: Raster, point: np.ndarray, direction: np.ndarray) -> float:
    """Largest t with ``point + s*direction`` inside the raster for all |s| <= t."""
    e0, n0, e1, n1 = raster.bounds
    t = math.inf
    for p, d, lo, hi in ((point[0], direction[0], e0, e1), (point[1], direction[1], n0, n1)):
        if abs(d) > 1e-15:
            t = min(t, (hi - p) / d if d > 0 else (lo - p) / d,
                    (p - lo) / d if d > 0 else (p - hi) / d)
    return max(t, 0.0)


def cross_profile(
    field: Raster,
    chainage: float,
    main_axis: Axis,
    spacing: float,
    spec: SmoothingSpec | None,
    half_length: float | None = None,
    half_width: float = 0.0,
    corridor: str = "offsets",
) -> Profile:
    """Profile perpendicular to ``main_axis`` at ``chainage``.

    Chainage 0 of the result lies on the left of the main axis (north for an
    eastbound axis) and increases to the right. ``half_length`` defaults to
    the raster extent through the crossing point.
    """
    if not (0.0 <= chainage <= main_axis.length):
        raise ChainageOutOfRange(f"chainage {chainage} outside [0, {main_axis.length}]")
    centre = main_axis.point_at(chainage)
    left = main_axis.normal
    if half_length is None:
        half_length = _extent_along(field, centre, left)
        half_length = spacing * math.floor(half_length / spacing)
    if not half_length > 0:
        raise ChainageOutOfRange("cross profile has zero length inside the raster")
    start = centre + half_length * left
    end = centre - half_length * left
    prof = sample_profile(field, Axis(tuple(start), tuple(end), half_width), spacing, corridor=corridor)
    return gaussian_smooth(prof, spec) if spec is not None else prof


# --------------------------------------------------------------------------
# colour map
# --------------------------------------------------------------------------

def render_deformation_map(field: Raster, threshold: float = 0.0005, saturation: float = 0.010) -> np.ndarray:
    """RGB image (north-up, uint8) of a deformation field.

    ``|d| < threshold`` is black, lowering is red and lifting green, both
    scaled linearly to 255 at ``saturation``; NODATA is grey.
    """
    if not (threshold >= 0 and saturation > threshold):
        raise BadColorParams("need 0 <= threshold < saturation")
    d = field.values[::-1]
    mag = np.minimum(np.abs(np.nan_to_num(d)), saturation)
    level = np.floor(255.0 * mag / saturation + 0.5).astype(np.uint8)
    rgb = np.zeros(d.shape + (3,), dtype=np.uint8)
    coloured = np.isfinite(d) & (np.abs(np.nan_to_num(d)) >= threshold)
    down = coloured & (d < 0)
    up = coloured & (d > 0)
    rgb[..., 0][down] = level[down]
    rgb[..., 1][up] = level[up]
    rgb[~np.isfinite(d)] = NODATA_RGB
    return rgb


def write_ppm(rgb: np.ndarray, stream: BinaryIO) -> None:
    """Binary PPM (P6, maxval 255)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    stream.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
    stream.write(rgb.tobytes())


def read_ppm(data: bytes) -> np.ndarray:
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise ValueError("not a P6 maxval-255 PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data[m.end(): m.end() + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
