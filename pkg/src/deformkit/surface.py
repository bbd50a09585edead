"""Height grids (DEMs) from point clouds and height profiles along axes.

Raster convention: ``values[i, j]`` is the cell whose lower-left corner is
``(origin_e + j*cell, origin_n + i*cell)``; row 0 is the southern-most row.
NODATA is stored as NaN in memory and as ``-9999`` on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, TextIO

import numpy as np

from .errors import (
    AxisOutsideGrid,
    EmptyCloud,
    FrameMismatch,
    MalformedLine,
    NonPositiveCellSize,
    TooFewPoints,
)
from .ingest import PointCloud

NODATA = -9999.0
AGGREGATORS = ("median", "mean", "min", "max")


@dataclass
class Raster:
    origin_e: float
    origin_n: float
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        if not self.cell_size > 0:
            raise NonPositiveCellSize(f"cell size must be positive, got {self.cell_size}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError("raster values must be a non-empty 2D array")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def frame(self) -> tuple[float, float, float, int, int]:
        return (self.origin_e, self.origin_n, self.cell_size, self.nrows, self.ncols)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.origin_e, self.origin_n,
                self.origin_e + self.ncols * self.cell_size,
                self.origin_n + self.nrows * self.cell_size)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        e = self.origin_e + (np.arange(self.ncols) + 0.5) * self.cell_size
        n = self.origin_n + (np.arange(self.nrows) + 0.5) * self.cell_size
        return np.meshgrid(e, n)

    def with_values(self, values: np.ndarray):
        return replace(self, values=np.asarray(values, dtype=float))

    def check_same_frame(self, other: "Raster") -> None:
        if self.frame != other.frame:
            raise FrameMismatch(f"raster frames differ: {self.frame} vs {other.frame}")


@dataclass
class HeightGrid(Raster):
    epoch_id: str = ""

    @property
    def heights(self) -> np.ndarray:
        return self.values


@dataclass(frozen=True)
class Axis:
    """Straight line from ``start`` to ``end`` in (e, n); chainage 0 at ``start``."""

    start: tuple[float, float]
    end: tuple[float, float]
    half_width: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))
        if self.start == self.end:
            raise ValueError("axis start and end coincide")
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.end, self.start)
        return d / np.hypot(*d)

    @property
    def normal(self) -> np.ndarray:
        """Unit vector to the left of the direction of travel."""
        u = self.direction
        return np.array([-u[1], u[0]])

    def point_at(self, chainage, offset=0.0) -> np.ndarray:
        c = np.asarray(chainage, dtype=float)
        o = np.asarray(offset, dtype=float)
        return (np.asarray(self.start)
                + np.multiply.outer(c, self.direction)
                + np.multiply.outer(o, self.normal))

    def project(self, e, n) -> tuple[np.ndarray, np.ndarray]:
        """(chainage, left offset) of points."""
        de = np.asarray(e, dtype=float) - self.start[0]
        dn = np.asarray(n, dtype=float) - self.start[1]
        u, nv = self.direction, self.normal
        return de * u[0] + dn * u[1], de * nv[0] + dn * nv[1]


@dataclass
class Profile:
    chainage: np.ndarray
    values: np.ndarray
    spacing: float
    axis: Axis | None = None

    def __post_init__(self):
        self.chainage = np.asarray(self.chainage, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.chainage.shape != self.values.shape or self.chainage.ndim != 1:
            raise ValueError("chainage and values must be 1D and equally long")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    def __len__(self) -> int:
        return len(self.chainage)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def with_values(self, values: np.ndarray) -> "Profile":
        return replace(self, values=np.asarray(values, dtype=float))


# --------------------------------------------------------------------------
# rasterization
# --------------------------------------------------------------------------

def grid_frame(bounds: Sequence[float], cell_size: float) -> tuple[float, float, int, int]:
    """(origin_e, origin_n, nrows, ncols) of a cell-aligned frame covering ``bounds``.

    ``bounds`` is (emin, nmin, emax, nmax); the origin snaps down to a multiple
    of ``cell_size`` so frames built for different epochs line up.
    """
    if not cell_size > 0:
        raise NonPositiveCellSize(f"cell size must be positive, got {cell_size}")
    emin, nmin, emax, nmax = map(float, bounds)
    oe = math.floor(emin / cell_size) * cell_size
    on = math.floor(nmin / cell_size) * cell_size
    ncols = int(math.floor((emax - oe) / cell_size)) + 1
    nrows = int(math.floor((nmax - on) / cell_size)) + 1
    return oe, on, nrows, ncols


def _aggregate(flat: np.ndarray, h: np.ndarray, size: int, aggregator: str, min_points: int) -> np.ndarray:
    out = np.full(size, np.nan)
    if len(flat) == 0:
        return out
    order = np.lexsort((h, flat))
    fs, hs = flat[order], h[order]
    cells, start, count = np.unique(fs, return_index=True, return_counts=True)
    if aggregator == "mean":
        agg = np.add.reduceat(hs, start) / count
    elif aggregator == "min":
        agg = hs[start]
    elif aggregator == "max":
        agg = hs[start + count - 1]
    else:
        lo = hs[start + (count - 1) // 2]
        hi = hs[start + count // 2]
        agg = 0.5 * (lo + hi)
    keep = count >= min_points
    out[cells[keep]] = agg[keep]
    return out


def rasterize_dem(
    cloud: PointCloud,
    cell_size: float,
    aggregator: str = "median",
    min_points_per_cell: int = 3,
    frame: Sequence[float] | Raster | None = None,
) -> HeightGrid:
    """Bin points into square cells and aggregate their heights.

    Parameters
    ----------
    cloud : PointCloud
    cell_size : float
        Cell edge length in metres.
    aggregator : {"median", "mean", "min", "max"}
    min_points_per_cell : int
        Cells with fewer member points are NODATA.
    frame : (origin_e, origin_n, nrows, ncols) or Raster, optional
        Fixed output frame, used to put several epochs on one raster. Points
        outside it are dropped. By default the frame covers the cloud with an
        origin snapped to a multiple of ``cell_size``.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot rasterize an empty cloud")
    if not cell_size > 0:
        raise NonPositiveCellSize(f"cell size must be positive, got {cell_size}")
    if aggregator not in AGGREGATORS:
        raise ValueError(f"aggregator must be one of {AGGREGATORS}")
    e, n, h = cloud.e, cloud.n, cloud.h
    if frame is None:
        oe, on, nrows, ncols = grid_frame((e.min(), n.min(), e.max(), n.max()), cell_size)
        clip = True
    else:
        if isinstance(frame, Raster):
            if frame.cell_size != cell_size:
                raise FrameMismatch("frame cell size differs from requested cell size")
            oe, on, _, nrows, ncols = frame.frame
        else:
            oe, on, nrows, ncols = frame
        clip = False
    col = np.floor((e - oe) / cell_size).astype(np.int64)
    row = np.floor((n - on) / cell_size).astype(np.int64)
    if clip:
        # guards floating-point spill at the extreme points
        np.clip(col, 0, ncols - 1, out=col)
        np.clip(row, 0, nrows - 1, out=row)
        inside = slice(None)
    else:
        inside = (col >= 0) & (col < ncols) & (row >= 0) & (row < nrows)
    flat = row[inside] * ncols + col[inside]
    vals = _aggregate(flat, h[inside], nrows * ncols, aggregator, max(1, int(min_points_per_cell)))
    return HeightGrid(oe, on, cell_size, vals.reshape(nrows, ncols), epoch_id=cloud.epoch_id)


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------

def bilinear(raster: Raster, e, n) -> np.ndarray:
    """Bilinear interpolation between cell centres; NaN where a weighted cell is NODATA
    or the point lies outside the hull of cell centres."""
    e = np.asarray(e, dtype=float)
    n = np.asarray(n, dtype=float)
    fx = (e - raster.origin_e) / raster.cell_size - 0.5
    fy = (n - raster.origin_n) / raster.cell_size - 0.5
    eps = 1e-9
    inside = (fx >= -eps) & (fx <= raster.ncols - 1 + eps) & (fy >= -eps) & (fy <= raster.nrows - 1 + eps)
    j0 = np.clip(np.floor(fx), 0, max(raster.ncols - 2, 0)).astype(int)
    i0 = np.clip(np.floor(fy), 0, max(raster.nrows - 2, 0)).astype(int)
    t = np.clip(fx - j0, 0.0, 1.0)
    u = np.clip(fy - i0, 0.0, 1.0)
    j1 = np.minimum(j0 + 1, raster.ncols - 1)
    i1 = np.minimum(i0 + 1, raster.nrows - 1)
    v = raster.values
    out = np.zeros(np.broadcast(e, n).shape)
    for w, ii, jj in (((1 - t) * (1 - u), i0, j0), (t * (1 - u), i0, j1),
                      ((1 - t) * u, i1, j0), (t * u, i1, j1)):
        hv = v[ii, jj]
        out = out + np.where(w == 0, 0.0, w * hv)
    return np.where(inside, out, np.nan)


def profile_chainages(length: float, spacing: float) -> np.ndarray:
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    count = int(math.floor(length / spacing + 1e-9)) + 1
    return spacing * np.arange(count)


CORRIDOR_OFFSETS = 5


def _strip_statistic(raster: Raster, axis: Axis, chainage: np.ndarray, spacing: float) -> np.ndarray:
    ok = raster.valid
    ee, nn = raster.cell_centers()
    c, off = axis.project(ee[ok], nn[ok])
    vals = raster.values[ok]
    keep = (np.abs(off) <= axis.half_width) & (c >= 0.0) & (c <= axis.length)
    station = np.floor(c[keep] / spacing + 0.5).astype(np.int64)
    inrange = station < len(chainage)
    station, vals = station[inrange], vals[keep][inrange]
    out = np.full(len(chainage), np.nan)
    if len(station):
        out_flat = _aggregate(station, vals, len(chainage), "median", 1)
        out[:] = out_flat
    return out


def sample_profile(
    grid: Raster,
    axis: Axis,
    spacing: float,
    corridor: str = "offsets",
) -> Profile:
    """Sample a raster along ``axis`` every ``spacing`` metres.

    With ``axis.half_width == 0`` each sample is a bilinear interpolation at
    the axis point. For a corridor (``half_width > 0``):

    ``corridor="offsets"``
        median of bilinear samples at 5 evenly spaced lateral offsets
        spanning ``[-half_width, half_width]``; NODATA if any of them is.
    ``corridor="strip"``
        median of every valid cell whose centre lies in the strip
        ``|offset| <= half_width`` and within half a spacing of the station.
        Meant for sparse DEMs where most cells hold no point.
    """
    chain = profile_chainages(axis.length, spacing)
    if axis.half_width == 0:
        pts = axis.point_at(chain)
        values = bilinear(grid, pts[:, 0], pts[:, 1])
    elif corridor == "offsets":
        offsets = np.linspace(-axis.half_width, axis.half_width, CORRIDOR_OFFSETS)
        samples = np.empty((CORRIDOR_OFFSETS, len(chain)))
        for k, o in enumerate(offsets):
            pts = axis.point_at(chain, o)
            samples[k] = bilinear(grid, pts[:, 0], pts[:, 1])
        values = np.median(samples, axis=0)
    elif corridor == "strip":
        values = _strip_statistic(grid, axis, chain, spacing)
    else:
        raise ValueError(f"unknown corridor mode {corridor!r}")
    if not np.any(np.isfinite(values)):
        raise AxisOutsideGrid("axis does not cross any valid raster cell")
    return Profile(chain, values, spacing, axis)


def interpolate_profile(scatter, raster_width: float, max_gap: float | None = None) -> Profile:
    """Piecewise-linear re-rastering of scattered (chainage, height) samples.

    Raster nodes sit at integer multiples of ``raster_width`` inside the
    scatter hull; nothing is extrapolated. Nodes inside a gap between
    consecutive samples wider than ``max_gap`` are NODATA (``None``, the
    default, disables the gap rule). Samples sharing a chainage are averaged.
    """
    if not raster_width > 0:
        raise ValueError("raster_width must be positive")
    arr = np.asarray(scatter, dtype=float).reshape(-1, 2)
    if len(arr) < 2:
        raise TooFewPoints("need at least two scatter points")
    order = np.argsort(arr[:, 0], kind="stable")
    c, h = arr[order, 0], arr[order, 1]
    uc, inv = np.unique(c, return_inverse=True)
    if len(uc) < 2:
        raise TooFewPoints("need at least two distinct chainages")
    if len(uc) != len(c):
        h = np.bincount(inv, weights=h) / np.bincount(inv)
        c = uc
    k0 = math.ceil(c[0] / raster_width - 1e-9)
    k1 = math.floor(c[-1] / raster_width + 1e-9)
    nodes = raster_width * np.arange(k0, k1 + 1)
    values = np.interp(nodes, c, h)
    if max_gap is not None:
        i = np.clip(np.searchsorted(c, nodes, side="right") - 1, 0, len(c) - 2)
        gap = c[i + 1] - c[i]
        tol = 1e-9 * raster_width
        on_sample = (np.abs(nodes - c[i]) <= tol) | (np.abs(nodes - c[i + 1]) <= tol)
        values = np.where((gap <= max_gap) | on_sample, values, np.nan)
    return Profile(nodes, values, raster_width)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _format_rows(values: np.ndarray, decimals: int) -> str:
    scaled = np.where(np.isfinite(values), np.round(values, decimals), NODATA)
    fmt = f"%.{decimals}f"
    lines = []
    for row in scaled:
        lines.append(" ".join([fmt % x if x != NODATA else "-9999" for x in row.tolist()]))
    return "\n".join(lines) + "\n"


def write_esri_ascii(raster: Raster, stream: TextIO, decimals: int = 4) -> None:
    """ESRI ASCII grid; first data row is the northern-most."""
    stream.write(f"ncols {raster.ncols}\n")
    stream.write(f"nrows {raster.nrows}\n")
    stream.write(f"xllcorner {raster.origin_e!r}\n")
    stream.write(f"yllcorner {raster.origin_n!r}\n")
    stream.write(f"cellsize {raster.cell_size!r}\n")
    stream.write("NODATA_value -9999\n")
    stream.write(_format_rows(raster.values[::-1], decimals))


def read_esri_ascii(stream: TextIO | str, epoch_id: str = "") -> HeightGrid:
    text = stream if isinstance(stream, str) else stream.read()
    lines = text.split("\n")
    header: dict[str, str] = {}
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        if len(parts) == 2 and parts[0][0].isalpha():
            header[parts[0].lower()] = parts[1]
            pos += 1
        else:
            break
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell = float(header["cellsize"])
    except (KeyError, ValueError):
        raise MalformedLine("incomplete ESRI ASCII header", pos + 1) from None
    if "xllcorner" in header:
        oe, on = float(header["xllcorner"]), float(header["yllcorner"])
    elif "xllcenter" in header:
        oe = float(header["xllcenter"]) - cell / 2
        on = float(header["yllcenter"]) - cell / 2
    else:
        raise MalformedLine("missing xllcorner/xllcenter", pos + 1)
    nodata = float(header.get("nodata_value", NODATA))
    try:
        data = np.array("\n".join(lines[pos:]).split(), dtype=float)
    except ValueError:
        raise MalformedLine("non-numeric raster value", pos + 1) from None
    if data.size != ncols * nrows:
        raise MalformedLine(f"expected {ncols * nrows} values, got {data.size}", pos + 1)
    grid = data.reshape(nrows, ncols)[::-1].copy()
    grid[grid == nodata] = np.nan
    return HeightGrid(oe, on, cell, grid, epoch_id=epoch_id)


def write_profile_csv(profile: Profile, stream: TextIO, decimals: int = 7) -> None:
    stream.write("chainage_m,value_m\n")
    fmt = f"%.{decimals}f"
    for c, v in zip(profile.chainage.tolist(), profile.values.tolist()):
        stream.write(f"{round(c, 9)!r}," + ("NA" if not math.isfinite(v) else fmt % v) + "\n")


def read_profile_csv(stream: TextIO | str) -> Profile:
    text = stream if isinstance(stream, str) else stream.read()
    chain, vals = [], []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.lower().startswith("chainage"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedLine("expected chainage_m,value_m", line_no)
        try:
            chain.append(float(parts[0]))
            vals.append(math.nan if parts[1].strip() == "NA" else float(parts[1]))
        except ValueError:
            raise MalformedLine("cannot parse profile row", line_no) from None
    if len(chain) < 2:
        raise TooFewPoints("profile needs at least two samples")
    return Profile(np.array(chain), np.array(vals), chain[1] - chain[0])
