"""Comparison of profile/areal results with point ground truth, and reporting.

Truth displacements are in mm, positive up. Method values come from lines or
fields in metres and are converted to mm here.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .deform import BendingLine
from .errors import EmptyReport, MalformedLine, PointOutsideExtent, TimeOutsideSeries
from .fileio import atomic_write_text
from .georef import ResidualTable, summarize_residuals, write_residual_table
from .ingest import SensorSeries
from .netadjust import PrecisionReport
from .surface import Axis, Profile, Raster

# "design" marks points whose displacement is known by construction (supports)
SOURCES = ("transducer", "tachymeter", "design")
DEFAULT_WINDOW = 0.05  # m


@dataclass(frozen=True)
class GroundTruthPoint:
    id: str
    displacement_mm: float
    source: str = "transducer"
    chainage: float | None = None
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if not math.isfinite(self.displacement_mm):
            raise ValueError("displacement must be finite")
        if self.chainage is None and self.position is None:
            raise ValueError("truth point needs a chainage or a position")


@dataclass
class ComparisonReport:
    method: str
    points: list[GroundTruthPoint]
    method_mm: np.ndarray
    truth_mm: np.ndarray
    diff_mm: np.ndarray
    window: float
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def mean(self) -> float:
        return float(np.mean(self.diff_mm))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.diff_mm**2)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.diff_mm)))

    def diff_of(self, point_id: str) -> float:
        for p, d in zip(self.points, self.diff_mm):
            if p.id == point_id:
                return float(d)
        raise KeyError(point_id)


def _line_value(chain: np.ndarray, values: np.ndarray, spacing: float, c0: float, window: float, pid: str) -> float:
    if not (chain[0] - spacing / 2 <= c0 <= chain[-1] + spacing / 2):
        raise PointOutsideExtent(pid)
    if window == 0:
        v = values[int(np.argmin(np.abs(chain - c0)))]
    else:
        sel = (np.abs(chain - c0) <= window + 1e-9) & np.isfinite(values)
        v = values[sel].mean() if sel.any() else math.nan
    if not math.isfinite(v):
        raise PointOutsideExtent(pid)
    return float(v)


def _field_value(raster: Raster, e: float, n: float, window: float, pid: str) -> float:
    e0, n0, e1, n1 = raster.bounds
    if not (e0 <= e <= e1 and n0 <= n <= n1):
        raise PointOutsideExtent(pid)
    if window == 0:
        j = min(int((e - e0) // raster.cell_size), raster.ncols - 1)
        i = min(int((n - n0) // raster.cell_size), raster.nrows - 1)
        v = raster.values[i, j]
    else:
        ee, nn = raster.cell_centers()
        sel = (np.hypot(ee - e, nn - n) <= window + 1e-9) & raster.valid
        v = raster.values[sel].mean() if sel.any() else math.nan
    if not math.isfinite(v):
        raise PointOutsideExtent(pid)
    return float(v)


def evaluate_at_points(
    target,
    truth: Sequence[GroundTruthPoint],
    window: float = DEFAULT_WINDOW,
    method: str = "",
    axis: Axis | None = None,
) -> ComparisonReport:
    """Compare a bending line, profile or deformation field with truth points.

    Parameters
    ----------
    target : BendingLine, Profile or Raster
        Values in metres, positive up.
    truth : sequence of GroundTruthPoint
    window : float
        0 takes the nearest sample (or the containing cell); otherwise the
        mean of valid samples within ``window`` metres.
    axis : Axis, optional
        Converts between chainage and position when a truth point only has
        the other one.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    if not truth:
        raise EmptyReport("no truth points to evaluate")
    if isinstance(target, BendingLine):
        prof = target.profile
        meta = {"epochs": f"{target.epoch_before}->{target.epoch_after}",
                "sigma_m": target.sigma, "mode": target.mode}
    else:
        prof = target
        meta = {}
    axis = axis or (prof.axis if isinstance(prof, Profile) else None)
    vals = []
    for p in truth:
        if isinstance(prof, Profile):
            c0 = p.chainage
            if c0 is None:
                if axis is None:
                    raise PointOutsideExtent(p.id)
                c0 = float(axis.project(*p.position)[0])
            vals.append(_line_value(prof.chainage, prof.values, prof.spacing, c0, window, p.id))
        else:
            pos = p.position
            if pos is None:
                if axis is None:
                    raise PointOutsideExtent(p.id)
                pos = tuple(axis.point_at(p.chainage))
            vals.append(_field_value(prof, pos[0], pos[1], window, p.id))
    method_mm = np.array(vals) * 1000.0
    truth_mm = np.array([p.displacement_mm for p in truth], dtype=float)
    return ComparisonReport(method, list(truth), method_mm, truth_mm, method_mm - truth_mm, window, meta)


def compare_values(method: str, truth: Sequence[GroundTruthPoint], method_mm, metadata=None) -> ComparisonReport:
    """Report for method values obtained elsewhere (e.g. tachymetric points)."""
    if not truth:
        raise EmptyReport("no truth points to compare")
    m = np.asarray(method_mm, dtype=float)
    t = np.array([p.displacement_mm for p in truth], dtype=float)
    return ComparisonReport(method, list(truth), m, t, m - t, 0.0, dict(metadata or {}))


def transducer_deformation(series: SensorSeries, t_before: float, t_after: float) -> float:
    """Change of a channel between two times, in mm, normalized to positive up.

    Values are linearly interpolated between samples. Down-positive channels
    (the sensor convention) are negated.
    """
    t0, t1 = series.times[0], series.times[-1]
    for t in (t_before, t_after):
        if not (t0 <= t <= t1):
            raise TimeOutsideSeries(f"time {t} outside [{t0}, {t1}] of channel {series.channel!r}")
    if t_before == t_after:
        return 0.0
    delta = float(np.interp(t_after, series.times, series.values)
                  - np.interp(t_before, series.times, series.values))
    if series.kind == "displacement" and series.down_positive:
        delta = -delta
    return delta


def centreline_truth(point_id: str, north: GroundTruthPoint, south: GroundTruthPoint,
                     chainage: float | None = None) -> GroundTruthPoint:
    """Centreline displacement as the mean of an edge pair (e.g. north/south prisms)."""
    c = chainage if chainage is not None else north.chainage
    return GroundTruthPoint(point_id, 0.5 * (north.displacement_mm + south.displacement_mm),
                            north.source, chainage=c)


# --------------------------------------------------------------------------
# truth file
# --------------------------------------------------------------------------

def write_ground_truth(points: Iterable[GroundTruthPoint], stream: TextIO) -> None:
    stream.write("id,source,chainage_m,displacement_mm\n")
    for p in points:
        if p.chainage is None:
            raise ValueError(f"truth point {p.id!r} has no chainage")
        stream.write(f"{p.id},{p.source},{p.chainage!r},{p.displacement_mm!r}\n")


def parse_ground_truth(text: str) -> list[GroundTruthPoint]:
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("id,"):
            continue
        parts = [x.strip() for x in line.split(",")]
        if len(parts) != 4:
            raise MalformedLine("expected id,source,chainage_m,displacement_mm", line_no)
        try:
            out.append(GroundTruthPoint(parts[0], float(parts[3]), parts[1], chainage=float(parts[2])))
        except ValueError as exc:
            raise MalformedLine(str(exc), line_no) from None
    return out


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

@dataclass
class ReportDocument:
    text: str
    files: dict[str, str]  # file name -> content, including report.txt

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        return [atomic_write_text(out / name, content) for name, content in sorted(self.files.items())]


def _f(x: float, nd: int = 3) -> str:
    return "NA" if not math.isfinite(x) else f"{x:.{nd}f}"


def _dat(line, label: str) -> str:
    prof = line.profile if isinstance(line, BendingLine) else line
    buf = io.StringIO()
    buf.write(f"# {label}\n# chainage_m deformation_mm\n")
    for c, v in zip(prof.chainage.tolist(), prof.values.tolist()):
        buf.write(f"{c:.4f} " + ("?" if not math.isfinite(v) else f"{v * 1000.0:.4f}") + "\n")
    return buf.getvalue()


def make_report(
    comparisons: Sequence[ComparisonReport] = (),
    residuals: ResidualTable | None = None,
    precision: PrecisionReport | None = None,
    lines: Mapping[str, object] | None = None,
    tolerance_mm: float | None = None,
    title: str = "deformkit report",
    notes: Sequence[str] = (),
) -> ReportDocument:
    """Assemble a deterministic plain-text + CSV report.

    ``lines`` maps a label to a bending line or profile and is emitted as
    gnuplot-readable ``.dat`` files. With ``tolerance_mm`` every compared
    point gets a PASS/FAIL flag on ``|diff| < tolerance``.
    """
    if not comparisons and residuals is None and precision is None:
        raise EmptyReport("report needs at least one section")
    txt = io.StringIO()
    files: dict[str, str] = {}
    txt.write(f"{title}\n{'=' * len(title)}\n")
    for n in notes:
        txt.write(f"{n}\n")

    if comparisons:
        csv = io.StringIO()
        csv.write("method,id,source,chainage_m,method_mm,truth_mm,diff_mm\n")
        for rep in comparisons:
            txt.write(f"\n[comparison] {rep.method or 'unnamed'} (window {rep.window:g} m)\n")
            for k in sorted(rep.metadata):
                txt.write(f"  {k}: {rep.metadata[k]}\n")
            txt.write(f"  {'id':<8}{'source':<12}{'chainage_m':>11}{'method_mm':>11}{'truth_mm':>10}{'diff_mm':>9}\n")
            for p, m, t, d in zip(rep.points, rep.method_mm, rep.truth_mm, rep.diff_mm):
                c = "NA" if p.chainage is None else f"{p.chainage:.3f}"
                flag = ""
                if tolerance_mm is not None:
                    flag = "  PASS" if abs(d) < tolerance_mm else "  FAIL"
                txt.write(f"  {p.id:<8}{p.source:<12}{c:>11}{_f(m):>11}{_f(t):>10}{_f(d):>9}{flag}\n")
                csv.write(f"{rep.method},{p.id},{p.source},{c},{_f(m, 4)},{_f(t, 4)},{_f(d, 4)}\n")
            txt.write(f"  n={len(rep)} mean={_f(rep.mean)} rmse={_f(rep.rmse)} max_abs={_f(rep.max_abs)} mm\n")
        files["comparison.csv"] = csv.getvalue()

    if residuals is not None and len(residuals):
        s = summarize_residuals(residuals)
        txt.write("\n[checkpoint residuals] measured minus reference, mm\n")
        txt.write("  rmse E/N/H: " + " / ".join(_f(x, 1) for x in s.overall.rmse) + "\n")
        txt.write("  mean E/N/H: " + " / ".join(_f(x, 1) for x in s.overall.mean) + "\n")
        pid, ep, comp = s.max_abs_location
        txt.write(f"  max |value| {s.max_abs_value:.1f} at CP {pid} epoch {ep} component {comp}\n")
        buf = io.StringIO()
        write_residual_table(residuals, buf)
        files["residuals.csv"] = buf.getvalue()

    if precision is not None:
        txt.write("\n[network precision] adjusted minus truth, mm\n")
        txt.write("  rmse E/N/H: " + " / ".join(_f(x * 1000) for x in precision.rmse) + "\n")
        txt.write("  mean sigma E/N/H: " + " / ".join(_f(x * 1000) for x in precision.mean_sigma) + "\n")
        buf = io.StringIO()
        buf.write("id,err_E_mm,err_N_mm,err_h_mm,sigma_E_mm,sigma_N_mm,sigma_h_mm\n")
        for pid, err, sig in zip(precision.ids, precision.errors, precision.sigmas):
            buf.write(pid + "," + ",".join(_f(x * 1000, 4) for x in (*err, *sig)) + "\n")
        files["precision.csv"] = buf.getvalue()

    for label, line in sorted((lines or {}).items()):
        files[f"{label}.dat"] = _dat(line, label)

    text = txt.getvalue()
    files["report.txt"] = text
    return ReportDocument(text, files)
