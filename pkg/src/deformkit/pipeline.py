"""End-to-end loading study: synth/ingest, adjust, georef, DEM, diff, bend,
cross, render, TLS line, report.

Every stage runs inside :func:`_stage`, so any failure surfaces as a
:class:`~deformkit.errors.StageError` naming the stage.
"""

from __future__ import annotations

import contextlib
import dataclasses
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .compare import (
    ComparisonReport,
    GroundTruthPoint,
    centreline_truth,
    compare_values,
    evaluate_at_points,
    make_report,
    transducer_deformation,
    write_ground_truth,
)
from .deform import (
    BendingLine,
    SmoothingSpec,
    bending_line,
    cross_profile,
    diff_grids,
    gaussian_smooth,
    render_deformation_map,
    write_ppm,
)
from .errors import DataError, DeformkitError, StageError
from .fileio import atomic_write_bytes, atomic_write_text
from .georef import (
    ResidualTable,
    apply_transform,
    checkpoint_residuals,
    estimate_similarity,
    match_points,
    remove_vertical_bias,
)
from .ingest import (
    PointCloud,
    parse_coordinates,
    parse_observations,
    parse_transducer_series,
    parse_xyz_cloud,
)
from .netadjust import AdjustedNetwork, PrecisionReport, adjust_network, assess_precision, write_adjusted_csv
from .surface import Profile, grid_frame, interpolate_profile, rasterize_dem, write_esri_ascii, write_profile_csv
from .synthbridge import (
    CHECKPOINT_IDS,
    BridgeLayout,
    LoadStep,
    NoiseModel,
    StudyConfig,
    beam_deflection,
    epoch_steps,
    parse_layout,
    parse_loads,
    parse_scatter,
    write_synthetic_study,
)

FIXED_FOR_EPOCHS = ("10", "R1", "40")
TLS_RANGE = 6.0  # m from the scanner, the accurate part of the profile


@dataclass
class PipelineConfig:
    """Flat key=value configuration of a pipeline run (lengths in metres)."""

    seed: int = 42
    data_dir: str = ""  # ingest from here instead of generating
    layout: str = ""  # layout file for the generator
    loads: str = ""  # load schedule for the generator
    density: float = 1000.0
    noise: float = 0.002
    cross_tilt: float = 0.0005
    clutter: bool = False
    tls: bool = True
    epoch_before: str = "3"
    epoch_after: str = "4"
    rigid: bool = False
    # bending line
    cell: float = 0.005
    aggregator: str = "median"
    min_points: int = 1
    sigma: float = 0.01
    mode: str = "diff-then-smooth"
    spacing: float = 0.005
    corridor: str = "strip"
    corridor_half_width: float = 1.9
    window: float = 0.15
    tolerance_mm: float = 1.0
    # areal products
    map_cell: float = 0.1
    map_min_points: int = 3
    map_sigma: float = 0.2
    cross_spacing: float = 0.05
    threshold: float = 0.0005
    saturation: float = 0.010
    bias_removal: bool = False
    # TLS
    tls_raster: float = 0.001
    tls_sigma: float = 0.03
    tls_max_gap: float = 0.1
    tls_window: float = 0.15
    figures: bool = True
    threads: int = 0

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def updated(self, values: dict) -> "PipelineConfig":
        """Copy with string or typed overrides converted to the field types."""
        kw = {}
        for key, raw in values.items():
            if key not in self.keys():
                raise DataError(f"unknown configuration key {key!r}")
            kw[key] = _convert(type(getattr(self, key)), raw, key)
        return dataclasses.replace(self, **kw)


def _convert(kind: type, raw, key: str):
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("true", "1", "yes", "on")
        return kind(text)
    except ValueError:
        raise DataError(f"bad value {raw!r} for {key!r}") from None


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines, '#' comments."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise DataError(f"config line {line_no}: expected key = value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (DeformkitError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc


def worker_count(requested: int = 0) -> int:
    env = os.environ.get("DEFORMKIT_THREADS", "").strip()
    n = requested
    if env:
        try:
            n = int(env)
        except ValueError:
            raise DataError(f"DEFORMKIT_THREADS must be an integer, got {env!r}") from None
    if n <= 0:
        n = os.cpu_count() or 1
    return n


@dataclass
class EpochData:
    epoch: str
    step: LoadStep
    cloud: PointCloud
    gcp_path: Path  # read in the georef stage
    cp: dict
    tachy_text: str
    tls: np.ndarray | None


@dataclass
class PipelineResult:
    out_dir: Path
    layout: BridgeLayout
    network: AdjustedNetwork
    precision: PrecisionReport | None
    residuals: ResidualTable
    line: BendingLine
    comparisons: dict[str, ComparisonReport]
    cross: Profile
    cross_edges: tuple[float, float]
    ground_level: float  # median deformation of the ground margin, m
    rgb: np.ndarray
    tls_line: BendingLine | None
    tls_truth_rms_mm: float | None
    report_text: str
    files: dict[str, Path] = field(default_factory=dict)


def _read(path: Path) -> str:
    if not path.exists():
        raise DataError(f"missing input file {path.name}")
    return path.read_text()


def _load_epoch(data: Path, step: LoadStep) -> EpochData:
    ep = step.epoch
    tls_path = data / f"tls_{ep}.csv"
    return EpochData(
        ep, step,
        parse_xyz_cloud(_read(data / f"cloud_{ep}.xyz"), ep),
        data / f"gcp_{ep}.csv",
        parse_coordinates(_read(data / f"cp_{ep}.csv")),
        _read(data / f"tachy_{ep}.txt"),
        parse_scatter(tls_path.read_text()) if tls_path.exists() else None,
    )


def fit_cross_edges(profile: Profile, deck_half_width: float, margin: float) -> tuple[float, float]:
    """Values at the deck edges from a straight-line fit over the deck interior.

    The profile runs north to south with the deck centre in the middle.
    Samples closer than ``margin`` to an edge are excluded because areal
    smoothing mixes in the ground there.
    """
    mid = 0.5 * (profile.chainage[0] + profile.chainage[-1])
    y = mid - profile.chainage  # positive north
    sel = (np.abs(y) <= deck_half_width - margin) & profile.valid
    if sel.sum() < 2:
        raise DataError("too few valid cross-profile samples on the deck")
    slope, icpt = np.polyfit(y[sel], profile.values[sel], 1)
    return float(icpt + slope * deck_half_width), float(icpt - slope * deck_half_width)


def _tls_line(before: np.ndarray, after: np.ndarray, cfg: PipelineConfig, labels) -> BendingLine:
    pb = interpolate_profile(before, cfg.tls_raster, cfg.tls_max_gap)
    pa = interpolate_profile(after, cfg.tls_raster, cfg.tls_max_gap)
    kb = np.rint(pb.chainage / cfg.tls_raster).astype(np.int64)
    ka = np.rint(pa.chainage / cfg.tls_raster).astype(np.int64)
    k = np.arange(min(kb[0], ka[0]), max(kb[-1], ka[-1]) + 1)
    vb = np.full(len(k), np.nan)
    va = np.full(len(k), np.nan)
    vb[kb - k[0]] = pb.values
    va[ka - k[0]] = pa.values
    chain = cfg.tls_raster * k
    spec = SmoothingSpec(cfg.tls_sigma)
    if cfg.mode == "diff-then-smooth":
        prof = gaussian_smooth(Profile(chain, va - vb, cfg.tls_raster), spec)
    else:
        sa = gaussian_smooth(Profile(chain, va, cfg.tls_raster), spec)
        sb = gaussian_smooth(Profile(chain, vb, cfg.tls_raster), spec)
        prof = sa.with_values(sa.values - sb.values)
    return BendingLine(prof, labels[0], labels[1], cfg.tls_sigma, cfg.mode)


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path) -> PipelineResult:
    """Run the full study and write every intermediate product under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}

    def put_text(name: str, text: str) -> None:
        files[name] = atomic_write_text(out / name, text)

    # ---- synth / ingest ------------------------------------------------
    if cfg.data_dir:
        data = Path(cfg.data_dir)
    else:
        with _stage("synth"):
            layout = parse_layout(_read(Path(cfg.layout))) if cfg.layout else BridgeLayout()
            study = StudyConfig(layout=layout, density=cfg.density,
                                noise=NoiseModel(point_sigma=cfg.noise, seed=cfg.seed),
                                cross_tilt=cfg.cross_tilt, clutter=cfg.clutter, tls=cfg.tls)
            if cfg.loads:
                study.loads = tuple(parse_loads(_read(Path(cfg.loads))))
            data = out / "data"
            write_synthetic_study(study, data)
    with _stage("ingest"):
        layout = parse_layout(_read(data / "layout.txt"))
        steps = {s.epoch: s for s in epoch_steps(parse_loads(_read(data / "loads.csv")))}
        for ep in (cfg.epoch_before, cfg.epoch_after):
            if ep not in steps:
                raise DataError(f"epoch {ep!r} not in the load schedule")
        series = {s.channel: s for s in parse_transducer_series(_read(data / "transducers.csv"))}
        obs = parse_observations(_read(data / "network_obs.txt"))
        init = parse_coordinates(_read(data / "network_init.csv"))
        truth_path = data / "network_truth.csv"
        net_truth = parse_coordinates(truth_path.read_text()) if truth_path.exists() else None
        epochs = [_load_epoch(data, steps[ep]) for ep in (cfg.epoch_before, cfg.epoch_after)]

    # ---- network --------------------------------------------------------
    with _stage("adjust"):
        net = adjust_network(obs, init)
        buf = io.StringIO()
        write_adjusted_csv(net, buf)
        put_text("network_adjusted.csv", buf.getvalue())
        precision = assess_precision(net, net_truth) if net_truth is not None else None
        adjusted = net.coordinates()
        epoch_refs = {}
        for ed in epochs:
            tobs = parse_observations(ed.tachy_text)
            enet = adjust_network(tobs, adjusted, fixed=FIXED_FOR_EPOCHS)
            epoch_refs[ed.epoch] = enet.coordinates()

    # ---- georef ---------------------------------------------------------
    with _stage("georef"):
        clouds = {}
        measured, reference = {}, {}
        for ed in epochs:
            gcp = parse_coordinates(_read(ed.gcp_path))
            if not gcp:
                raise DataError(f"no GCP picks for epoch {ed.epoch}")
            ids, src, dst = match_points(gcp, adjusted)
            T = estimate_similarity(src, dst, allow_scale=not cfg.rigid)
            clouds[ed.epoch] = apply_transform(ed.cloud, T)
            for pid, xyz in ed.cp.items():
                measured[(pid, ed.epoch)] = tuple(T.apply(np.asarray(xyz)))
                reference[(pid, ed.epoch)] = epoch_refs[ed.epoch][pid]
        residuals = checkpoint_residuals(measured, reference)

    # ---- dem ------------------------------------------------------------
    before, after = cfg.epoch_before, cfg.epoch_after
    with _stage("dem"):
        pts = np.vstack([clouds[before].points, clouds[after].points])
        bounds = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

        def raster(ep, cell, min_points):
            oe, on, nr, nc = grid_frame(bounds, cell)
            return rasterize_dem(clouds[ep], cell, cfg.aggregator, min_points, frame=(oe, on, nr, nc))

        jobs = [(ep, c, m) for c, m in ((cfg.cell, cfg.min_points), (cfg.map_cell, cfg.map_min_points))
                for ep in (before, after)]
        with ThreadPoolExecutor(max_workers=min(worker_count(cfg.threads), len(jobs))) as pool:
            grids = list(pool.map(lambda j: raster(*j), jobs))
        dem_b, dem_a, map_b, map_a = grids
        for g in grids:
            buf = io.StringIO()
            write_esri_ascii(g, buf)
            tag = "dem" if g.cell_size == cfg.cell else "map_dem"
            put_text(f"{tag}_{g.epoch_id}.asc", buf.getvalue())

    # ---- diff -----------------------------------------------------------
    with _stage("diff"):
        field_map = diff_grids(map_b, map_a)
        field_map = gaussian_smooth(field_map, SmoothingSpec(cfg.map_sigma))
        if cfg.bias_removal:
            m, W, L = layout.ground_margin, layout.width, layout.length
            e0, n0 = layout.origin_e, layout.origin_n
            south = [(e0 - m, n0 - W / 2 - m), (e0 + L + m, n0 - W / 2 - m),
                     (e0 + L + m, n0 - W / 2), (e0 - m, n0 - W / 2)]
            north = [(x, y + W + m) for x, y in south]
            field_map, _ = remove_vertical_bias(field_map, [south, north])
        buf = io.StringIO()
        write_esri_ascii(field_map, buf)
        put_text(f"deformation_{before}_{after}.asc", buf.getvalue())

    # ---- truth ----------------------------------------------------------
    with _stage("compare"):
        t0, t1 = steps[before].time_s, steps[after].time_s
        truth = [
            GroundTruthPoint("C", transducer_deformation(series["C"], t0, t1), "transducer",
                             chainage=layout.transducer_c),
            GroundTruthPoint("D", transducer_deformation(series["D"], t0, t1), "transducer",
                             chainage=layout.transducer_d),
            GroundTruthPoint("A", 0.0, "design", chainage=layout.support_a),
            GroundTruthPoint("B", 0.0, "design", chainage=layout.support_b),
        ]
        buf = io.StringIO()
        write_ground_truth(truth, buf)
        put_text("truth.csv", buf.getvalue())
        rb, ra = epoch_refs[before], epoch_refs[after]
        tachy = {p: 1000.0 * (ra[p][2] - rb[p][2]) for p in CHECKPOINT_IDS}
        axis = layout.axis
        tachy_pts = [GroundTruthPoint(p, tachy[p], "tachymeter",
                                      chainage=float(axis.project(ra[p][0], ra[p][1])[0]))
                     for p in ("20", "21", "24", "25", "30")]
        north, south = (GroundTruthPoint(p, tachy[p], "tachymeter", chainage=layout.transducer_c)
                        for p in ("22", "23"))
        tachy_pts.insert(2, centreline_truth("22/23", north, south))

    # ---- bend -----------------------------------------------------------
    with _stage("bend"):
        bend_axis = type(axis)(axis.start, axis.end, cfg.corridor_half_width)
        line = bending_line(dem_b, dem_a, bend_axis, cfg.spacing, SmoothingSpec(cfg.sigma),
                            cfg.mode, corridor=cfg.corridor)
        buf = io.StringIO()
        write_profile_csv(line.profile, buf)
        put_text(f"bending_{before}_{after}.csv", buf.getvalue())
        comparisons = {
            "photogrammetry": evaluate_at_points(line, truth, cfg.window, "photogrammetry"),
            "photogrammetry_vs_tachymeter": evaluate_at_points(line, tachy_pts, cfg.window,
                                                               "photogrammetry vs tachymeter"),
        }
        tachy_c = next(p for p in tachy_pts if p.id == "22/23").displacement_mm
        comparisons["tachymeter"] = compare_values("tachymeter", truth[:2], [tachy_c, tachy["21"]])

    # ---- cross ----------------------------------------------------------
    with _stage("cross"):
        cross = cross_profile(field_map, layout.transducer_c, axis, cfg.cross_spacing, None)
        edges = fit_cross_edges(cross, layout.width / 2, 3 * cfg.map_sigma)
        buf = io.StringIO()
        write_profile_csv(cross, buf)
        put_text(f"cross_C_{before}_{after}.csv", buf.getvalue())
        ee, nn = field_map.cell_centers()
        _, off = axis.project(ee, nn)
        ground = (np.abs(off) > layout.width / 2 + 2 * cfg.map_sigma) & field_map.valid
        ground_level = float(np.median(field_map.values[ground])) if ground.any() else math.nan

    # ---- render ---------------------------------------------------------
    with _stage("render"):
        rgb = render_deformation_map(field_map, cfg.threshold, cfg.saturation)
        buf = io.BytesIO()
        write_ppm(rgb, buf)
        files["deformation_map.ppm"] = atomic_write_bytes(out / f"deformation_{before}_{after}.ppm", buf.getvalue())

    # ---- tls ------------------------------------------------------------
    tls_line, tls_rms = None, None
    if epochs[0].tls is not None and epochs[1].tls is not None:
        with _stage("tls"):
            tls_line = _tls_line(epochs[0].tls, epochs[1].tls, cfg, (before, after))
            buf = io.StringIO()
            write_profile_csv(tls_line.profile, buf)
            put_text(f"tls_bending_{before}_{after}.csv", buf.getvalue())
            near = [p for p in truth if abs(p.chainage - layout.scanner_chainage) <= TLS_RANGE]
            comparisons["tls"] = evaluate_at_points(tls_line, near, cfg.tls_window, "tls")
            model = (beam_deflection(layout, steps[after])(tls_line.chainage)
                     - beam_deflection(layout, steps[before])(tls_line.chainage))
            sel = (np.abs(tls_line.chainage - layout.scanner_chainage) <= TLS_RANGE) & tls_line.profile.valid
            tls_rms = float(np.sqrt(np.mean((tls_line.values[sel] - model[sel]) ** 2)) * 1000.0)

    # ---- report ---------------------------------------------------------
    with _stage("report"):
        notes = [
            f"epochs {before} -> {after}, loads {steps[before].load_kn:g} -> {steps[after].load_kn:g} kN",
            f"bending line: cell {cfg.cell} m, sigma {cfg.sigma} m, {cfg.mode}, corridor {cfg.corridor} "
            f"+-{cfg.corridor_half_width} m, window {cfg.window} m",
            f"cross profile at C: north {edges[0] * 1000:.2f} mm, south {edges[1] * 1000:.2f} mm, "
            f"ground margin median {ground_level * 1000:.2f} mm",
        ]
        if tls_rms is not None:
            notes.append(f"TLS line vs beam model within {TLS_RANGE:g} m of the scanner: rms {tls_rms:.3f} mm")
        lines = {f"bending_{before}_{after}": line, f"cross_C_{before}_{after}": cross}
        if tls_line is not None:
            lines[f"tls_bending_{before}_{after}"] = tls_line
        doc = make_report(list(comparisons.values()), residuals, precision, lines,
                          tolerance_mm=cfg.tolerance_mm, notes=notes)
        for path in doc.write(out / "report"):
            files[f"report/{path.name}"] = path
        if cfg.figures:
            fig = out / "report"
            marks = [(p.id, p.chainage, p.displacement_mm) for p in truth]
            plotted = {"photogrammetry": line}
            if tls_line is not None:
                plotted["TLS"] = tls_line
            files["report/bending.png"] = plotting.plot_bending_lines(
                plotted, fig / "bending.png", marks, (layout.support_a, layout.support_b))
            files["report/cross_C.png"] = plotting.plot_cross_profile(cross, fig / "cross_C.png", edges)
            files["report/deformation_map.png"] = plotting.plot_deformation_map(
                rgb, field_map.bounds, fig / "deformation_map.png")
            files["report/residuals.png"] = plotting.plot_residuals(residuals, fig / "residuals.png")

    return PipelineResult(out, layout, net, precision, residuals, line, comparisons, cross, edges,
                          ground_level, rgb, tls_line, tls_rms, doc.text, files)
