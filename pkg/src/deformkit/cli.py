"""Command-line interface.

Exit codes: 0 success, 1 data error, 2 usage error. Every subcommand writes
a JSON run manifest next to its output.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .compare import evaluate_at_points, make_report, parse_ground_truth
from .deform import (
    SmoothingSpec,
    bending_line,
    cross_profile,
    diff_grids,
    render_deformation_map,
    write_ppm,
)
from .errors import DataError, DeformkitError
from .fileio import atomic_write_bytes, atomic_write_text, sha256_file
from .georef import apply_transform, estimate_similarity, match_points, read_residual_table
from .ingest import parse_coordinates, parse_observations, parse_xyz_cloud, write_xyz_cloud
from .netadjust import AdjustmentConfig, adjust_network, write_adjusted_csv
from .surface import Axis, grid_frame, read_esri_ascii, read_profile_csv, rasterize_dem, write_esri_ascii, write_profile_csv

DEFAULT_SEED = 42


def _floats(text: str, n: int) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _axis_arg(text: str) -> tuple[float, ...]:
    return _floats(text, 4)


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(command: str, params: dict, inputs: Sequence[str | Path], out: Path,
                   seed: int | None = None, outputs: Sequence[Path] = ()) -> Path:
    """Deterministic record of a run: no timestamps, sorted keys."""
    mpath = _manifest_path(out)

    def rel(p) -> str:
        try:
            return Path(p).resolve().relative_to(mpath.parent.resolve()).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "command": command,
        "parameters": {k: params[k] for k in sorted(params)},
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {rel(p): sha256_file(p) for p in outputs if Path(p).is_file()},
        "tool": "deformkit",
        "version": __version__,
        "seed": seed,
    }
    return atomic_write_text(mpath, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _params(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k not in ("func",) and not callable(v)}


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthbridge import BridgeLayout, NoiseModel, StudyConfig, parse_layout, parse_loads, write_synthetic_study

    layout = parse_layout(Path(args.layout).read_text()) if args.layout else BridgeLayout()
    cfg = StudyConfig(layout=layout, density=args.density,
                      noise=NoiseModel(point_sigma=args.noise, seed=args.seed),
                      cross_tilt=args.cross_tilt, clutter=args.clutter, tls=not args.no_tls)
    if args.loads:
        cfg.loads = tuple(parse_loads(Path(args.loads).read_text()))
    written = write_synthetic_study(cfg, args.out)
    write_manifest("synth", _params(args), [args.layout, args.loads], Path(args.out), args.seed,
                   list(written.values()))
    return 0


def cmd_adjust(args) -> int:
    obs = parse_observations(Path(args.obs).read_text())
    init = parse_coordinates(Path(args.init).read_text())
    cfg = AdjustmentConfig(max_iterations=args.max_iterations, convergence_threshold=args.threshold)
    net = adjust_network(obs, init, cfg, fixed=args.fixed.split(",") if args.fixed else ())
    buf = io.StringIO()
    write_adjusted_csv(net, buf)
    out = atomic_write_text(args.out, buf.getvalue())
    write_manifest("adjust", _params(args), [args.obs, args.init], out, outputs=[out])
    return 0


def cmd_georef(args) -> int:
    cloud = parse_xyz_cloud(Path(args.cloud).read_text(), args.epoch)
    src = parse_coordinates(Path(args.gcp_src).read_text())
    dst = parse_coordinates(Path(args.gcp_dst).read_text())
    ids, a, b = match_points(src, dst)
    T = estimate_similarity(a, b, allow_scale=not args.rigid)
    buf = io.StringIO()
    write_xyz_cloud(apply_transform(cloud, T), buf)
    out = atomic_write_text(args.out, buf.getvalue())
    scale, rotvec, t = T.params()
    params = _params(args)
    params.update(gcp_ids=ids, scale=scale, rotvec=rotvec.tolist(), translation=t.tolist(),
                  gcp_residual_norms_m=T.residual_norms().tolist())
    write_manifest("georef", params, [args.cloud, args.gcp_src, args.gcp_dst], out, outputs=[out])
    return 0


def cmd_dem(args) -> int:
    cloud = parse_xyz_cloud(Path(args.cloud).read_text(), args.epoch)
    frame = None
    if args.like:
        frame = read_esri_ascii(Path(args.like).read_text())
    elif args.bounds:
        frame = grid_frame(args.bounds, args.cell)
    grid = rasterize_dem(cloud, args.cell, args.aggregator, args.min_points, frame)
    buf = io.StringIO()
    write_esri_ascii(grid, buf)
    out = atomic_write_text(args.out, buf.getvalue())
    write_manifest("dem", _params(args), [args.cloud, args.like], out, outputs=[out])
    return 0


def cmd_diff(args) -> int:
    before = read_esri_ascii(Path(args.before).read_text())
    after = read_esri_ascii(Path(args.after).read_text())
    field = diff_grids(before, after)
    buf = io.StringIO()
    write_esri_ascii(field, buf)
    out = atomic_write_text(args.out, buf.getvalue())
    write_manifest("diff", _params(args), [args.before, args.after], out, outputs=[out])
    return 0


def cmd_bend(args) -> int:
    before = read_esri_ascii(Path(args.before).read_text(), args.epoch_before)
    after = read_esri_ascii(Path(args.after).read_text(), args.epoch_after)
    e0, n0, e1, n1 = args.axis
    axis = Axis((e0, n0), (e1, n1), args.half_width)
    line = bending_line(before, after, axis, args.spacing, SmoothingSpec(args.sigma), args.mode, args.corridor)
    buf = io.StringIO()
    write_profile_csv(line.profile, buf)
    out = atomic_write_text(args.out, buf.getvalue())
    write_manifest("bend", _params(args), [args.before, args.after], out, outputs=[out])
    return 0


def cmd_cross(args) -> int:
    field = read_esri_ascii(Path(args.field).read_text())
    e0, n0, e1, n1 = args.axis
    spec = SmoothingSpec(args.sigma) if args.sigma > 0 else None
    prof = cross_profile(field, args.chainage, Axis((e0, n0), (e1, n1)), args.spacing, spec,
                         half_length=args.half_length)
    buf = io.StringIO()
    write_profile_csv(prof, buf)
    out = atomic_write_text(args.out, buf.getvalue())
    write_manifest("cross", _params(args), [args.field], out, outputs=[out])
    return 0


def cmd_render(args) -> int:
    field = read_esri_ascii(Path(args.field).read_text())
    rgb = render_deformation_map(field, args.threshold, args.saturation)
    buf = io.BytesIO()
    write_ppm(rgb, buf)
    out = atomic_write_bytes(args.out, buf.getvalue())
    write_manifest("render", _params(args), [args.field], out, outputs=[out])
    return 0


def cmd_report(args) -> int:
    prof = read_profile_csv(Path(args.bend).read_text())
    truth = parse_ground_truth(Path(args.truth).read_text())
    comparison = evaluate_at_points(prof, truth, args.window, Path(args.bend).stem)
    residuals = read_residual_table(Path(args.residuals).read_text()) if args.residuals else None
    doc = make_report([comparison], residuals, None, {"bending": prof}, tolerance_mm=args.tolerance)
    out = Path(args.out)
    written = doc.write(out)
    if args.figures:
        from . import plotting

        marks = [(p.id, p.chainage, p.displacement_mm) for p in truth]
        written.append(plotting.plot_bending_lines({"bending line": prof}, out / "bending.png", marks))
        if residuals is not None and len(residuals):
            written.append(plotting.plot_residuals(residuals, out / "residuals.png"))
    write_manifest("report", _params(args), [args.bend, args.truth, args.residuals], out, outputs=written)
    sys.stdout.write(doc.text)
    return 0


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, parse_config, run_pipeline

    values: dict[str, str] = {}
    if args.config:
        cfg_path = Path(args.config)
        values = parse_config(cfg_path.read_text())
        # paths in a config file are relative to that file
        for key in ("data_dir", "layout", "loads", "out"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(cfg_path.parent / values[key])
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise DataError(f"--set expects key=value, got {item!r}")
        values[key.strip().replace("-", "_")] = val.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.data_dir is not None:
        values["data_dir"] = args.data_dir
    out = args.out or values.pop("out", None)
    values.pop("out", None)
    if not out:
        raise DataError("no output directory: pass --out or set out= in the config")
    cfg = PipelineConfig().updated(values)
    result = run_pipeline(cfg, out)
    inputs = [args.config, cfg.layout, cfg.loads]
    if cfg.data_dir:
        inputs += sorted(str(p) for p in Path(cfg.data_dir).iterdir() if p.is_file())
    params = {k: getattr(cfg, k) for k in cfg.keys()}
    write_manifest("pipeline", params, inputs, Path(out), cfg.seed, list(result.files.values()))
    sys.stdout.write(result.report_text)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deformkit", description="Deformation analysis from multi-epoch point clouds.")
    p.add_argument("--version", action="version", version=f"deformkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="generate a synthetic loading study")
    s.add_argument("--layout", help="bridge layout file (key=value)")
    s.add_argument("--loads", help="load schedule CSV time_s,load_kN,epoch")
    s.add_argument("--density", type=float, default=1000.0, help="points per m^2")
    s.add_argument("--noise", type=float, default=0.002, help="cloud height noise sigma [m]")
    s.add_argument("--cross-tilt", type=float, default=0.0005, help="cross tilt at the reference load [m/m]")
    s.add_argument("--clutter", action="store_true", help="add raised boxes on the deck")
    s.add_argument("--no-tls", action="store_true", help="skip the TLS profiles")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("adjust", help="adjust a control network")
    s.add_argument("--obs", required=True)
    s.add_argument("--init", required=True, help="approximate coordinates id,E,N,h")
    s.add_argument("--fixed", default="", help="comma-separated ids held fixed")
    s.add_argument("--max-iterations", type=int, default=20)
    s.add_argument("--threshold", type=float, default=1e-5, help="convergence threshold [m]")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_adjust)

    s = sub.add_parser("georef", help="georeference a cloud from GCP correspondences")
    s.add_argument("--cloud", required=True)
    s.add_argument("--gcp-src", required=True, help="GCPs in the cloud frame")
    s.add_argument("--gcp-dst", required=True, help="GCPs in the network frame")
    s.add_argument("--rigid", action="store_true", help="6-parameter transform (scale fixed to 1)")
    s.add_argument("--epoch", default="epoch")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_georef)

    s = sub.add_parser("dem", help="rasterize a cloud into a DEM")
    s.add_argument("--cloud", required=True)
    s.add_argument("--cell", type=float, default=0.005)
    s.add_argument("--aggregator", choices=("median", "mean", "min", "max"), default="median")
    s.add_argument("--min-points", type=int, default=3)
    frame = s.add_mutually_exclusive_group()
    frame.add_argument("--bounds", type=_axis_arg, help="fixed extent Emin,Nmin,Emax,Nmax")
    frame.add_argument("--like", help="reuse the frame of an existing ESRI ASCII grid")
    s.add_argument("--epoch", default="epoch")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_dem)

    s = sub.add_parser("diff", help="difference two DEMs (after - before)")
    s.add_argument("--before", required=True)
    s.add_argument("--after", required=True)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("bend", help="bending line along an axis")
    s.add_argument("--before", required=True)
    s.add_argument("--after", required=True)
    s.add_argument("--axis", required=True, type=_axis_arg, help="E0,N0,E1,N1")
    s.add_argument("--half-width", type=float, default=0.0)
    s.add_argument("--corridor", choices=("offsets", "strip"), default="offsets")
    s.add_argument("--spacing", type=float, default=0.005)
    s.add_argument("--sigma", type=float, default=0.01)
    s.add_argument("--mode", choices=("diff-then-smooth", "smooth-then-diff"), default="diff-then-smooth")
    s.add_argument("--epoch-before", default="before")
    s.add_argument("--epoch-after", default="after")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_bend)

    s = sub.add_parser("cross", help="cross profile of a deformation field")
    s.add_argument("--field", required=True)
    s.add_argument("--axis", required=True, type=_axis_arg, help="main axis E0,N0,E1,N1")
    s.add_argument("--chainage", required=True, type=float)
    s.add_argument("--spacing", type=float, default=0.05)
    s.add_argument("--sigma", type=float, default=0.01, help="0 disables smoothing")
    s.add_argument("--half-length", type=float, default=None)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_cross)

    s = sub.add_parser("render", help="colour-coded deformation map (PPM)")
    s.add_argument("--field", required=True)
    s.add_argument("--threshold", type=float, default=0.0005)
    s.add_argument("--saturation", type=float, default=0.010)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("report", help="compare a bending line with ground truth")
    s.add_argument("--bend", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--residuals")
    s.add_argument("--window", type=float, default=0.05)
    s.add_argument("--tolerance", type=float, default=1.0, help="PASS/FAIL tolerance [mm]")
    s.add_argument("--no-figures", dest="figures", action="store_false")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("pipeline", help="run the full loading study")
    s.add_argument("--config", help="key=value configuration file")
    s.add_argument("--out", help="output directory (overrides out= in the config)")
    s.add_argument("--seed", type=int)
    s.add_argument("--data-dir", help="ingest this study directory instead of generating one")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DeformkitError as exc:
        print(f"deformkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"deformkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
