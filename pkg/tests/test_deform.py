import io

import numpy as np
import pytest

from deformkit.deform import (
    NODATA_RGB,
    BendingLine,
    DeformationField,
    SmoothingSpec,
    bending_line,
    cross_profile,
    diff_grids,
    gaussian_kernel,
    gaussian_smooth,
    read_ppm,
    render_deformation_map,
    write_ppm,
)
from deformkit.errors import BadColorParams, ChainageOutOfRange, FrameMismatch, SigmaSmallerThanCell
from deformkit.surface import Axis, HeightGrid, Profile, rasterize_dem
from deformkit.synthbridge import BridgeLayout, NoiseModel, beam_deflection, generate_epoch_cloud


def _grid(values, cell=0.01, epoch="3"):
    return HeightGrid(0.0, 0.0, cell, np.asarray(values, dtype=float), epoch_id=epoch)


def test_diff_identical_and_offset():
    rng = np.random.default_rng(0)
    v = rng.normal(81.0, 0.01, (10, 12))
    assert np.all(diff_grids(_grid(v), _grid(v)).values == 0.0)
    field = diff_grids(_grid(v, epoch="3"), _grid(v + 0.002, epoch="4"))
    assert np.allclose(field.values, 0.002, atol=1e-12)
    assert (field.epoch_before, field.epoch_after) == ("3", "4")


def test_diff_frame_mismatch():
    with pytest.raises(FrameMismatch):
        diff_grids(_grid(np.zeros((3, 3))), _grid(np.zeros((3, 4))))


def test_diff_propagates_nodata():
    a = np.zeros((2, 2))
    b = np.zeros((2, 2))
    a[0, 0] = np.nan
    b[1, 1] = np.nan
    out = diff_grids(_grid(a), _grid(b)).values
    assert np.isnan(out[0, 0]) and np.isnan(out[1, 1]) and out[0, 1] == 0.0


def test_field_matches_generator():
    layout = BridgeLayout()
    noise = NoiseModel(seed=11)
    w0, w1 = beam_deflection(layout, 0.0), beam_deflection(layout, 95.0)
    clouds = [generate_epoch_cloud(layout, w, 1000.0, noise, cross_tilt=0.0, epoch_id=str(k), stream=k, ground=False)
              for k, w in ((3, w0), (4, w1))]
    pts = np.vstack([c.points for c in clouds])
    frame = (604500.0, 5792298.0, int(np.ptp(pts[:, 1]) / 0.1) + 1, int(np.ptp(pts[:, 0]) / 0.1) + 1)
    a, b = (rasterize_dem(c, 0.1, "median", 3, frame=frame) for c in clouds)
    field = diff_grids(a, b)
    ee, _ = field.cell_centers()
    ok = field.valid
    resid = field.values[ok] - w1(ee[ok] - layout.origin_e)
    # about 10 points per cell: sqrt(2) * 1.25 * 2 mm / sqrt(10) for the median difference
    assert np.sqrt(np.mean(resid**2)) < 0.0015
    assert abs(np.mean(resid)) < 0.0002


def test_kernel_properties():
    k = gaussian_kernel(10.0)
    assert len(k) == 81 and k.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(k, k[::-1])


def test_smoothing_keeps_holes():
    v = np.ones((20, 20))
    v[5:8, 5:8] = np.nan
    out = gaussian_smooth(_grid(v), SmoothingSpec(0.02)).values
    assert np.isnan(out[5:8, 5:8]).all()
    assert np.allclose(out[np.isfinite(v)], 1.0)


def test_smoothing_spec_validation():
    with pytest.raises(ValueError):
        SmoothingSpec(0.0)
    with pytest.raises(ValueError):
        SmoothingSpec(0.01, truncate=2.0)


def test_sigma_smaller_than_cell_warns():
    with pytest.warns(SigmaSmallerThanCell):
        gaussian_smooth(_grid(np.zeros((4, 4)), cell=0.1), SmoothingSpec(0.01))


def test_bending_line_zero_for_identical_epochs():
    v = np.random.default_rng(1).normal(0, 0.01, (20, 40))
    axis = Axis((0.02, 0.1), (0.37, 0.1))
    line = bending_line(_grid(v), _grid(v), axis, 0.01, SmoothingSpec(0.02))
    assert np.all(line.values[np.isfinite(line.values)] == 0.0)
    assert isinstance(line, BendingLine) and line.mode == "diff-then-smooth"


def test_bending_modes_agree_without_nodata():
    rng = np.random.default_rng(2)
    a, b = rng.normal(0, 0.01, (20, 40)), rng.normal(0, 0.01, (20, 40))
    axis = Axis((0.02, 0.1), (0.37, 0.1))
    spec = SmoothingSpec(0.02)
    l1 = bending_line(_grid(a), _grid(b), axis, 0.01, spec, "diff-then-smooth")
    l2 = bending_line(_grid(a), _grid(b), axis, 0.01, spec, "smooth-then-diff")
    assert np.allclose(l1.values, l2.values, atol=1e-15)
    with pytest.raises(ValueError):
        bending_line(_grid(a), _grid(b), axis, 0.01, spec, "sideways")


def test_cross_profile_runs_north_to_south():
    e, n = np.meshgrid((np.arange(100) + 0.5) * 0.1, (np.arange(40) + 0.5) * 0.1)
    field = DeformationField(0.0, 0.0, 0.1, 0.001 * n)
    axis = Axis((0.0, 2.0), (10.0, 2.0))
    prof = cross_profile(field, 5.0, axis, 0.1, None, half_length=1.5)
    assert prof.values[0] == pytest.approx(0.001 * 3.5)
    assert prof.values[-1] == pytest.approx(0.001 * 0.5)
    zero = cross_profile(field.with_values(np.zeros_like(field.values)), 5.0, axis, 0.1, SmoothingSpec(0.2))
    assert np.all(zero.values[np.isfinite(zero.values)] == 0.0)
    with pytest.raises(ChainageOutOfRange):
        cross_profile(field, 12.0, axis, 0.1, None)


def test_render_rule():
    vals = np.array([[0.0, -0.010, 0.010, np.nan],
                     [0.0004, -0.0005, 0.02, -0.005]])
    rgb = render_deformation_map(DeformationField(0.0, 0.0, 1.0, vals), 0.0005, 0.010)
    # image row 0 is the northern raster row (index 1)
    assert [tuple(px) for px in rgb[0]] == [(0, 0, 0), (13, 0, 0), (0, 255, 0), (128, 0, 0)]
    assert [tuple(px) for px in rgb[1]] == [(0, 0, 0), (255, 0, 0), (0, 255, 0), NODATA_RGB]
    zero = render_deformation_map(DeformationField(0.0, 0.0, 1.0, np.zeros((3, 3))))
    assert not zero.any()
    with pytest.raises(BadColorParams):
        render_deformation_map(DeformationField(0.0, 0.0, 1.0, vals), 0.01, 0.005)


def test_ppm_round_trip():
    rgb = np.random.default_rng(3).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    buf = io.BytesIO()
    write_ppm(rgb, buf)
    assert buf.getvalue().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(read_ppm(buf.getvalue()), rgb)


def test_profile_smoothing_types():
    prof = Profile(np.arange(10) * 0.01, np.ones(10), 0.01)
    out = gaussian_smooth(prof, SmoothingSpec(0.02))
    assert isinstance(out, Profile) and np.allclose(out.values, 1.0)
    with pytest.raises(TypeError):
        gaussian_smooth(np.ones(3), SmoothingSpec(0.02))
