import io

import numpy as np
import pytest

from deformkit.errors import AxisOutsideGrid, FrameMismatch, NonPositiveCellSize, TooFewPoints
from deformkit.ingest import PointCloud
from deformkit.surface import (
    Axis,
    HeightGrid,
    Profile,
    bilinear,
    grid_frame,
    interpolate_profile,
    rasterize_dem,
    read_esri_ascii,
    read_profile_csv,
    sample_profile,
    write_esri_ascii,
    write_profile_csv,
)
from deformkit.synthbridge import BridgeLayout, NoiseModel, beam_deflection, deck_surface, generate_epoch_cloud


def test_median_of_four():
    cloud = PointCloud("e", [[0.1, 0.1, 1.0], [0.2, 0.2, 2.0], [0.3, 0.3, 3.0], [0.4, 0.4, 100.0]])
    grid = rasterize_dem(cloud, 1.0, "median", 1)
    assert grid.values.shape == (1, 1)
    assert grid.values[0, 0] == 2.5


@pytest.mark.parametrize("agg,expected", [("mean", 26.5), ("min", 1.0), ("max", 100.0)])
def test_other_aggregators(agg, expected):
    cloud = PointCloud("e", [[0.1, 0.1, 1.0], [0.2, 0.2, 2.0], [0.3, 0.3, 3.0], [0.4, 0.4, 100.0]])
    assert rasterize_dem(cloud, 1.0, agg, 1).values[0, 0] == expected


def test_min_points_gives_nodata():
    cloud = PointCloud("e", [[0.5, 0.5, 1.0], [1.5, 0.5, 2.0], [1.6, 0.6, 2.0], [1.7, 0.7, 2.0]])
    grid = rasterize_dem(cloud, 1.0, "median", 3)
    assert np.isnan(grid.values[0, 0]) and grid.values[0, 1] == 2.0


def test_plane_within_half_cell_span():
    rng = np.random.default_rng(0)
    e = rng.uniform(0, 2, 20000)
    n = rng.uniform(0, 1, 20000)
    cloud = PointCloud("p", np.column_stack([e, n, 0.001 * e]))
    grid = rasterize_dem(cloud, 0.05, "median", 3)
    ee, _ = grid.cell_centers()
    ok = grid.valid
    assert np.all(np.abs(grid.values[ok] - 0.001 * ee[ok]) <= 0.5 * 0.001 * 0.05 + 1e-12)


def test_bad_cell_size():
    with pytest.raises(NonPositiveCellSize):
        rasterize_dem(PointCloud("e", [[0.0, 0.0, 0.0]]), 0.0)


def test_shared_frame_drops_outside_points():
    cloud = PointCloud("e", [[0.5, 0.5, 1.0], [5.5, 5.5, 9.0]])
    grid = rasterize_dem(cloud, 1.0, "median", 1, frame=(0.0, 0.0, 2, 2))
    assert grid.values.shape == (2, 2)
    assert grid.values[0, 0] == 1.0 and np.isnan(grid.values).sum() == 3


def test_grid_frame_snaps_origin():
    oe, on, nr, nc = grid_frame((604500.013, 5792297.52, 604501.0, 5792298.0), 0.1)
    assert oe == pytest.approx(604500.0) and on == pytest.approx(5792297.5)
    # a point exactly on the far edge opens a new cell
    assert nc == 11 and nr == 6


def test_bilinear_exact_on_plane():
    e, n = np.meshgrid((np.arange(30) + 0.5) * 0.1, (np.arange(20) + 0.5) * 0.1)
    grid = HeightGrid(0.0, 0.0, 0.1, 5.0 + 0.01 * e - 0.02 * n)
    rng = np.random.default_rng(1)
    pe, pn = rng.uniform(0.05, 2.95, 200), rng.uniform(0.05, 1.95, 200)
    assert np.allclose(bilinear(grid, pe, pn), 5.0 + 0.01 * pe - 0.02 * pn, atol=1e-12)
    axis = Axis((0.2, 0.3), (2.7, 1.6))
    prof = sample_profile(grid, axis, 0.05)
    pts = axis.point_at(prof.chainage)
    assert np.allclose(prof.values, 5.0 + 0.01 * pts[:, 0] - 0.02 * pts[:, 1], atol=1e-12)


def test_axis_outside_grid():
    grid = HeightGrid(0.0, 0.0, 0.1, np.zeros((10, 10)))
    with pytest.raises(AxisOutsideGrid):
        sample_profile(grid, Axis((5.0, 5.0), (6.0, 6.0)), 0.1)


def test_axis_geometry():
    axis = Axis((0.0, 0.0), (10.0, 0.0), half_width=1.0)
    assert axis.length == 10.0
    assert np.allclose(axis.normal, [0.0, 1.0])
    c, o = axis.project(np.array([3.0]), np.array([0.5]))
    assert c[0] == 3.0 and o[0] == 0.5
    assert np.allclose(axis.point_at(np.array([2.0]), -1.0), [[2.0, -1.0]])


def test_profile_matches_generator_deck():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    noise = NoiseModel(point_sigma=0.002, seed=3)
    cloud = generate_epoch_cloud(layout, w, 2000.0, noise, cross_tilt=0.0, ground=False)
    grid = rasterize_dem(cloud, 0.05, "median", 3)
    prof = sample_profile(grid, Axis(layout.axis.start, layout.axis.end, 0.2), 0.05)
    ok = prof.valid & (prof.chainage > 0.2) & (prof.chainage < layout.length - 0.2)
    expected = deck_surface(layout, w, prof.chainage[ok], 0.0)
    # about 5 points per cell, median of 5 offsets of bilinear samples
    assert np.sqrt(np.mean((prof.values[ok] - expected) ** 2)) < 0.002 / np.sqrt(5)


def test_interpolate_linear():
    prof = interpolate_profile([(0.0, 0.0), (1.0, 0.001)], 0.5)
    assert prof.chainage.tolist() == [0.0, 0.5, 1.0]
    assert np.allclose(prof.values, [0.0, 0.0005, 0.001], atol=1e-15)


def test_interpolate_gap_and_errors():
    pts = [(x, 1.0) for x in np.arange(0.0, 1.0, 0.01)] + [(x, 1.0) for x in np.arange(2.0, 3.0, 0.01)]
    prof = interpolate_profile(pts, 0.01, max_gap=0.1)
    gap = (prof.chainage > 0.99 + 1e-9) & (prof.chainage < 2.0 - 1e-9)
    assert gap.any() and not prof.valid[gap].any()
    assert prof.valid[~gap].all()
    with pytest.raises(TooFewPoints):
        interpolate_profile([(0.0, 1.0)], 0.01)


def test_esri_round_trip():
    vals = np.array([[1.0, 2.0, np.nan], [4.0, 5.0, 6.0]])
    grid = HeightGrid(604500.0, 5792297.5, 0.1, vals)
    buf = io.StringIO()
    write_esri_ascii(grid, buf)
    text = buf.getvalue()
    assert "NODATA_value -9999" in text
    # first data row is the northern one
    assert text.splitlines()[6].split() == ["4.0000", "5.0000", "6.0000"]
    back = read_esri_ascii(text)
    assert back.frame == grid.frame
    assert np.array_equal(np.isnan(back.values), np.isnan(vals))
    assert np.allclose(back.values[1], vals[1])


def test_frame_mismatch():
    a = HeightGrid(0.0, 0.0, 0.1, np.zeros((2, 2)))
    with pytest.raises(FrameMismatch):
        a.check_same_frame(HeightGrid(0.0, 0.1, 0.1, np.zeros((2, 2))))


def test_profile_csv_round_trip():
    prof = Profile(np.array([0.0, 0.005, 0.01]), np.array([0.0011, np.nan, -0.0093]), 0.005)
    buf = io.StringIO()
    write_profile_csv(prof, buf)
    assert buf.getvalue().splitlines()[2] == "0.005,NA"
    back = read_profile_csv(buf.getvalue())
    assert np.allclose(back.chainage, prof.chainage)
    assert np.array_equal(np.isnan(back.values), np.isnan(prof.values))
