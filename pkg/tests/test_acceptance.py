"""Acceptance suite: one test group per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import math

import numpy as np
import pytest

from deformkit.compare import transducer_deformation
from deformkit.deform import (
    DeformationField,
    SmoothingSpec,
    bending_line,
    cross_profile,
    diff_grids,
    gaussian_smooth,
    render_deformation_map,
)
from deformkit.errors import DegenerateGeometry
from deformkit.georef import SimilarityTransform, checkpoint_residuals, estimate_similarity, summarize_residuals
from deformkit.ingest import parse_transducer_series, parse_xyz_cloud
from deformkit.netadjust import adjust_network, sigma_consistency
from deformkit.pipeline import fit_cross_edges
from deformkit.surface import Axis, HeightGrid, Profile, rasterize_dem
from deformkit.synthbridge import (
    BridgeLayout,
    NoiseModel,
    beam_deflection,
    generate_epoch_cloud,
    network_observations,
    paper_network,
)

crit = pytest.mark.criterion


# --------------------------------------------------------------------------
# 1. end-to-end loading study
# --------------------------------------------------------------------------

@crit(1)
def test_1_deck_cloud_size(paper_run):
    result, _ = paper_run
    cloud = parse_xyz_cloud((result.out_dir / "data" / "cloud_3.xyz").read_text(), "3")
    # density 1000 pts/m^2 over the 17.5 m x 4 m deck plus the ground margin
    assert 70_000 <= len(cloud) <= 130_000


@crit(1)
def test_1_pipeline_matches_transducers(paper_run, record_property):
    result, _ = paper_run
    rep = result.comparisons["photogrammetry"]
    diffs = {p.id: d for p, d in zip(rep.points, rep.diff_mm)}
    record_property("detail", "C {C:+.3f} D {D:+.3f} A {A:+.3f} B {B:+.3f} mm".format(**diffs))
    assert abs(diffs["C"]) <= 1.0
    assert abs(diffs["D"]) <= 1.0


@crit(1)
def test_1_supports_at_zero(paper_run):
    result, _ = paper_run
    rep = result.comparisons["photogrammetry"]
    for p, value in zip(rep.points, rep.method_mm):
        if p.id in ("A", "B"):
            assert abs(value) <= 0.3, p.id


@crit(1)
def test_1_runtime(paper_run, record_property):
    _, seconds = paper_run
    record_property("detail", f"runtime {seconds:.1f} s")
    assert seconds < 60.0


# --------------------------------------------------------------------------
# 2. antisymmetry
# --------------------------------------------------------------------------

@crit(2)
@pytest.mark.parametrize("mode", ["diff-then-smooth", "smooth-then-diff"])
def test_2_antisymmetry(mode):
    rng = np.random.default_rng(2024)
    for _ in range(100):
        nr, nc = rng.integers(8, 30, size=2)
        cell = float(rng.choice([0.005, 0.01, 0.05]))
        vals = [rng.normal(80.0, 0.01, (nr, nc)) for _ in range(2)]
        for v in vals:
            v[rng.random((nr, nc)) < 0.03] = np.nan
        a, b = (HeightGrid(1000.0, 2000.0, cell, v) for v in vals)
        e0, e1 = 1000.0 + cell, 1000.0 + (nc - 1) * cell
        n = 2000.0 + nr * cell * rng.uniform(0.3, 0.7)
        axis = Axis((e0, n), (e1, n), half_width=cell * rng.integers(0, 3))
        spec = SmoothingSpec(cell * rng.uniform(0.6, 3.0))
        ab = bending_line(a, b, axis, cell, spec, mode)
        ba = bending_line(b, a, axis, cell, spec, mode)
        assert np.array_equal(np.isnan(ab.values), np.isnan(ba.values))
        ok = np.isfinite(ab.values)
        assert np.all(ab.values[ok] + ba.values[ok] == 0.0)


# --------------------------------------------------------------------------
# 3. gaussian smoothing
# --------------------------------------------------------------------------

@crit(3)
def test_3_constant_preserved():
    rng = np.random.default_rng(3)
    v = np.full((40, 60), 81.234)
    v[rng.random(v.shape) < 0.2] = np.nan
    out = gaussian_smooth(HeightGrid(0.0, 0.0, 0.01, v), SmoothingSpec(0.03)).values
    ok = np.isfinite(v)
    assert np.array_equal(np.isfinite(out), ok)
    assert np.max(np.abs(out[ok] - 81.234) / 81.234) <= 1e-9


@crit(3)
def test_3_impulse_peak(record_property):
    n = 201
    values = np.zeros(n)
    values[n // 2] = 0.001  # 1 mm impulse at 1 mm spacing
    prof = Profile(np.arange(n) * 0.001, values, 0.001)
    peak_mm = gaussian_smooth(prof, SmoothingSpec(0.01)).values[n // 2] * 1000.0
    # brute-force oracle: the normalized sampled kernel written out term by term
    s = 10.0
    weights = [math.exp(-k * k / (2 * s * s)) for k in range(-40, 41)]
    oracle = 1.0 / sum(weights)
    record_property("detail", f"impulse peak {peak_mm:.6f} mm")
    assert peak_mm == pytest.approx(oracle, abs=1e-12)
    assert abs(peak_mm - 0.03989) <= 1e-5


@crit(3)
def test_3_affine_interior_invariance():
    e, n = np.meshgrid(np.arange(50) * 0.01, np.arange(40) * 0.01)
    v = 81.0 + 0.003 * e - 0.002 * n
    out = gaussian_smooth(HeightGrid(0.0, 0.0, 0.01, v), SmoothingSpec(0.02)).values
    r = int(4 * 2 + 0.5)
    assert np.max(np.abs(out[r:-r, r:-r] - v[r:-r, r:-r])) <= 1e-9


# --------------------------------------------------------------------------
# 4. network adjustment
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def network_truth():
    coords, _ = paper_network(BridgeLayout())
    return coords


@crit(4)
def test_4_zero_noise_recovery(network_truth):
    rng = np.random.default_rng(4)
    init = {p: tuple(np.add(x, rng.normal(0.0, 0.05, 3))) for p, x in network_truth.items()}
    net = adjust_network(network_observations(network_truth), init)
    err = max(np.max(np.abs(np.subtract(net.points[p].xyz, network_truth[p]))) for p in network_truth)
    assert err <= 1e-9


@crit(4)
def test_4_monte_carlo_sigmas(network_truth, record_property):
    nets = [adjust_network(network_observations(network_truth, np.random.default_rng([4, k])), network_truth)
            for k in range(500)]
    ratio = sigma_consistency(nets).ratio
    record_property("detail", f"scatter/sigma {ratio.min():.2f}..{ratio.max():.2f}")
    assert np.all((ratio >= 0.7) & (ratio <= 1.3))
    inner_h = max(s[2] for s in nets[0].inner_sigmas().values())
    assert inner_h < 0.001


# --------------------------------------------------------------------------
# 5. similarity transform
# --------------------------------------------------------------------------

@crit(5)
def test_5_exact_recovery():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        truth = SimilarityTransform.from_params(
            rng.uniform(0.5, 2.0), rng.normal(0.0, 1.0, 3), rng.uniform(-1e3, 1e3, 3))
        src = rng.uniform(-20.0, 20.0, (6, 3))
        T = estimate_similarity(src, truth.apply(src))
        worst = max(worst, np.max(T.residual_norms()), np.max(np.abs(T.apply(src) - truth.apply(src))))
        assert T.scale == pytest.approx(truth.scale, rel=1e-12)
    assert worst <= 1e-9


@crit(5)
def test_5_collinear_rejected():
    src = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [5.0, 5.0, 5.0]])
    with pytest.raises(DegenerateGeometry):
        estimate_similarity(src, src + 1.0)


# --------------------------------------------------------------------------
# 6. checkpoint table
# --------------------------------------------------------------------------

def _table2(data_dir):
    measured, reference = {}, {}
    lines = [ln for ln in (data_dir / "table2_checkpoints.csv").read_text().splitlines()
             if ln and not ln.startswith("#")]
    for row in lines[1:]:
        pid, ep, *xyz = row.split(",")
        vals = [float(x) for x in xyz]
        reference[(pid, ep)] = vals[:3]
        measured[(pid, ep)] = vals[3:]
    return checkpoint_residuals(measured, reference)


@crit(6)
def test_6_table_reproduced(data_dir):
    from deformkit.georef import read_residual_table

    table = _table2(data_dir)
    published = read_residual_table((data_dir / "table2_residuals.csv").read_text())
    assert len(table) == len(published) == 21
    for pid, ep, val in zip(published.ids, published.epochs, published.values):
        assert np.max(np.abs(table.get(pid, ep) - val)) <= 0.1 + 1e-9
    np.testing.assert_allclose(table.get("20", "3"), [-1.6, 7.0, 1.3], atol=0.1)
    np.testing.assert_allclose(table.get("21", "4"), [-0.3, 3.2, 0.1], atol=0.1)


@crit(6)
def test_6_maximum(data_dir, record_property):
    summary = summarize_residuals(_table2(data_dir))
    record_property("detail", f"max {summary.max_abs_value:.1f} mm at {summary.max_abs_location}")
    assert abs(summary.max_abs_value - 7.9) <= 0.1
    assert summary.max_abs_location == ("23", "3", "N")


# --------------------------------------------------------------------------
# 7. TLS path
# --------------------------------------------------------------------------

@crit(7)
def test_7_noise_model():
    noise = NoiseModel()
    assert noise.tls_sigma(0.0) == pytest.approx(0.0005)
    assert noise.tls_sigma(10.0) == pytest.approx(0.003)


@crit(7)
def test_7_tls_line(paper_run, record_property):
    result, _ = paper_run
    line = result.tls_line
    assert line is not None
    assert line.profile.spacing == 0.001 and line.sigma == 0.03
    record_property("detail", f"rms {result.tls_truth_rms_mm:.3f} mm")
    assert result.tls_truth_rms_mm <= 1.0
    shadow = (line.chainage > 12.5) & (line.chainage < 14.5)
    assert shadow.any() and not np.any(line.profile.valid[shadow])


# --------------------------------------------------------------------------
# 8. cross profile and colour map
# --------------------------------------------------------------------------

@crit(8)
def test_8_cross_profile_edges(record_property):
    layout = BridgeLayout()
    load = 95.0 * 8.0 / 9.5  # w(C) = -8 mm, the mean of the two edges
    w0, w1 = beam_deflection(layout, 0.0), beam_deflection(layout, load)
    assert w1(layout.transducer_c) == pytest.approx(-0.008, abs=1e-9)
    noise = NoiseModel(seed=8)
    clouds = [generate_epoch_cloud(layout, w, 1000.0, noise, cross_tilt=0.0005, epoch_id=str(k), stream=k)
              for k, w in ((3, w0), (4, w1))]
    pts = np.vstack([c.points for c in clouds])
    frame = (math.floor(pts[:, 0].min() * 10) / 10, math.floor(pts[:, 1].min() * 10) / 10,
             int(np.ptp(pts[:, 1]) / 0.1) + 2, int(np.ptp(pts[:, 0]) / 0.1) + 2)
    a, b = (rasterize_dem(c, 0.1, "median", 3, frame=frame) for c in clouds)
    field = gaussian_smooth(diff_grids(a, b), SmoothingSpec(0.2))
    prof = cross_profile(field, layout.transducer_c, layout.axis, 0.05, None)
    north, south = fit_cross_edges(prof, layout.width / 2, 0.6)
    record_property("detail", f"north {north * 1000:+.2f} south {south * 1000:+.2f} mm")
    assert abs(north * 1000 + 7.0) <= 0.5
    assert abs(south * 1000 + 9.0) <= 0.5


def _rule(d, threshold, saturation):
    """Colour of a single value, written out independently of the renderer."""
    if d is None or math.isnan(d):
        return (128, 128, 128)
    if abs(d) < threshold:
        return (0, 0, 0)
    level = math.floor(255 * min(abs(d), saturation) / saturation + 0.5)
    return (level, 0, 0) if d < 0 else (0, level, 0)


@crit(8)
def test_8_colour_map_pixel_exact():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    cell = 0.1
    nr, nc = int(layout.width / cell), int(layout.length / cell)
    x = (np.arange(nc) + 0.5) * cell
    values = np.tile(w(x), (nr, 1))
    values[0, :5] = np.nan  # a NODATA patch in the south-west corner
    field = DeformationField(layout.origin_e, layout.origin_n - layout.width / 2, cell, values)
    rgb = render_deformation_map(field, 0.0005, 0.010)
    assert rgb.shape == (nr, nc, 3)
    for r in range(nr):
        for c in range(nc):
            # image row 0 is the northern-most raster row
            assert tuple(rgb[r, c]) == _rule(values[nr - 1 - r, c], 0.0005, 0.010), (r, c)
    col = lambda chainage: int(chainage / cell)  # noqa: E731
    mid = nr // 2
    assert tuple(rgb[mid, col(layout.support_a)]) == (0, 0, 0)
    assert tuple(rgb[mid, col(layout.support_b)]) == (0, 0, 0)
    assert rgb[mid, col(layout.transducer_c), 0] > 200 and rgb[mid, col(layout.transducer_c), 1] == 0
    assert rgb[mid, 0, 1] > 100 and rgb[mid, 0, 0] == 0
    assert tuple(rgb[-1, 0]) == (128, 128, 128)


# --------------------------------------------------------------------------
# 9. transducer fixture
# --------------------------------------------------------------------------

@crit(9)
def test_9_figure_steps(data_dir):
    series = {s.channel: s for s in parse_transducer_series((data_dir / "transducers_fig9.csv").read_text())}
    assert series["L"].values.tolist() == [0, 40, 77, 95, 90]
    expected = {600: (1.4, 3.3), 1200: (3.0, 7.4), 1800: (4.0, 9.5), 2400: (3.7, 8.8)}
    for t, (d_mm, c_mm) in expected.items():
        assert transducer_deformation(series["D"], 0.0, t) == -d_mm
        assert transducer_deformation(series["C"], 0.0, t) == -c_mm
