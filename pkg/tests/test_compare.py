import io

import numpy as np
import pytest

from deformkit.compare import (
    GroundTruthPoint,
    centreline_truth,
    compare_values,
    evaluate_at_points,
    make_report,
    parse_ground_truth,
    transducer_deformation,
    write_ground_truth,
)
from deformkit.deform import BendingLine, DeformationField
from deformkit.errors import EmptyReport, MalformedLine, PointOutsideExtent, TimeOutsideSeries
from deformkit.ingest import SensorSeries
from deformkit.surface import Axis, Profile


def _line(values, spacing=0.01):
    chain = np.arange(len(values)) * spacing
    return BendingLine(Profile(chain, np.asarray(values, dtype=float), spacing), "3", "4", 0.01, "diff-then-smooth")


def test_identical_line_gives_zero_diffs():
    chain = np.arange(0, 17.5, 0.01)
    w = -0.001 * np.sin(np.pi * chain / 17.5)
    line = _line(w)
    truth = [GroundTruthPoint(k, float(w[i]) * 1000.0, chainage=float(chain[i])) for k, i in (("C", 1000), ("D", 500))]
    rep = evaluate_at_points(line, truth, window=0.0)
    assert np.all(rep.diff_mm == 0.0)
    assert rep.rmse == 0.0 and rep.metadata["epochs"] == "3->4"


def test_window_mean():
    line = _line(np.arange(11) * 0.001)
    rep = evaluate_at_points(line, [GroundTruthPoint("p", 0.0, chainage=0.05)], window=0.02)
    assert rep.method_mm[0] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        evaluate_at_points(line, [GroundTruthPoint("p", 0.0, chainage=0.05)], window=-1.0)


def test_point_outside_extent():
    line = _line(np.zeros(11))
    with pytest.raises(PointOutsideExtent):
        evaluate_at_points(line, [GroundTruthPoint("far", 0.0, chainage=5.0)])
    nodata = _line(np.full(11, np.nan))
    with pytest.raises(PointOutsideExtent):
        evaluate_at_points(nodata, [GroundTruthPoint("p", 0.0, chainage=0.05)])


def test_field_lookup_by_chainage_via_axis():
    field = DeformationField(0.0, 0.0, 0.1, np.full((10, 20), -0.004))
    axis = Axis((0.0, 0.5), (2.0, 0.5))
    rep = evaluate_at_points(field, [GroundTruthPoint("C", -4.0, chainage=1.0)], window=0.0, axis=axis)
    assert rep.diff_mm[0] == pytest.approx(0.0, abs=1e-12)
    rep = evaluate_at_points(field, [GroundTruthPoint("C", -3.0, position=(1.0, 0.5))], window=0.2)
    assert rep.diff_mm[0] == pytest.approx(-1.0)


def test_profile_target_and_empty_truth():
    prof = Profile(np.arange(5) * 0.1, np.full(5, 0.002), 0.1)
    assert evaluate_at_points(prof, [GroundTruthPoint("p", 2.0, chainage=0.2)]).diff_mm[0] == pytest.approx(0.0)
    with pytest.raises(EmptyReport):
        evaluate_at_points(prof, [])


def test_truth_point_validation():
    with pytest.raises(ValueError):
        GroundTruthPoint("x", 1.0, source="guess", chainage=0.0)
    with pytest.raises(ValueError):
        GroundTruthPoint("x", float("nan"), chainage=0.0)
    with pytest.raises(ValueError):
        GroundTruthPoint("x", 1.0)


def test_transducer_deformation():
    s = SensorSeries("C", "displacement", [0.0, 600.0, 1200.0], [0.0, 4.0, 8.0])
    assert transducer_deformation(s, 600.0, 600.0) == 0.0
    assert transducer_deformation(s, 0.0, 1200.0) == pytest.approx(-8.0)
    assert transducer_deformation(s, 0.0, 300.0) == pytest.approx(-2.0)
    with pytest.raises(TimeOutsideSeries):
        transducer_deformation(s, 0.0, 1300.0)


def test_centreline_truth():
    north = GroundTruthPoint("22", -7.0, "tachymeter", chainage=10.0)
    south = GroundTruthPoint("23", -9.0, "tachymeter", chainage=10.0)
    mid = centreline_truth("C", north, south)
    assert mid.displacement_mm == -8.0 and mid.chainage == 10.0 and mid.source == "tachymeter"


def test_ground_truth_round_trip():
    pts = [GroundTruthPoint("C", -9.5, chainage=10.0), GroundTruthPoint("A", 0.0, "design", chainage=3.0)]
    buf = io.StringIO()
    write_ground_truth(pts, buf)
    assert parse_ground_truth(buf.getvalue()) == pts
    with pytest.raises(MalformedLine):
        parse_ground_truth("C,transducer,10.0\n")
    with pytest.raises(MalformedLine):
        parse_ground_truth("C,oracle,10.0,1.0\n")


def test_report_determinism_and_flags():
    truth = [GroundTruthPoint("C", -9.5, chainage=10.0), GroundTruthPoint("D", -4.0, chainage=5.0)]
    rep = compare_values("dem", truth, [-9.6, -3.0])
    doc1 = make_report([rep], tolerance_mm=0.5, lines={"line": _line(np.zeros(3))})
    doc2 = make_report([rep], tolerance_mm=0.5, lines={"line": _line(np.zeros(3))})
    assert doc1.files == doc2.files
    assert "PASS" in doc1.text and "FAIL" in doc1.text
    assert {"report.txt", "comparison.csv", "line.dat"} <= set(doc1.files)
    assert rep.diff_of("D") == pytest.approx(1.0)
    with pytest.raises(EmptyReport):
        make_report()


def test_report_write(tmp_path):
    rep = compare_values("dem", [GroundTruthPoint("C", -9.5, chainage=10.0)], [-9.5])
    assert rep.rmse == 0.0
    paths = make_report([rep]).write(tmp_path)
    assert sorted(p.name for p in paths) == ["comparison.csv", "report.txt"]
