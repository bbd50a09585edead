import dataclasses

import numpy as np
import pytest

from deformkit.errors import LoadOutsideSpan, MalformedLine, UnreachableTarget
from deformkit.synthbridge import (
    DEFAULT_LOADS,
    BridgeLayout,
    LoadStep,
    NoiseModel,
    beam_deflection,
    calibrate_stiffness,
    fd_deflection,
    format_layout,
    format_loads,
    generate_epoch_cloud,
    generate_tls_profile,
    generate_transducer_truth,
    parse_layout,
    parse_loads,
)


def _random_layouts(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        length = rng.uniform(10.0, 30.0)
        a = rng.uniform(0.5, 0.3 * length)
        b = rng.uniform(0.7 * length, length - 0.5)
        c = rng.uniform(a + 0.5, b - 0.5)
        yield BridgeLayout(length=length, support_a=a, support_b=b, load_c=c, transducer_c=c,
                           transducer_d=0.5 * (a + c), cantilever=(0.0, a), ei=rng.uniform(1e8, 1e10)), rng.uniform(10, 200)


def test_closed_form_matches_fd_oracle():
    worst = 0.0
    for layout, load in _random_layouts(20):
        x, w_fd = fd_deflection(layout, load)
        w = beam_deflection(layout, load)(x)
        worst = max(worst, np.max(np.abs(w - w_fd)) / np.max(np.abs(w_fd)))
    assert worst < 1e-6


def test_supports_and_zero_load():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    assert abs(float(w(layout.support_a))) < 1e-15 and abs(float(w(layout.support_b))) < 1e-15
    assert np.all(beam_deflection(layout, 0.0)(np.linspace(0, layout.length, 50)) == 0.0)


def test_linearity_and_stiffness():
    layout = BridgeLayout()
    assert float(beam_deflection(layout, 95.0)(10.0)) == pytest.approx(-0.0095, rel=1e-12)
    assert float(beam_deflection(layout, 40.0)(10.0)) == pytest.approx(-0.0040, rel=1e-12)
    stiff = dataclasses.replace(layout, ei=2 * layout.ei)
    assert float(beam_deflection(stiff, 95.0)(10.0)) == pytest.approx(-0.00475, rel=1e-12)


def test_cantilever_lifts():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    assert float(w(0.0)) > 0.0
    x = np.linspace(0.0, layout.support_a, 5)
    assert np.allclose(np.diff(w(x), 2), 0.0, atol=1e-15)


def test_calibrate_stiffness():
    layout = BridgeLayout()
    ei = calibrate_stiffness(layout, (10.0, -0.0095), 95.0)
    assert ei == pytest.approx(layout.ei, rel=1e-12)
    with pytest.raises(UnreachableTarget):
        calibrate_stiffness(layout, (1.0, -0.001), 95.0)
    with pytest.raises(UnreachableTarget):
        calibrate_stiffness(layout, (10.0, 0.001), 95.0)
    with pytest.raises(UnreachableTarget):
        calibrate_stiffness(layout, (10.0, -0.001), 0.0)


def test_load_outside_span():
    layout = object.__new__(BridgeLayout)
    for f in dataclasses.fields(BridgeLayout):
        object.__setattr__(layout, f.name, f.default)
    object.__setattr__(layout, "load_c", 1.0)
    with pytest.raises(LoadOutsideSpan):
        beam_deflection(layout, 95.0)
    with pytest.raises(ValueError):
        BridgeLayout(load_c=1.0)


def test_cloud_determinism_and_count():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    a = generate_epoch_cloud(layout, w, 1000.0, NoiseModel(seed=7), ground=False)
    b = generate_epoch_cloud(layout, w, 1000.0, NoiseModel(seed=7), ground=False)
    assert np.array_equal(a.points, b.points)
    expected = 1000.0 * layout.length * layout.width
    assert abs(len(a) - expected) < 5 * np.sqrt(expected)
    c = generate_epoch_cloud(layout, w, 1000.0, NoiseModel(seed=8), ground=False)
    assert not np.array_equal(a.points[:10], c.points[:10])


def test_tls_noise_free_and_shadow():
    layout = BridgeLayout()
    w = beam_deflection(layout, 95.0)
    quiet = NoiseModel(tls_sigma0=0.0, tls_k=0.0)
    scatter = generate_tls_profile(layout, w, quiet)
    x, h = scatter[:, 0], scatter[:, 1]
    assert np.array_equal(h, layout.underside(x) + w(x))
    assert not np.any((x >= 12.5) & (x <= 14.5))
    assert x.min() >= 0.0 and x.max() <= layout.length


def test_transducer_truth():
    series = {s.channel: s for s in generate_transducer_truth(BridgeLayout(), DEFAULT_LOADS)}
    assert series["load"].values.tolist() == [0.0, 40.0, 77.0, 95.0, 90.0]
    assert np.allclose(series["C"].values[1:4], [4.0, 7.7, 9.5], atol=1e-12)
    assert series["C"].down_positive


def test_layout_and_loads_round_trip():
    layout = BridgeLayout(load_c=9.0, ei=1.5e9)
    assert parse_layout(format_layout(layout)) == layout
    steps = list(DEFAULT_LOADS)
    assert parse_loads(format_loads(steps)) == steps
    with pytest.raises(MalformedLine):
        parse_loads("0,0\n0,10\n")
    with pytest.raises(ValueError):
        LoadStep(-1.0)
