"""Synthetic bridge: deflection model, noisy epoch clouds, TLS profiles,
transducer series and a tachymetric network with simulated observations.

Geometry: the bridge axis runs along +E from ``(origin_e, origin_n)``;
chainage ``x`` in [0, length], lateral offset ``y`` positive to the north,
``|y| <= width/2``. Heights are absolute (m).
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import LoadOutsideSpan, MalformedLine, UnreachableTarget
from .fileio import atomic_write_text
from .georef import SimilarityTransform
from .ingest import (
    ControlPoint,
    Direction,
    Distance,
    GnssPosition,
    ObservationSet,
    PointCloud,
    SensorSeries,
    Zenith,
    format_observations,
    write_control_points,
    write_coordinates,
    write_transducer_series,
    write_xyz_cloud,
)
from .netadjust import (
    DIRECTION_SIGMA_GON,
    GNSS_SIGMA_H,
    GNSS_SIGMA_V,
    GON,
    ZENITH_SIGMA_GON,
    distance_sigma,
)
from .surface import Axis


def _calibrated_ei(a: float, c: float, b: float, load_kn: float, target: float) -> float:
    span, aa = b - a, c - a
    bb = span - aa
    return load_kn * 1000.0 * bb * aa * (span**2 - bb**2 - aa**2) / (6.0 * span * -target)


@dataclass(frozen=True)
class BridgeLayout:
    """Geometry and stiffness of the synthetic bridge.

    Support, load and transducer chainages are configuration defaults; only
    length and width are measured values of the real structure.
    """

    length: float = 17.5
    width: float = 4.0
    support_a: float = 3.0
    support_b: float = 17.0
    load_c: float = 10.0
    transducer_c: float = 10.0
    transducer_d: float = 5.0
    cantilever: tuple[float, float] = (0.0, 3.0)
    ei: float = _calibrated_ei(3.0, 10.0, 17.0, 95.0, -0.0095)  # N m^2
    origin_e: float = 604500.0
    origin_n: float = 5792300.0
    deck_height: float = 81.5
    camber: float = 0.015  # mid-length rise of the unloaded deck
    ground_margin: float = 0.5
    ground_drop: float = 0.3
    deck_depth: float = 0.45  # top surface to underside
    scanner_chainage: float = 5.0
    scanner_depth: float = 1.2  # below the underside
    tls_angle_step: float = 0.0003  # rad, 3 mm at 10 m
    shadows: tuple[tuple[float, float], ...] = ((12.5, 14.5),)

    def __post_init__(self):
        if not (0 <= self.support_a < self.load_c < self.support_b <= self.length):
            raise ValueError("need 0 <= A < C < B <= length")
        if not self.ei > 0:
            raise ValueError("EI must be positive")
        if not (self.width > 0 and self.length > 0):
            raise ValueError("length and width must be positive")
        lo, hi = self.cantilever
        if not (hi <= self.support_a or lo >= self.support_b):
            raise ValueError("cantilever must lie beyond a support")

    @property
    def axis(self) -> Axis:
        return Axis((self.origin_e, self.origin_n), (self.origin_e + self.length, self.origin_n))

    def deck_base(self, x) -> np.ndarray:
        """Unloaded top-surface height along the deck (longitudinal camber only)."""
        u = np.asarray(x, dtype=float) / self.length
        return self.deck_height + 4.0 * self.camber * u * (1.0 - u)

    def underside(self, x) -> np.ndarray:
        return self.deck_base(x) - self.deck_depth

    @property
    def ground_height(self) -> float:
        return self.deck_height - self.ground_drop

    def to_world(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return self.origin_e + np.asarray(x, dtype=float), self.origin_n + np.asarray(y, dtype=float)



def format_layout(layout: BridgeLayout) -> str:
    out = io.StringIO()
    for f in dataclasses.fields(layout):
        v = getattr(layout, f.name)
        if f.name == "cantilever":
            s = f"{v[0]!r}:{v[1]!r}"
        elif f.name == "shadows":
            s = ";".join(f"{a!r}:{b!r}" for a, b in v)
        else:
            s = repr(float(v))
        out.write(f"{f.name} = {s}\n")
    return out.getvalue()


def parse_layout(text: str) -> BridgeLayout:
    """key = value lines; unknown keys are errors, missing keys keep defaults."""
    names = {f.name for f in dataclasses.fields(BridgeLayout)}
    kw: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or key not in names:
            raise MalformedLine(f"unknown layout key {key!r}", line_no)
        try:
            if key == "cantilever":
                a, b = val.split(":")
                kw[key] = (float(a), float(b))
            elif key == "shadows":
                kw[key] = tuple(tuple(float(x) for x in part.split(":")) for part in val.split(";") if part.strip())
            else:
                kw[key] = float(val)
        except ValueError:
            raise MalformedLine(f"cannot parse value for {key!r}", line_no) from None
    try:
        return BridgeLayout(**kw)
    except ValueError as exc:
        raise MalformedLine(str(exc)) from None


@dataclass(frozen=True)
class LoadStep:
    load_kn: float
    time_s: float = 0.0
    epoch: str | None = None

    def __post_init__(self):
        if not self.load_kn >= 0:
            raise ValueError("load must be >= 0")


def parse_loads(text: str) -> list[LoadStep]:
    """CSV ``time_s,load_kN[,epoch]``; rows must be time-ordered."""
    steps = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.lower().startswith("time_s"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise MalformedLine("expected time_s,load_kN[,epoch]", line_no)
        try:
            epoch = parts[2] if len(parts) == 3 and parts[2] else None
            step = LoadStep(float(parts[1]), float(parts[0]), epoch)
        except ValueError:
            raise MalformedLine("bad load row", line_no) from None
        if steps and step.time_s <= steps[-1].time_s:
            raise MalformedLine("load steps must be strictly time-ordered", line_no)
        steps.append(step)
    return steps


def format_loads(steps: Iterable[LoadStep]) -> str:
    lines = ["time_s,load_kN,epoch"]
    for s in steps:
        lines.append(f"{s.time_s!r},{s.load_kn!r},{s.epoch or ''}")
    return "\n".join(lines) + "\n"


DEFAULT_LOADS = (
    LoadStep(0.0, 0.0, "3"),
    LoadStep(40.0, 600.0),
    LoadStep(77.0, 1200.0),
    LoadStep(95.0, 1800.0),
    LoadStep(90.0, 2400.0, "4"),
)


@dataclass(frozen=True)
class NoiseModel:
    point_sigma: float = 0.002  # m, cloud heights
    tls_sigma0: float = 0.0005  # m
    tls_k: float = 0.00025  # m per m of range
    seed: int = 42

    def __post_init__(self):
        if min(self.point_sigma, self.tls_sigma0, self.tls_k) < 0:
            raise ValueError("noise sigmas must be >= 0")

    def tls_sigma(self, rng_m) -> np.ndarray:
        return self.tls_sigma0 + self.tls_k * np.abs(np.asarray(rng_m, dtype=float))

    def rng(self, *stream: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), *map(int, stream)])


# --------------------------------------------------------------------------
# beam model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Deflection:
    """Closed-form deflection of a simply supported beam with overhangs under
    a point load at C. ``w(x)`` in metres, positive up."""

    layout: BridgeLayout
    load_kn: float

    def support_slopes(self) -> tuple[float, float]:
        lay = self.layout
        P, L = self.load_kn * 1000.0, lay.support_b - lay.support_a
        a = lay.load_c - lay.support_a
        b = L - a
        theta_a = -P * b * (L**2 - b**2) / (6.0 * L * lay.ei)
        theta_b = P * a * (L**2 - a**2) / (6.0 * L * lay.ei)
        return theta_a, theta_b

    def __call__(self, x) -> np.ndarray:
        lay = self.layout
        x = np.asarray(x, dtype=float)
        P, L = self.load_kn * 1000.0, lay.support_b - lay.support_a
        A, B = lay.support_a, lay.support_b
        a = lay.load_c - A
        b = L - a
        k = P / (6.0 * L * lay.ei)
        xi = np.clip(x - A, 0.0, L)
        eta = np.clip(B - x, 0.0, L)
        left = -k * b * xi * (L**2 - b**2 - xi**2)
        right = -k * a * eta * (L**2 - a**2 - eta**2)
        w = np.where(xi <= a, left, right)
        ta, tb = self.support_slopes()
        w = np.where(x < A, ta * (x - A), w)
        w = np.where(x > B, tb * (x - B), w)
        return w


def beam_deflection(layout: BridgeLayout, load: LoadStep | float) -> Deflection:
    load_kn = load.load_kn if isinstance(load, LoadStep) else float(load)
    if not (layout.support_a < layout.load_c < layout.support_b):
        raise LoadOutsideSpan(f"load chainage {layout.load_c} not between the supports")
    if load_kn < 0:
        raise ValueError("load must be >= 0")
    return Deflection(layout, load_kn)


def fd_deflection(layout: BridgeLayout, load_kn: float, nodes: int = 10_001) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference solution of ``EI w'' = M`` over the full length.

    The bending moment comes from statics (reactions at A and B, point load
    at C, unloaded overhangs). Interior nodes carry the second-difference
    equation; the two remaining equations pin the linearly interpolated
    deflection to zero at the supports.
    """
    x = np.linspace(0.0, layout.length, nodes)
    h = x[1] - x[0]
    P = load_kn * 1000.0
    A, B, C = layout.support_a, layout.support_b, layout.load_c
    L = B - A
    ra, rb = P * (B - C) / L, P * (C - A) / L
    M = ra * np.maximum(x - A, 0) - P * np.maximum(x - C, 0) + rb * np.maximum(x - B, 0)
    n = nodes
    i = np.arange(1, n - 1)
    rows = np.concatenate([i - 1, i - 1, i - 1])
    cols = np.concatenate([i - 1, i, i + 1])
    vals = np.concatenate([np.ones(n - 2), -2.0 * np.ones(n - 2), np.ones(n - 2)]) / h**2
    rhs = np.zeros(n)
    rhs[: n - 2] = M[1:-1] / layout.ei
    extra_r, extra_c, extra_v = [], [], []
    for row, s in ((n - 2, A), (n - 1, B)):
        j = min(int(s // h), n - 2)
        t = (s - x[j]) / h
        extra_r += [row, row]
        extra_c += [j, j + 1]
        extra_v += [1.0 - t, t]
    K = sparse.csr_matrix(
        (np.concatenate([vals, extra_v]), (np.concatenate([rows, extra_r]), np.concatenate([cols, extra_c]))),
        shape=(n, n),
    )
    return x, splinalg.spsolve(K.tocsc(), rhs)


def calibrate_stiffness(layout: BridgeLayout, target: tuple[float, float], load: LoadStep | float) -> float:
    """EI that makes the deflection at ``target[0]`` equal ``target[1]`` (m)."""
    x, w_target = target
    if not (layout.support_a < x < layout.support_b):
        raise UnreachableTarget("target chainage must lie strictly between the supports")
    if not w_target < 0:
        raise UnreachableTarget("target deflection must be negative (downward)")
    w_now = float(beam_deflection(layout, load)(x))
    if not w_now < 0:
        raise UnreachableTarget("model gives no downward deflection at the target")
    return layout.ei * w_now / w_target


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def deck_surface(layout: BridgeLayout, w: Callable, x, y, cross_tilt: float = 0.0) -> np.ndarray:
    """Top height at deck coordinates, including deflection and cross tilt.

    The tilt term ``cross_tilt * y * w(x) / w(C)`` follows the bending shape
    and vanishes when the deck is not deflected at C.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    wx = w(x)
    wc = float(w(layout.load_c))
    tilt = cross_tilt * y * wx / wc if wc != 0 else 0.0
    return layout.deck_base(x) + wx + tilt


CLUTTER_BOXES = 6


def generate_epoch_cloud(
    layout: BridgeLayout,
    w: Callable,
    density: float,
    noise: NoiseModel,
    cross_tilt: float = 0.0005,
    clutter: bool = False,
    epoch_id: str = "synthetic",
    stream: int = 0,
    ground: bool = True,
) -> PointCloud:
    """Uniform random sampling of the deck top (plus a ground margin).

    Point count per region is Poisson(area * density). Ground points sit at
    ``ground_height`` and do not move. ``clutter`` raises a few small boxes
    (tripods, cable drums) 0.1 to 0.3 m above the deck.
    """
    if not density > 0:
        raise ValueError("density must be positive")
    rng = noise.rng(1, stream)
    L, W, m = layout.length, layout.width, layout.ground_margin
    n_deck = rng.poisson(density * L * W)
    x = rng.uniform(0.0, L, n_deck)
    y = rng.uniform(-W / 2, W / 2, n_deck)
    h = deck_surface(layout, w, x, y, cross_tilt)
    if clutter:
        for _ in range(CLUTTER_BOXES):
            cx, cy = rng.uniform(0.5, L - 0.5), rng.uniform(-W / 2 + 0.3, W / 2 - 0.3)
            size, height = rng.uniform(0.15, 0.4), rng.uniform(0.1, 0.3)
            inside = (np.abs(x - cx) < size / 2) & (np.abs(y - cy) < size / 2)
            h = np.where(inside, h + height, h)
    xs, ys, hs = [x], [y], [h]
    if ground and m > 0:
        total = (L + 2 * m) * (W + 2 * m)
        n_all = rng.poisson(density * total)
        gx = rng.uniform(-m, L + m, n_all)
        gy = rng.uniform(-W / 2 - m, W / 2 + m, n_all)
        outside = ~((gx >= 0) & (gx < L) & (gy >= -W / 2) & (gy < W / 2))
        gx, gy = gx[outside], gy[outside]
        xs.append(gx)
        ys.append(gy)
        hs.append(np.full(len(gx), layout.ground_height))
    x, y, h = np.concatenate(xs), np.concatenate(ys), np.concatenate(hs)
    if noise.point_sigma > 0:
        h = h + rng.normal(0.0, noise.point_sigma, len(h))
    e, n = layout.to_world(x, y)
    return PointCloud(epoch_id, np.column_stack([e, n, h]))


def generate_tls_profile(
    layout: BridgeLayout,
    w: Callable,
    noise: NoiseModel,
    scanner_chainage: float | None = None,
    shadows: Sequence[tuple[float, float]] | None = None,
    stream: int = 0,
) -> np.ndarray:
    """Centreline underside profile from a scanner below the deck.

    Rays leave the scanner at a constant angular step and hit the underside
    at ``x = xs + depth * tan(angle)``. Height noise has sigma
    ``sigma0 + k * range``. Returns an (n, 2) array of (chainage, height).
    """
    xs = layout.scanner_chainage if scanner_chainage is None else scanner_chainage
    if not (0.0 <= xs <= layout.length):
        raise ValueError("scanner must lie within the bridge length")
    shadows = layout.shadows if shadows is None else shadows
    d = layout.scanner_depth
    lo = math.atan2(-xs, d)
    hi = math.atan2(layout.length - xs, d)
    step = layout.tls_angle_step
    ang = step * np.arange(math.ceil(lo / step), math.floor(hi / step) + 1)
    x = xs + d * np.tan(ang)
    x = x[(x >= 0.0) & (x <= layout.length)]
    for a, b in shadows:
        x = x[(x < a) | (x > b)]
    h = layout.underside(x) + w(x)
    rng = noise.rng(2, stream)
    sig = noise.tls_sigma(np.hypot(x - xs, d))
    if np.any(sig > 0):
        h = h + rng.normal(0.0, 1.0, len(x)) * sig
    return np.column_stack([x, h])


def generate_transducer_truth(
    layout: BridgeLayout,
    steps: Sequence[LoadStep],
    channels: Mapping[str, float] | None = None,
) -> list[SensorSeries]:
    """Stepwise series: the load channel plus displacement channels in the
    sensor convention (sag in mm, down-positive)."""
    times = [s.time_s for s in steps]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("load steps must be time-ordered")
    channels = channels or {"C": layout.transducer_c, "D": layout.transducer_d}
    out = [SensorSeries("load", "load_kN", times, [s.load_kn for s in steps])]
    for name, x in channels.items():
        sag = [-1000.0 * float(beam_deflection(layout, s)(x)) for s in steps]
        out.append(SensorSeries(name, "displacement", times, sag))
    return out


# --------------------------------------------------------------------------
# control network
# --------------------------------------------------------------------------

STATIONS = ("10", "40")
GCP_IDS = ("1", "2", "3", "5", "7", "8")
WALL_IDS = ("R1", "R2")
BRIDGE_POINTS = {  # id -> (chainage offset spec, lateral offset)
    "20": (0.5, 0.0),
    "21": ("D", 0.0),
    "22": ("C", 1.9),
    "23": ("C", -1.9),
    "24": (12.5, 0.0),
    "25": (15.0, 0.0),
    "30": ("B", 0.0),
}
CHECKPOINT_IDS = tuple(BRIDGE_POINTS)


def bridge_point_chainages(layout: BridgeLayout) -> dict[str, tuple[float, float]]:
    named = {"C": layout.transducer_c, "D": layout.transducer_d, "B": layout.support_b}
    return {pid: (named.get(x, x) if isinstance(x, str) else x, y) for pid, (x, y) in BRIDGE_POINTS.items()}


def paper_network(layout: BridgeLayout) -> tuple[dict[str, tuple[float, float, float]], dict[str, str]]:
    """True coordinates and roles of the reference control network (unloaded bridge).

    Two stations, six GCPs around the bridge, two targets on a nearby
    building wall and seven object points on the deck.
    """
    g = layout.ground_height
    local = {
        "10": (-4.0, -8.0, g + 1.6),
        "40": (21.5, 8.0, g + 1.6),
        "1": (-2.0, -4.0, g + 0.05),
        "2": (8.0, -5.0, g - 0.10),
        "3": (19.5, -4.0, g + 0.08),
        "5": (19.5, 4.5, g - 0.06),
        "7": (8.5, 5.0, g + 0.12),
        "8": (-2.0, 4.0, g - 0.03),
        "R1": (-15.0, 20.0, g + 6.0),
        "R2": (-5.0, 25.0, g + 7.5),
    }
    roles = {k: "station" for k in STATIONS}
    roles.update({k: "reference" for k in GCP_IDS + WALL_IDS})
    coords = {}
    for pid, (x, y, h) in local.items():
        e, n = layout.to_world(x, y)
        coords[pid] = (float(e), float(n), float(h))
    for pid, (x, y) in bridge_point_chainages(layout).items():
        e, n = layout.to_world(x, y)
        coords[pid] = (float(e), float(n), float(layout.deck_base(x)))
        roles[pid] = "object"
    return coords, roles


def deformed_bridge_points(layout: BridgeLayout, w: Callable, cross_tilt: float) -> dict[str, tuple[float, float, float]]:
    out = {}
    for pid, (x, y) in bridge_point_chainages(layout).items():
        e, n = layout.to_world(x, y)
        out[pid] = (float(e), float(n), float(deck_surface(layout, w, x, y, cross_tilt)))
    return out


def simulate_observations(
    truth: Mapping[str, Sequence[float]],
    stations: Sequence[str],
    targets: Mapping[str, Sequence[str]] | None = None,
    sets: int = 3,
    gnss_ids: Iterable[str] = (),
    rng: np.random.Generator | None = None,
    sigma_scale: float = 1.0,
) -> ObservationSet:
    """Tachymetric sets (direction, zenith, slope distance) and GNSS priors.

    Direction values include a random orientation per set. With ``rng=None``
    the observations are exact.
    """
    def noise(sig):
        return 0.0 if rng is None else rng.normal(0.0, sig)

    orient_rng = rng if rng is not None else np.random.default_rng(0)
    records = []
    sd, sz = DIRECTION_SIGMA_GON * sigma_scale, ZENITH_SIGMA_GON * sigma_scale
    for st in stations:
        tgts = (targets or {}).get(st) or [p for p in truth if p != st]
        x0 = np.asarray(truth[st], dtype=float)
        for s in range(1, sets + 1):
            o = float(orient_rng.uniform(0.0, 400.0))
            for t in tgts:
                d = np.asarray(truth[t], dtype=float) - x0
                hz = math.hypot(d[0], d[1])
                dist = math.sqrt(hz * hz + d[2] * d[2])
                r = (math.atan2(d[0], d[1]) / GON - o + noise(sd)) % 400.0
                z = math.atan2(hz, d[2]) / GON + noise(sz)
                sdist = distance_sigma(dist) * sigma_scale
                records.append(Direction(st, t, r, sd, str(s)))
                records.append(Zenith(st, t, z, sz))
                records.append(Distance(st, t, dist + noise(sdist), sdist))
    for pid in gnss_ids:
        e, n, h = truth[pid]
        records.append(GnssPosition(pid, e + noise(GNSS_SIGMA_H), n + noise(GNSS_SIGMA_H),
                                    h + noise(GNSS_SIGMA_V), GNSS_SIGMA_H, GNSS_SIGMA_V))
    return ObservationSet(records)


def network_observations(
    truth: Mapping[str, Sequence[float]],
    rng: np.random.Generator | None = None,
    sets: int = 3,
    sigma_scale: float = 1.0,
) -> ObservationSet:
    """Initial campaign: both stations observe every other point; GNSS on all points."""
    return simulate_observations(truth, STATIONS, sets=sets, gnss_ids=list(truth), rng=rng, sigma_scale=sigma_scale)


def checkpoint_observations(
    truth: Mapping[str, Sequence[float]],
    rng: np.random.Generator | None = None,
) -> ObservationSet:
    """Per-epoch survey: one set from station 10, oriented to R1 and 40."""
    targets = {"10": ["R1", "40", *CHECKPOINT_IDS]}
    return simulate_observations(truth, ("10",), targets=targets, sets=1, rng=rng)


def perturbed_frame(rng: np.random.Generator, centre: Sequence[float]) -> SimilarityTransform:
    """A random similarity standing in for an unreferenced photogrammetric block.

    Maps network coordinates into a model frame; rotations of a few degrees
    about the vertical, small tilts, scale within 1e-3 and a shift of metres.
    """
    rotvec = np.array([rng.normal(0, 0.01), rng.normal(0, 0.01), rng.uniform(-0.1, 0.1)])
    scale = 1.0 + rng.normal(0, 1e-3)
    c = np.asarray(centre, dtype=float)
    shift = rng.normal(0, 3.0, 3)
    R = SimilarityTransform.from_params(scale, rotvec, np.zeros(3))
    # rotate about the site centre so model coordinates stay near the origin
    return SimilarityTransform(scale, R.rotation, shift, c)


# --------------------------------------------------------------------------
# study writer
# --------------------------------------------------------------------------

@dataclass
class StudyConfig:
    layout: BridgeLayout = field(default_factory=BridgeLayout)
    loads: tuple[LoadStep, ...] = DEFAULT_LOADS
    density: float = 1000.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    cross_tilt: float = 0.0005  # m/m at the calibration load
    tilt_reference_load: float = 95.0  # kN
    clutter: bool = False
    gcp_pick_sigma: float = 0.0002  # m, GCP marking in the images
    cp_pick_sigma: float = 0.001  # m, bolt picking on the deck
    init_sigma: float = 0.05  # m, approximate coordinates
    tls: bool = True

    def tilt_for(self, load_kn: float) -> float:
        return self.cross_tilt * load_kn / self.tilt_reference_load


def epoch_steps(loads: Sequence[LoadStep]) -> list[LoadStep]:
    return [s for s in loads if s.epoch]


def write_synthetic_study(cfg: StudyConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write a complete synthetic study in ingest formats.

    Files: layout.txt, loads.csv, network_obs.txt, network_init.csv,
    network_truth.csv, control_points.csv, transducers.csv and per epoch
    cloud_<ep>.xyz, gcp_<ep>.csv, cp_<ep>.csv, tachy_<ep>.txt, tls_<ep>.csv.
    Clouds and picks are in a per-epoch model frame, not the network frame.
    """
    out = Path(out_dir)
    lay, noise = cfg.layout, cfg.noise
    written: dict[str, Path] = {}

    def put(name: str, text: str) -> None:
        written[name] = atomic_write_text(out / name, text)

    put("layout.txt", format_layout(lay))
    put("loads.csv", format_loads(cfg.loads))

    truth, roles = paper_network(lay)
    rng_net = noise.rng(6)
    obs = network_observations(truth, rng_net)
    put("network_obs.txt", format_observations(obs))
    init = {p: tuple(np.add(xyz, rng_net.normal(0, cfg.init_sigma, 3))) for p, xyz in truth.items()}
    buf = io.StringIO()
    write_coordinates(init, buf)
    put("network_init.csv", buf.getvalue())
    buf = io.StringIO()
    write_coordinates(truth, buf)
    put("network_truth.csv", buf.getvalue())
    buf = io.StringIO()
    write_control_points(
        [ControlPoint(p, *truth[p], 0.0009, 0.0009, 0.0007, roles[p]) for p in truth], buf)
    put("control_points.csv", buf.getvalue())

    buf = io.StringIO()
    write_transducer_series(generate_transducer_truth(lay, cfg.loads), buf)
    put("transducers.csv", buf.getvalue())

    centre = np.mean([truth[g] for g in GCP_IDS], axis=0)
    for k, step in enumerate(epoch_steps(cfg.loads)):
        ep = step.epoch
        w = beam_deflection(lay, step)
        tilt = cfg.tilt_for(step.load_kn)
        frame = perturbed_frame(noise.rng(5, k), centre)
        cloud = generate_epoch_cloud(lay, w, cfg.density, noise, tilt, cfg.clutter, ep, stream=k)
        cloud = PointCloud(ep, frame.apply(cloud.points))
        buf = io.StringIO()
        write_xyz_cloud(cloud, buf)
        put(f"cloud_{ep}.xyz", buf.getvalue())

        picks = noise.rng(3, k)
        gcp = {g: tuple(frame.apply(np.add(truth[g], picks.normal(0, cfg.gcp_pick_sigma, 3))))
               for g in GCP_IDS}
        buf = io.StringIO()
        write_coordinates(gcp, buf)
        put(f"gcp_{ep}.csv", buf.getvalue())

        moved = deformed_bridge_points(lay, w, tilt)
        cps = {p: tuple(frame.apply(np.add(moved[p], picks.normal(0, cfg.cp_pick_sigma, 3))))
               for p in CHECKPOINT_IDS}
        buf = io.StringIO()
        write_coordinates(cps, buf)
        put(f"cp_{ep}.csv", buf.getvalue())

        epoch_truth = dict(truth)
        epoch_truth.update(moved)
        tobs = checkpoint_observations(epoch_truth, noise.rng(4, k))
        put(f"tachy_{ep}.txt", format_observations(tobs))

        if cfg.tls:
            scatter = generate_tls_profile(lay, w, noise, stream=k)
            put(f"tls_{ep}.csv", "chainage_m,height_m\n"
                + "".join(f"{c!r},{h!r}\n" for c, h in scatter.tolist()))
    return written


def parse_scatter(text: str) -> np.ndarray:
    rows = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.lower().startswith("chainage"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedLine("expected chainage,height", line_no)
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise MalformedLine("cannot parse scatter row", line_no) from None
    return np.array(rows, dtype=float).reshape(-1, 2)
