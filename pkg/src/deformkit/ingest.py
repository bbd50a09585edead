"""Readers and writers for the plain-text exchange formats.

Formats
-------
cloud (``.xyz``)
    whitespace separated ``E N h [intensity]`` per line, ``#`` starts a comment.
control points (CSV)
    ``id,role,E,N,h,sigmaE,sigmaN,sigmaH``; header row optional.
observations
    one record per line: ``DIST from to value sigma``, ``DIR from to value sigma
    set``, ``ZEN from to value sigma``, ``GNSS id e n h sH sV``. Angles in gon.
transducer series (CSV)
    ``time_s,channel,kind,value``; displacement values in mm, loads in kN.
coordinates (CSV)
    header row naming at least ``id,E,N,h`` (case-insensitive); extra columns
    are ignored, so adjusted-network output and control-point files both read.

All lengths are metres except transducer values. CRLF and LF line endings are
both accepted; any other control character is rejected.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO, Union

import numpy as np

from .errors import (
    DuplicateId,
    EmptyCloud,
    MalformedLine,
    NonMonotoneTime,
    NonPositiveSigma,
    UnknownKind,
    UnknownRecordType,
    UnknownRole,
    UnresolvedPointId,
)

Source = Union[str, TextIO]

ROLES = ("reference", "object", "station")
SENSOR_KINDS = ("displacement", "load_kN")

_BAD_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]|\r(?!\n|$)")


def _read_text(source: Source) -> str:
    if isinstance(source, str):
        return source
    return source.read()


def _split_lines(text: str) -> list[str]:
    """Split into lines, rejecting stray control characters."""
    m = _BAD_CONTROL.search(text)
    if m is not None:
        line_no = text.count("\n", 0, m.start()) + 1
        col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
        raise MalformedLine(f"control character {m.group()!r}", line_no, col)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln[:-1] if ln.endswith("\r") else ln for ln in lines]


def _data_lines(text: str) -> Iterator[tuple[int, str]]:
    for i, raw in enumerate(_split_lines(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield i, line


def _token_column(line: str, index: int) -> int:
    pos = 0
    for k, tok in enumerate(line.split()):
        pos = line.index(tok, pos)
        if k == index:
            return pos + 1
        pos += len(tok)
    return 1


def _finite(token: str, line_no: int, raw: str, index: int, what: str = "value") -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(f"cannot parse {what} {token!r}", line_no, _token_column(raw, index)) from None
    if not math.isfinite(value):
        raise MalformedLine(f"non-finite {what} {token!r}", line_no, _token_column(raw, index))
    return value


def _fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


# --------------------------------------------------------------------------
# point clouds
# --------------------------------------------------------------------------

@dataclass
class PointCloud:
    """Epoch-tagged set of 3D points, ``points`` is an (N, 3) E/N/h array in metres."""

    epoch_id: str
    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.epoch_id, str) or not self.epoch_id:
            raise ValueError("epoch_id must be a non-empty string")
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if len(pts) == 0:
            raise EmptyCloud(f"cloud {self.epoch_id!r} has no points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud coordinates must be finite")
        self.points = pts
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float)
            if inten.shape != (len(pts),):
                raise ValueError("intensity must have one value per point")
            self.intensity = inten

    def __len__(self) -> int:
        return len(self.points)

    @property
    def e(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def n(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def h(self) -> np.ndarray:
        return self.points[:, 2]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(self.epoch_id, points, self.intensity)


def parse_xyz_cloud(stream: Source, epoch_id: str) -> PointCloud:
    """Parse an ASCII ``E N h [intensity]`` cloud.

    The column count of the first data line fixes the layout; every later line
    must match it. Non-finite values are rejected with the offending line and
    column.
    """
    text = _read_text(stream)
    rows: list[tuple[float, ...]] = []
    ncol = None
    for line_no, line in _data_lines(text):
        tokens = line.split()
        if ncol is None:
            if len(tokens) not in (3, 4):
                raise MalformedLine(f"expected 3 or 4 columns, got {len(tokens)}", line_no)
            ncol = len(tokens)
        elif len(tokens) != ncol:
            raise MalformedLine(f"expected {ncol} columns, got {len(tokens)}", line_no)
        try:
            row = tuple(map(float, tokens))
        except ValueError:
            row = None
        if row is None or not all(map(math.isfinite, row)):
            for k, tok in enumerate(tokens):
                _finite(tok, line_no, line, k)
        rows.append(row)
    if not rows:
        raise EmptyCloud(f"cloud {epoch_id!r} has no points")
    arr = np.array(rows, dtype=float)
    intensity = arr[:, 3].copy() if ncol == 4 else None
    return PointCloud(epoch_id, arr[:, :3].copy(), intensity)


def write_xyz_cloud(cloud: PointCloud, stream: TextIO, header: bool = True) -> None:
    """Write a cloud so that :func:`parse_xyz_cloud` reproduces it bit for bit."""
    if header:
        stream.write(f"# epoch {cloud.epoch_id}\n")
        stream.write("# E N h" + (" intensity" if cloud.intensity is not None else "") + "\n")
    cols = [cloud.points[:, 0].tolist(), cloud.points[:, 1].tolist(), cloud.points[:, 2].tolist()]
    if cloud.intensity is not None:
        cols.append(cloud.intensity.tolist())
    stream.write("".join(" ".join(map(repr, row)) + "\n" for row in zip(*cols)))


# --------------------------------------------------------------------------
# control points
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlPoint:
    id: str
    easting: float
    northing: float
    height: float
    sigma_e: float
    sigma_n: float
    sigma_h: float
    role: str

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.easting, self.northing, self.height)


def _csv_rows(text: str) -> Iterator[tuple[int, list[str]]]:
    lines = _split_lines(text)
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader([line]))
        yield i, [c.strip() for c in row]


def parse_control_points(text: Source) -> list[ControlPoint]:
    """Parse ``id,role,E,N,h,sigmaE,sigmaN,sigmaH`` rows."""
    text = _read_text(text)
    points: list[ControlPoint] = []
    seen: set[str] = set()
    for line_no, row in _csv_rows(text):
        if not points and not seen and row and row[0].lower() == "id":
            continue
        if len(row) != 8:
            raise MalformedLine(f"expected 8 fields, got {len(row)}", line_no)
        pid, role = row[0], row[1]
        if not pid:
            raise MalformedLine("empty point id", line_no)
        if pid in seen:
            raise DuplicateId(f"duplicate point id {pid!r}", line_no)
        if role not in ROLES:
            raise UnknownRole(f"unknown role {role!r}", line_no)
        vals = []
        for k, tok in enumerate(row[2:], start=2):
            try:
                v = float(tok)
            except ValueError:
                raise MalformedLine(f"cannot parse {tok!r}", line_no, k + 1) from None
            if not math.isfinite(v):
                raise MalformedLine(f"non-finite value {tok!r}", line_no, k + 1)
            vals.append(v)
        if min(vals[3:]) <= 0:
            raise NonPositiveSigma(f"sigmas must be positive for point {pid!r}", line_no)
        seen.add(pid)
        points.append(ControlPoint(pid, *vals[:3], *vals[3:], role=role))
    return points


def write_control_points(points: Iterable[ControlPoint], stream: TextIO) -> None:
    stream.write("id,role,E,N,h,sigmaE,sigmaN,sigmaH\n")
    for p in points:
        stream.write(",".join([p.id, p.role] + [_fmt(v) for v in (
            p.easting, p.northing, p.height, p.sigma_e, p.sigma_n, p.sigma_h)]) + "\n")


# --------------------------------------------------------------------------
# coordinate tables
# --------------------------------------------------------------------------

def parse_coordinates(text: Source) -> dict[str, tuple[float, float, float]]:
    """Read an ``id,E,N,h,...`` table into ``{id: (e, n, h)}`` preserving order."""
    text = _read_text(text)
    rows = list(_csv_rows(text))
    if not rows:
        return {}
    header_line, header = rows[0]
    lower = [h.lower() for h in header]
    try:
        idx = [lower.index(k) for k in ("id", "e", "n", "h")]
    except ValueError:
        raise MalformedLine("coordinate header must name id,E,N,h", header_line) from None
    coords: dict[str, tuple[float, float, float]] = {}
    for line_no, row in rows[1:]:
        if len(row) != len(header):
            raise MalformedLine(f"expected {len(header)} fields, got {len(row)}", line_no)
        pid = row[idx[0]]
        if pid in coords:
            raise DuplicateId(f"duplicate point id {pid!r}", line_no)
        xyz = []
        for k in idx[1:]:
            try:
                v = float(row[k])
            except ValueError:
                raise MalformedLine(f"cannot parse {row[k]!r}", line_no, k + 1) from None
            if not math.isfinite(v):
                raise MalformedLine(f"non-finite value {row[k]!r}", line_no, k + 1)
            xyz.append(v)
        coords[pid] = tuple(xyz)
    return coords


def write_coordinates(coords: dict[str, Sequence[float]], stream: TextIO) -> None:
    stream.write("id,E,N,h\n")
    for pid, (e, n, h) in coords.items():
        stream.write(f"{pid},{_fmt(e)},{_fmt(n)},{_fmt(h)}\n")


# --------------------------------------------------------------------------
# survey observations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Distance:
    frm: str
    to: str
    value: float  # m, slope distance
    sigma: float


@dataclass(frozen=True)
class Direction:
    frm: str
    to: str
    value: float  # gon
    sigma: float  # gon
    set_id: str


@dataclass(frozen=True)
class Zenith:
    frm: str
    to: str
    value: float  # gon
    sigma: float  # gon


@dataclass(frozen=True)
class GnssPosition:
    id: str
    e: float
    n: float
    h: float
    sigma_h: float  # horizontal
    sigma_v: float  # vertical


Observation = Union[Distance, Direction, Zenith, GnssPosition]


@dataclass
class ObservationSet:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def point_ids(self) -> list[str]:
        """Every referenced point id, in order of first appearance."""
        seen: dict[str, None] = {}
        for r in self.records:
            if isinstance(r, GnssPosition):
                seen.setdefault(r.id)
            else:
                seen.setdefault(r.frm)
                seen.setdefault(r.to)
        return list(seen)

    def direction_groups(self) -> dict[tuple[str, str], list[Direction]]:
        groups: dict[tuple[str, str], list[Direction]] = {}
        for r in self.records:
            if isinstance(r, Direction):
                groups.setdefault((r.frm, r.set_id), []).append(r)
        return groups

    def of_type(self, kind) -> list:
        return [r for r in self.records if isinstance(r, kind)]


_RECORD_ARITY = {"DIST": 5, "DIR": 6, "ZEN": 5, "GNSS": 7}


def parse_observations(text: Source, point_ids: Iterable[str] | None = None) -> ObservationSet:
    """Parse survey observation records.

    If ``point_ids`` is given every referenced id must be in it, otherwise
    :class:`UnresolvedPointId` is raised for the first offending line.
    """
    text = _read_text(text)
    known = set(point_ids) if point_ids is not None else None
    records: list[Observation] = []
    for line_no, line in _data_lines(text):
        tokens = line.split()
        kind = tokens[0].upper()
        if kind not in _RECORD_ARITY:
            raise UnknownRecordType(f"unknown record type {tokens[0]!r}", line_no)
        if len(tokens) != _RECORD_ARITY[kind]:
            raise MalformedLine(f"{kind} expects {_RECORD_ARITY[kind] - 1} fields", line_no)
        if kind == "GNSS":
            ids = [tokens[1]]
            nums = [_finite(t, line_no, line, k) for k, t in enumerate(tokens[2:7], start=2)]
            sig = nums[3:]
        else:
            ids = tokens[1:3]
            nums = [_finite(t, line_no, line, k) for k, t in enumerate(tokens[3:5], start=3)]
            sig = nums[1:]
            if ids[0] == ids[1]:
                raise MalformedLine("observation from a point to itself", line_no)
        if min(sig) <= 0:
            raise NonPositiveSigma("observation sigma must be positive", line_no)
        if known is not None:
            for pid in ids:
                if pid not in known:
                    raise UnresolvedPointId(f"unknown point id {pid!r}", line_no)
        if kind == "DIST":
            if nums[0] <= 0:
                raise MalformedLine("distance must be positive", line_no)
            records.append(Distance(ids[0], ids[1], nums[0], nums[1]))
        elif kind == "DIR":
            records.append(Direction(ids[0], ids[1], nums[0], nums[1], tokens[5]))
        elif kind == "ZEN":
            records.append(Zenith(ids[0], ids[1], nums[0], nums[1]))
        else:
            records.append(GnssPosition(ids[0], *nums))
    return ObservationSet(records)


def format_observations(obs: ObservationSet) -> str:
    out = io.StringIO()
    for r in obs.records:
        if isinstance(r, Distance):
            out.write(f"DIST {r.frm} {r.to} {_fmt(r.value)} {_fmt(r.sigma)}\n")
        elif isinstance(r, Direction):
            out.write(f"DIR {r.frm} {r.to} {_fmt(r.value)} {_fmt(r.sigma)} {r.set_id}\n")
        elif isinstance(r, Zenith):
            out.write(f"ZEN {r.frm} {r.to} {_fmt(r.value)} {_fmt(r.sigma)}\n")
        else:
            out.write(f"GNSS {r.id} {_fmt(r.e)} {_fmt(r.n)} {_fmt(r.h)} "
                      f"{_fmt(r.sigma_h)} {_fmt(r.sigma_v)}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# transducer / load-cell series
# --------------------------------------------------------------------------

@dataclass
class SensorSeries:
    """Time series of one channel.

    Displacement channels follow the sensor convention (``down_positive``,
    magnitude of sag); :func:`deformkit.compare.transducer_deformation`
    normalizes them to up-positive.
    """

    channel: str
    kind: str
    times: np.ndarray
    values: np.ndarray
    down_positive: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in SENSOR_KINDS:
            raise UnknownKind(f"unknown sensor kind {self.kind!r}")
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1D arrays of equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise NonMonotoneTime(self.channel)

    def __len__(self) -> int:
        return len(self.times)


def parse_transducer_series(text: Source) -> list[SensorSeries]:
    """Parse ``time_s,channel,kind,value`` rows into one series per channel."""
    text = _read_text(text)
    data: dict[str, tuple[str, list[float], list[float]]] = {}
    first = True
    for line_no, row in _csv_rows(text):
        if first:
            first = False
            if row and row[0].lower() == "time_s":
                continue
        if len(row) != 4:
            raise MalformedLine(f"expected 4 fields, got {len(row)}", line_no)
        t_tok, channel, kind, v_tok = row
        if kind not in SENSOR_KINDS:
            raise UnknownKind(f"unknown sensor kind {kind!r}", line_no)
        try:
            t, v = float(t_tok), float(v_tok)
        except ValueError:
            raise MalformedLine("cannot parse time/value", line_no) from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise MalformedLine("non-finite time/value", line_no)
        if channel in data:
            k0, ts, vs = data[channel]
            if k0 != kind:
                raise UnknownKind(f"channel {channel!r} switches kind to {kind!r}", line_no)
            if t <= ts[-1]:
                raise NonMonotoneTime(channel, line_no)
        else:
            ts, vs = [], []
            data[channel] = (kind, ts, vs)
        ts.append(t)
        vs.append(v)
    return [SensorSeries(ch, kind, ts, vs) for ch, (kind, ts, vs) in data.items()]


def write_transducer_series(series: Iterable[SensorSeries], stream: TextIO) -> None:
    """Write channels interleaved by time so the file reads like a logger dump."""
    rows = []
    for order, s in enumerate(series):
        for t, v in zip(s.times.tolist(), s.values.tolist()):
            rows.append((t, order, s.channel, s.kind, v))
    rows.sort(key=lambda r: (r[0], r[1]))
    stream.write("time_s,channel,kind,value\n")
    for t, _, ch, kind, v in rows:
        stream.write(f"{_fmt(t)},{ch},{kind},{_fmt(v)}\n")
