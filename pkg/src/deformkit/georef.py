"""Georeferencing of epoch clouds via GCP correspondences and checkpoint QA.

Transforms map source (block/model frame) to target (network frame) as
``y = scale * R @ (x - pivot) + t``. Checkpoints are only ever evaluated, never used as
constraints.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry, EmptyTable, KeyMismatch, MalformedLine, TooFewPoints
from .ingest import PointCloud

COMPONENTS = ("E", "N", "H")
_COMPONENT_NAMES = {"E": "Easting", "N": "Northing", "H": "Altitude"}


@dataclass
class SimilarityTransform:
    """``y = scale * R @ (x - pivot) + translation``.

    With the default zero pivot this is the usual ``scale * R @ x + t``. A
    pivot near the data keeps rounding proportional to the distance from it
    rather than to the absolute (projected) coordinates, which matters at
    northings of several million metres.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    residuals: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.pivot = np.asarray(self.pivot, dtype=float).reshape(3)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    @classmethod
    def from_params(cls, scale: float, rotvec: Sequence[float], translation: Sequence[float]):
        """Build from a rotation vector (axis * angle, radians)."""
        return cls(float(scale), Rotation.from_rotvec(rotvec).as_matrix(), translation)

    def params(self) -> tuple[float, np.ndarray, np.ndarray]:
        """(scale, rotation vector, t) of the pivot-free form ``scale * R @ x + t``."""
        R = self.rotation.astype(np.longdouble)
        t = self.translation.astype(np.longdouble) - np.longdouble(self.scale) * (R @ self.pivot.astype(np.longdouble))
        return self.scale, Rotation.from_matrix(self.rotation).as_rotvec(), t.astype(float)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * (pts - self.pivot) @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        # the image of the pivot becomes the new pivot, so no large products appear
        return SimilarityTransform(1.0 / self.scale, self.rotation.T, self.pivot.copy(), self.translation.copy())

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ other``: apply ``other`` first."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.apply(other.translation),
            other.pivot.copy(),
        )

    def residual_norms(self) -> np.ndarray | None:
        return None if self.residuals is None else np.linalg.norm(self.residuals, axis=1)


def _check_spread(centered: np.ndarray, what: str) -> None:
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry(f"{what} points are coincident or collinear")


def estimate_similarity(source, target, allow_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform from point correspondences.

    Closed-form SVD solution (Umeyama). The returned transform carries the
    per-correspondence residuals ``T(source) - target`` in ``.residuals``.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target must have the same shape")
    if len(src) < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {len(src)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    _check_spread(xs, "source")
    _check_spread(xd, "target")
    cov = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = (U * d) @ Vt
    if allow_scale:
        var_s = np.sum(xs**2) / len(src)
        scale = float(np.sum(S * d) / var_s)
    else:
        scale = 1.0
    T = SimilarityTransform(scale, R, mu_d, mu_s)
    T.residuals = T.apply(src) - dst
    return T


def match_points(source: Mapping[str, Sequence[float]], target: Mapping[str, Sequence[float]]):
    """Correspondence arrays for ids present in both maps (source order)."""
    ids = [p for p in source if p in target]
    src = np.array([source[p] for p in ids], dtype=float).reshape(-1, 3)
    dst = np.array([target[p] for p in ids], dtype=float).reshape(-1, 3)
    return ids, src, dst


def apply_transform(cloud: PointCloud, t: SimilarityTransform) -> PointCloud:
    return PointCloud(cloud.epoch_id, t.apply(cloud.points), cloud.intensity)


# --------------------------------------------------------------------------
# checkpoint residuals
# --------------------------------------------------------------------------

@dataclass
class ResidualTable:
    """Checkpoint errors in mm, measured-in-cloud minus tachymetric reference."""

    ids: list[str]
    epochs: list[str]
    values: np.ndarray  # (n, 3) dE, dN, dH in mm

    def __len__(self) -> int:
        return len(self.ids)

    def get(self, point_id: str, epoch: str) -> np.ndarray:
        for i, (p, e) in enumerate(zip(self.ids, self.epochs)):
            if p == point_id and e == epoch:
                return self.values[i]
        raise KeyError((point_id, epoch))


def checkpoint_residuals(
    measured: Mapping[tuple[str, str], Sequence[float]],
    reference: Mapping[tuple[str, str], Sequence[float]],
) -> ResidualTable:
    """Component-wise differences (mm) keyed by ``(checkpoint id, epoch)``."""
    for key in measured:
        if key not in reference:
            raise KeyMismatch(*key)
    for key in reference:
        if key not in measured:
            raise KeyMismatch(*key)
    keys = list(measured)
    vals = np.array([np.subtract(measured[k], reference[k]) for k in keys], dtype=float).reshape(-1, 3)
    return ResidualTable([k[0] for k in keys], [k[1] for k in keys], vals * 1000.0)


@dataclass
class ResidualStats:
    rmse: np.ndarray
    mean: np.ndarray
    max_abs: np.ndarray
    count: int


@dataclass
class ResidualSummary:
    overall: ResidualStats
    per_epoch: dict[str, ResidualStats]
    max_abs_value: float
    max_abs_location: tuple[str, str, str]  # (id, epoch, component)


def _stats(values: np.ndarray) -> ResidualStats:
    return ResidualStats(
        rmse=np.sqrt(np.mean(values**2, axis=0)),
        mean=np.mean(values, axis=0),
        max_abs=np.max(np.abs(values), axis=0),
        count=len(values),
    )


def summarize_residuals(table: ResidualTable) -> ResidualSummary:
    if len(table) == 0:
        raise EmptyTable("residual table is empty")
    v = table.values
    i, k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
    per_epoch = {}
    for ep in dict.fromkeys(table.epochs):
        sel = np.array([e == ep for e in table.epochs])
        per_epoch[ep] = _stats(v[sel])
    return ResidualSummary(
        overall=_stats(v),
        per_epoch=per_epoch,
        max_abs_value=float(abs(v[i, k])),
        max_abs_location=(table.ids[i], table.epochs[i], COMPONENTS[k]),
    )


def write_residual_table(table: ResidualTable, stream: TextIO) -> None:
    """CSV in the layout ``CP, Easting_<ep>..., Northing_<ep>..., Altitude_<ep>...``."""
    epochs = list(dict.fromkeys(table.epochs))
    ids = list(dict.fromkeys(table.ids))
    header = ["CP"] + [f"{_COMPONENT_NAMES[c]}_{ep}" for c in COMPONENTS for ep in epochs]
    stream.write(",".join(header) + "\n")
    lookup = {(p, e): table.values[i] for i, (p, e) in enumerate(zip(table.ids, table.epochs))}
    for pid in ids:
        cells = [pid]
        for k in range(3):
            for ep in epochs:
                val = lookup.get((pid, ep))
                cells.append("NA" if val is None else f"{val[k]:+.1f}")
        stream.write(",".join(cells) + "\n")


def read_residual_table(text: str) -> ResidualTable:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise EmptyTable("residual file is empty")
    header = [h.strip() for h in rows[0]]
    cols = []
    for name in header[1:]:
        comp, _, ep = name.partition("_")
        inv = {v: k for k, v in _COMPONENT_NAMES.items()}
        if comp not in inv or not ep:
            raise MalformedLine(f"bad residual column {name!r}", 1)
        cols.append((COMPONENTS.index(inv[comp]), ep))
    epochs = list(dict.fromkeys(ep for _, ep in cols))
    ids, eps, vals = [], [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedLine(f"expected {len(header)} fields", line_no)
        per = {ep: [math.nan] * 3 for ep in epochs}
        for (k, ep), cell in zip(cols, row[1:]):
            cell = cell.strip()
            if cell != "NA":
                try:
                    per[ep][k] = float(cell)
                except ValueError:
                    raise MalformedLine(f"cannot parse {cell!r}", line_no) from None
        for ep in epochs:
            if not any(math.isnan(x) for x in per[ep]):
                ids.append(row[0].strip())
                eps.append(ep)
                vals.append(per[ep])
    return ResidualTable(ids, eps, np.array(vals, dtype=float).reshape(-1, 3))


# --------------------------------------------------------------------------
# stable-ground bias removal
# --------------------------------------------------------------------------

def remove_vertical_bias(field, stable_polygons: Iterable[Sequence[Sequence[float]]]):
    """Subtract the median deformation found inside stable-ground polygons.

    ``field`` is a :class:`deformkit.deform.DeformationField`; polygons are
    sequences of (e, n) vertices. Returns ``(corrected_field, bias_m)``.
    """
    from matplotlib.path import Path

    ee, nn = field.cell_centers()
    pts = np.column_stack([ee.ravel(), nn.ravel()])
    inside = np.zeros(len(pts), dtype=bool)
    for poly in stable_polygons:
        inside |= Path(np.asarray(poly, dtype=float)).contains_points(pts)
    vals = field.values.ravel()[inside]
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        raise EmptyTable("no valid deformation cells inside the stable polygons")
    bias = float(np.median(vals))
    return field.with_values(field.values - bias), bias
