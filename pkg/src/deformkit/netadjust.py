"""Weighted least-squares adjustment of a 3D tachymetric control network.

Observation equations in a local projected frame (no curvature/refraction;
networks here span well under 100 m):

* slope distance ``s = |X_to - X_from|``
* direction ``r = atan2(dE, dN) - o``, one orientation unknown ``o`` per
  (station, set)
* zenith angle ``z = atan2(hypot(dE, dN), dH)``
* GNSS position as a low-weight pseudo-observation of the point coordinates

The datum comes from the GNSS priors, or from points held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy import linalg

from .errors import (
    DataError,
    DatumDefect,
    InsufficientRedundancy,
    MissingTruthPoint,
    NoConvergence,
)
from .ingest import Direction, Distance, GnssPosition, ObservationSet, Zenith

GON = math.pi / 200.0

# instrument defaults
DIRECTION_SIGMA_GON = 0.0003
ZENITH_SIGMA_GON = 0.0003
DISTANCE_SIGMA_M = 0.001
DISTANCE_SIGMA_PPM = 1.5
GNSS_SIGMA_H = 0.010
GNSS_SIGMA_V = 0.020


def distance_sigma(d: float) -> float:
    """Default distance sigma: 1 mm + 1.5 ppm."""
    return DISTANCE_SIGMA_M + DISTANCE_SIGMA_PPM * 1e-6 * d


def wrap_gon(x):
    """Wrap an angle difference in gon into (-200, 200]."""
    y = np.mod(np.asarray(x, dtype=float) + 200.0, 400.0) - 200.0
    return np.where(y == -200.0, 200.0, y)


@dataclass
class AdjustmentConfig:
    max_iterations: int = 20
    convergence_threshold: float = 1e-5  # m
    check_redundancy: bool = True
    use_variance_factor: bool = True  # scale covariance by the a-posteriori factor

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be > 0")


@dataclass(frozen=True)
class AdjustedPoint:
    id: str
    e: float
    n: float
    h: float
    sigma_e: float
    sigma_n: float
    sigma_h: float
    fixed: bool = False

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.e, self.n, self.h)


@dataclass
class AdjustedNetwork:
    points: dict[str, AdjustedPoint]
    orientations: dict[tuple[str, str], float]  # gon
    orientation_sigmas: dict[tuple[str, str], float]  # gon
    variance_factor: float
    iterations_used: int
    redundancy: int
    unknown_ids: list[str]
    cofactor: np.ndarray  # coordinate block of N^-1, order unknown_ids x (e, n, h)
    residuals: np.ndarray  # observed minus computed at the solution (m / gon)
    normalized_residuals: np.ndarray = field(repr=False, default=None)
    covariance_scale: float = 1.0

    def coordinates(self) -> dict[str, tuple[float, float, float]]:
        return {pid: p.xyz for pid, p in self.points.items()}

    def covariance(self) -> np.ndarray:
        return self.covariance_scale * self.cofactor

    def inner_sigmas(self, datum_ids: Iterable[str] | None = None) -> dict[str, tuple[float, float, float]]:
        """Point sigmas after an S-transformation onto the datum points.

        Removes the shared translation and azimuth uncertainty inherited from
        the weak GNSS datum, leaving the precision of the network geometry
        itself. ``datum_ids`` defaults to every adjusted point.
        """
        ids = self.unknown_ids
        if not ids:
            return {}
        datum = set(ids if datum_ids is None else datum_ids) & set(ids)
        if not datum:
            raise ValueError("no datum point among the adjusted points")
        xyz = np.array([self.points[p].xyz for p in ids])
        w = np.array([p in datum for p in ids], dtype=float)
        ce = np.sum(xyz[:, 0] * w) / w.sum()
        cn = np.sum(xyz[:, 1] * w) / w.sum()
        m = len(ids)
        G = np.zeros((3 * m, 4))
        G[0::3, 0] = 1.0
        G[1::3, 1] = 1.0
        G[2::3, 2] = 1.0
        G[0::3, 3] = -(xyz[:, 1] - cn)
        G[1::3, 3] = xyz[:, 0] - ce
        W = np.repeat(w, 3)
        GtW = G.T * W
        S = np.eye(3 * m) - G @ np.linalg.solve(GtW @ G, GtW)
        Q = S @ self.covariance() @ S.T
        sig = np.sqrt(np.clip(np.diag(Q), 0.0, None)).reshape(m, 3)
        return {pid: tuple(sig[i]) for i, pid in enumerate(ids)}


class _Design:
    """Index bookkeeping shared by all iterations."""

    def __init__(self, obs: ObservationSet, all_ids: list[str], fixed: set[str]):
        self.all_ids = all_ids
        self.index = {pid: i for i, pid in enumerate(all_ids)}
        self.unknown_ids = [p for p in all_ids if p not in fixed]
        self.col = np.full(len(all_ids), -1, dtype=int)
        for k, pid in enumerate(self.unknown_ids):
            self.col[self.index[pid]] = 3 * k
        groups = obs.direction_groups()
        self.group_keys = list(groups)
        gidx = {key: j for j, key in enumerate(self.group_keys)}
        self.n_coord = 3 * len(self.unknown_ids)
        self.n_unknowns = self.n_coord + len(self.group_keys)

        def pairs(records):
            frm = np.array([self.index[r.frm] for r in records], dtype=int)
            to = np.array([self.index[r.to] for r in records], dtype=int)
            val = np.array([r.value for r in records], dtype=float)
            sig = np.array([r.sigma for r in records], dtype=float)
            return frm, to, val, sig

        self.dist = pairs(obs.of_type(Distance))
        dirs = obs.of_type(Direction)
        self.dirs = pairs(dirs)
        self.dir_group = np.array([gidx[(r.frm, r.set_id)] for r in dirs], dtype=int)
        self.zen = pairs(obs.of_type(Zenith))
        gnss = obs.of_type(GnssPosition)
        self.gnss_pt = np.array([self.index[r.id] for r in gnss], dtype=int)
        self.gnss_val = np.array([[r.e, r.n, r.h] for r in gnss], dtype=float).reshape(-1, 3)
        self.gnss_sig = np.array([[r.sigma_h, r.sigma_h, r.sigma_v] for r in gnss], dtype=float).reshape(-1, 3)

        nd, nr, nz, ng = len(self.dist[0]), len(dirs), len(self.zen[0]), len(gnss)
        self.n_obs = nd + nr + nz + 3 * ng
        self.slices = {
            "dist": slice(0, nd),
            "dir": slice(nd, nd + nr),
            "zen": slice(nd + nr, nd + nr + nz),
            "gnss": slice(nd + nr + nz, self.n_obs),
        }
        sigma = np.concatenate([
            self.dist[3],
            self.dirs[3] * GON,
            self.zen[3] * GON,
            self.gnss_sig.ravel(),
        ])
        self.weights = 1.0 / sigma**2

    def _place(self, A, rows, pts, vals, sign):
        cols = self.col[pts]
        ok = cols >= 0
        for k in range(3):
            A[rows[ok], cols[ok] + k] += sign * vals[ok, k]

    def linearize(self, X: np.ndarray, orient: np.ndarray):
        """Return design matrix A and misclosure l (observed - computed, SI / rad)."""
        A = np.zeros((self.n_obs, self.n_unknowns))
        l = np.zeros(self.n_obs)

        frm, to, val, _ = self.dist
        if len(frm):
            d = X[to] - X[frm]
            s = np.linalg.norm(d, axis=1)
            rows = np.arange(self.slices["dist"].start, self.slices["dist"].stop)
            g = d / s[:, None]
            self._place(A, rows, to, g, 1.0)
            self._place(A, rows, frm, g, -1.0)
            l[rows] = val - s

        frm, to, val, _ = self.dirs
        if len(frm):
            d = X[to] - X[frm]
            hd2 = d[:, 0] ** 2 + d[:, 1] ** 2
            az = np.arctan2(d[:, 0], d[:, 1])
            rows = np.arange(self.slices["dir"].start, self.slices["dir"].stop)
            g = np.column_stack([d[:, 1] / hd2, -d[:, 0] / hd2, np.zeros(len(hd2))])
            self._place(A, rows, to, g, 1.0)
            self._place(A, rows, frm, g, -1.0)
            A[rows, self.n_coord + self.dir_group] = -1.0
            computed = (az - orient[self.dir_group]) / GON
            l[rows] = wrap_gon(val - computed) * GON

        frm, to, val, _ = self.zen
        if len(frm):
            d = X[to] - X[frm]
            hd = np.hypot(d[:, 0], d[:, 1])
            s2 = hd**2 + d[:, 2] ** 2
            z = np.arctan2(hd, d[:, 2])
            rows = np.arange(self.slices["zen"].start, self.slices["zen"].stop)
            g = np.column_stack([
                d[:, 0] * d[:, 2] / (s2 * hd),
                d[:, 1] * d[:, 2] / (s2 * hd),
                -hd / s2,
            ])
            self._place(A, rows, to, g, 1.0)
            self._place(A, rows, frm, g, -1.0)
            l[rows] = (val * GON) - z

        if len(self.gnss_pt):
            start = self.slices["gnss"].start
            for k in range(3):
                rows = start + 3 * np.arange(len(self.gnss_pt)) + k
                cols = self.col[self.gnss_pt]
                ok = cols >= 0
                A[rows[ok], cols[ok] + k] = 1.0
                l[rows] = self.gnss_val[:, k] - X[self.gnss_pt, k]
        return A, l

    def residuals_in_units(self, l: np.ndarray) -> np.ndarray:
        """Convert a computed-minus-observed vector back to file units (m / gon)."""
        v = -l.copy()
        for key in ("dir", "zen"):
            v[self.slices[key]] /= GON
        return v


def _initial_orientations(design: _Design, X: np.ndarray) -> np.ndarray:
    frm, to, val, _ = design.dirs
    orient = np.zeros(len(design.group_keys))
    if not len(frm):
        return orient
    d = X[to] - X[frm]
    az = np.arctan2(d[:, 0], d[:, 1]) / GON
    diff = az - val
    for j in range(len(orient)):
        sel = diff[design.dir_group == j]
        ref = sel[0]
        orient[j] = (ref + np.mean(wrap_gon(sel - ref))) * GON
    return orient


def _check_datum(N: np.ndarray) -> None:
    d = np.sqrt(np.abs(np.diag(N)))
    if np.any(d == 0):
        raise DatumDefect("an unknown is not observed at all (singular normal matrix)")
    Ns = N / np.outer(d, d)
    ev = np.linalg.eigvalsh(Ns)
    if ev[0] <= 1e-12 * ev[-1]:
        raise DatumDefect(
            f"normal matrix is singular (rank defect {int(np.sum(ev <= 1e-12 * ev[-1]))}); "
            "add GNSS priors or hold at least three points fixed"
        )


def adjust_network(
    obs: ObservationSet,
    initial: Mapping[str, Sequence[float]],
    cfg: AdjustmentConfig | None = None,
    fixed: Iterable[str] = (),
) -> AdjustedNetwork:
    """Iterated linearized Gauss-Markov adjustment.

    Parameters
    ----------
    obs : ObservationSet
    initial : mapping id -> (e, n, h)
        Approximate coordinates; must cover every observed point.
    cfg : AdjustmentConfig, optional
    fixed : iterable of point ids
        Points held at their ``initial`` coordinates (datum by fixed points).

    Returns
    -------
    AdjustedNetwork
        Converged when the largest coordinate update drops below
        ``cfg.convergence_threshold``.
    """
    cfg = cfg or AdjustmentConfig()
    fixed = set(fixed)
    ids = obs.point_ids()
    for pid in ids:
        if pid not in initial:
            raise DataError(f"no initial coordinate for observed point {pid!r}")
    for pid in fixed:
        if pid not in initial:
            raise DatumDefect(f"fixed point {pid!r} has no coordinate")
    all_ids = ids + [p for p in fixed if p not in ids]
    design = _Design(obs, all_ids, fixed)
    if not design.gnss_pt.size and len(fixed & set(ids)) < 3 and design.n_coord:
        raise DatumDefect("datum needs GNSS priors or at least three fixed points")
    redundancy = design.n_obs - design.n_unknowns
    if cfg.check_redundancy and redundancy < 1:
        raise InsufficientRedundancy(
            f"{design.n_obs} observations for {design.n_unknowns} unknowns")

    X = np.array([initial[p] for p in all_ids], dtype=float)
    orient = _initial_orientations(design, X)
    W = design.weights
    coord_rows = np.array([design.index[p] for p in design.unknown_ids], dtype=int)

    iterations = 0
    last = math.inf
    for iterations in range(1, cfg.max_iterations + 1):
        A, l = design.linearize(X, orient)
        AtW = A.T * W
        N = AtW @ A
        if iterations == 1:
            _check_datum(N)
        try:
            cf = linalg.cho_factor(N)
        except linalg.LinAlgError as exc:
            raise DatumDefect(f"normal matrix not positive definite: {exc}") from None
        dx = linalg.cho_solve(cf, AtW @ l)
        if design.n_coord:
            X[coord_rows] += dx[: design.n_coord].reshape(-1, 3)
        orient += dx[design.n_coord:]
        last = float(np.max(np.abs(dx[: design.n_coord]))) if design.n_coord else 0.0
        if last < cfg.convergence_threshold:
            break
    else:
        raise NoConvergence(cfg.max_iterations, last)

    A, l = design.linearize(X, orient)
    AtW = A.T * W
    Qxx = linalg.cho_solve(linalg.cho_factor(AtW @ A), np.eye(design.n_unknowns))
    vtpv = float(np.sum(W * l**2))
    s02 = vtpv / redundancy if redundancy > 0 else float("nan")
    scale = s02 if cfg.use_variance_factor else 1.0

    sig = np.sqrt(np.clip(np.diag(Qxx) * scale, 0.0, None))
    points: dict[str, AdjustedPoint] = {}
    for pid in all_ids:
        i = design.index[pid]
        c = design.col[i]
        if c >= 0:
            se, sn, sh = sig[c:c + 3]
        else:
            se = sn = sh = 0.0
        points[pid] = AdjustedPoint(pid, *map(float, X[i]), float(se), float(sn), float(sh), c < 0)

    ori = {k: float(np.mod(orient[j] / GON, 400.0)) for j, k in enumerate(design.group_keys)}
    ori_sig = {k: float(sig[design.n_coord + j] / GON) for j, k in enumerate(design.group_keys)}
    v = design.residuals_in_units(l)
    with np.errstate(invalid="ignore", divide="ignore"):
        nres = (-l) * np.sqrt(W)
    return AdjustedNetwork(
        points=points,
        orientations=ori,
        orientation_sigmas=ori_sig,
        variance_factor=s02,
        iterations_used=iterations,
        redundancy=redundancy,
        unknown_ids=list(design.unknown_ids),
        cofactor=Qxx[: design.n_coord, : design.n_coord].copy(),
        residuals=v,
        normalized_residuals=nres,
        covariance_scale=scale,
    )


@dataclass
class PrecisionReport:
    """Adjusted coordinates compared with known truth; lengths in metres."""

    ids: list[str]
    errors: np.ndarray  # (n, 3) adjusted - truth
    sigmas: np.ndarray  # (n, 3) reported
    rmse: np.ndarray  # (3,)
    max_abs: np.ndarray  # (3,)
    mean_sigma: np.ndarray  # (3,)

    @property
    def sigma_ratio(self) -> np.ndarray:
        """RMSE over mean reported sigma per component (about 1 when consistent)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.rmse / self.mean_sigma


def assess_precision(
    net: AdjustedNetwork,
    truth: Mapping[str, Sequence[float]],
    ids: Iterable[str] | None = None,
) -> PrecisionReport:
    ids = list(ids) if ids is not None else [p for p, ap in net.points.items() if not ap.fixed]
    for pid in ids:
        if pid not in truth:
            raise MissingTruthPoint(pid)
    est = np.array([net.points[p].xyz for p in ids], dtype=float).reshape(-1, 3)
    ref = np.array([truth[p] for p in ids], dtype=float).reshape(-1, 3)
    sig = np.array([[net.points[p].sigma_e, net.points[p].sigma_n, net.points[p].sigma_h]
                    for p in ids], dtype=float).reshape(-1, 3)
    err = est - ref
    return PrecisionReport(
        ids=ids,
        errors=err,
        sigmas=sig,
        rmse=np.sqrt(np.mean(err**2, axis=0)) if len(ids) else np.zeros(3),
        max_abs=np.max(np.abs(err), axis=0) if len(ids) else np.zeros(3),
        mean_sigma=np.mean(sig, axis=0) if len(ids) else np.zeros(3),
    )


@dataclass
class MonteCarloSummary:
    ids: list[str]
    empirical_std: np.ndarray  # (n, 3)
    mean_sigma: np.ndarray  # (n, 3)
    runs: int

    @property
    def ratio(self) -> np.ndarray:
        return self.empirical_std / self.mean_sigma


def sigma_consistency(nets: Sequence[AdjustedNetwork], ids: Iterable[str] | None = None) -> MonteCarloSummary:
    """Empirical scatter of repeated adjustments against their mean reported sigmas."""
    if len(nets) < 2:
        raise ValueError("need at least two replications")
    ids = list(ids) if ids is not None else list(nets[0].unknown_ids)
    est = np.array([[net.points[p].xyz for p in ids] for net in nets])
    sig = np.array([[[net.points[p].sigma_e, net.points[p].sigma_n, net.points[p].sigma_h]
                     for p in ids] for net in nets])
    return MonteCarloSummary(ids, est.std(axis=0, ddof=1), sig.mean(axis=0), len(nets))


def write_adjusted_csv(net: AdjustedNetwork, stream: TextIO, datum_ids: Iterable[str] | None = None) -> None:
    """Adjusted coordinates and sigmas, metres with 6 decimals."""
    inner = net.inner_sigmas(datum_ids) if net.unknown_ids else {}
    stream.write("id,E,N,h,sigma_E,sigma_N,sigma_h,inner_sigma_E,inner_sigma_N,inner_sigma_h\n")
    for pid, p in net.points.items():
        ie, in_, ih = inner.get(pid, (0.0, 0.0, 0.0))
        vals = (p.e, p.n, p.h, p.sigma_e, p.sigma_n, p.sigma_h, ie, in_, ih)
        stream.write(pid + "," + ",".join(f"{v:.6f}" for v in vals) + "\n")
