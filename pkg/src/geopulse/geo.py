"""Haversine geodesics, grid-indexed DBSCAN and adaptive parameter estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import InsufficientData
from .ingest import GeoPoint

EARTH_RADIUS_M = kernels.EARTH_RADIUS_M
_DEG = math.pi / 180.0


def haversine_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1 = lat1 * _DEG
    p2 = lat2 * _DEG
    s1 = math.sin((p2 - p1) * 0.5)
    s2 = math.sin((lon2 - lon1) * _DEG * 0.5)
    a = s1 * s1 + math.cos(p1) * math.cos(p2) * s2 * s2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(a, 1.0)))


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres on a sphere of radius 6,371 km."""
    return haversine_deg(a.lat, a.lon, b.lat, b.lon)


@dataclass(frozen=True)
class DbscanParams:
    eps: float  # metres
    min_points: int

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be finite and positive, got {self.eps}")
        if int(self.min_points) != self.min_points or self.min_points < 2:
            raise ValueError(f"min_points must be an integer >= 2, got {self.min_points}")


@dataclass(frozen=True)
class Cluster:
    id: int
    members: tuple[int, ...]  # ascending point indices
    centroid: GeoPoint

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class Clustering:
    clusters: list[Cluster]
    noise: frozenset[int]
    labels: np.ndarray  # -1 for noise
    core: np.ndarray  # bool mask of core points

    @property
    def core_points(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.core).tolist())

    def partition(self) -> list[frozenset[int]]:
        return [frozenset(c.members) for c in self.clusters]


def as_latlon(points) -> tuple[np.ndarray, np.ndarray]:
    """Accept an (n, 2) array of (lat, lon) or a sequence of GeoPoint-likes."""
    if isinstance(points, tuple) and len(points) == 2 and isinstance(points[0], np.ndarray):
        return np.ascontiguousarray(points[0], dtype=np.float64), np.ascontiguousarray(points[1], dtype=np.float64)
    if isinstance(points, np.ndarray):
        arr = points.reshape(-1, 2) if points.size else np.empty((0, 2))
    else:
        seq = list(points)
        if seq and hasattr(seq[0], "lat"):
            arr = np.array([(p.lat, p.lon) for p in seq], dtype=np.float64)
        elif seq and hasattr(seq[0], "loc"):
            arr = np.array([(p.loc.lat, p.loc.lon) for p in seq], dtype=np.float64)
        else:
            arr = np.asarray(seq, dtype=np.float64).reshape(-1, 2)
    return np.ascontiguousarray(arr[:, 0], dtype=np.float64), np.ascontiguousarray(arr[:, 1], dtype=np.float64)


def centroid(members: Iterable[int], points) -> GeoPoint:
    """Arithmetic mean of lat and lon. Fine at city scale; no antimeridian care."""
    idx = np.fromiter(members, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("centroid of an empty cluster")
    lat, lon = as_latlon(points)
    return GeoPoint(float(lat[idx].mean()), float(lon[idx].mean()))


class GridIndex(kernels.Grid):
    """Uniform lat/lon grid whose cells are at least ``eps`` metres wide.

    The longitude edge is derived from the largest |lat| among the indexed
    points, so a 3x3 block around any query point is a superset of its
    eps-neighbourhood.
    """

    @classmethod
    def build(cls, points, eps: float) -> "GridIndex":
        lat, lon = as_latlon(points)
        return cls(lat, lon, eps)


def grid_neighbors(index: GridIndex, point, eps: float | None = None) -> np.ndarray:
    """Candidate indices for the eps-neighbourhood of ``point`` (a superset)."""
    if eps is not None and eps > index.eps:
        raise ValueError(f"grid was built for eps={index.eps}, cannot answer eps={eps}")
    lat, lon = (point.lat, point.lon) if hasattr(point, "lat") else point
    return index.candidates(float(lat), float(lon))


def dbscan(points, params: DbscanParams, backend: str | None = None) -> Clustering:
    """DBSCAN under the Haversine metric.

    A point is core when at least ``min_points`` points (itself included)
    lie within ``eps`` metres. Clusters are seeded in ascending index order
    and fully expanded before the next seed, so a border point reachable from
    several clusters belongs to the one with the lowest-indexed core seed.
    Because of that, a cluster can in rare layouts end up smaller than
    ``min_points`` when its border points were claimed earlier.
    """
    lat, lon = as_latlon(points)
    n = lat.shape[0]
    if n == 0:
        return Clustering([], frozenset(), np.empty(0, dtype=np.int64), np.zeros(0, dtype=bool))
    grid = kernels.Grid(lat, lon, params.eps)
    labels, core = kernels.dbscan_labels(grid, params.min_points, backend=backend)
    labels = np.asarray(labels, dtype=np.int64)
    core = np.asarray(core, dtype=bool)
    return _assemble(labels, core, lat, lon)


def _assemble(labels, core, lat, lon) -> Clustering:
    clusters = []
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_clusters + 1))
    for cid in range(n_clusters):
        members = order[bounds[cid]:bounds[cid + 1]]
        clusters.append(Cluster(
            cid,
            tuple(members.tolist()),
            GeoPoint(float(lat[members].mean()), float(lon[members].mean())),
        ))
    noise = frozenset(np.flatnonzero(labels < 0).tolist())
    return Clustering(clusters, noise, labels, core)


def knee_index(values: np.ndarray) -> int:
    """Index of the knee of an ascending curve.

    Both axes are scaled to [0, 1] and the point farthest from the chord
    joining the end points wins; ties go to the smallest index.
    """
    y = np.asarray(values, dtype=np.float64)
    n = y.shape[0]
    if n <= 2:
        return 0
    span = y[-1] - y[0]
    if span <= 0:
        return 0
    x = np.arange(n, dtype=np.float64) / (n - 1)
    dist = np.abs(x - (y - y[0]) / span)
    return int(np.argmax(dist))


def k_distances(points, k: int, backend: str | None = None) -> np.ndarray:
    """Distance from each point to its k-th closest point, itself counted first.

    With ``min_points = k`` a point is core exactly when its k-distance is
    at most eps.
    """
    lat, lon = as_latlon(points)
    if lat.shape[0] <= k:
        raise InsufficientData(f"need more than k={k} points, got {lat.shape[0]}")
    return np.asarray(kernels.kth_distances(lat, lon, k, backend=backend))


def eps_from_curve(kdist: np.ndarray) -> float:
    curve = np.sort(np.asarray(kdist, dtype=np.float64))
    eps = float(curve[knee_index(curve)])
    if eps <= 0.0:
        positive = curve[curve > 0]
        if positive.size == 0:
            raise InsufficientData("all points coincide; eps would be zero")
        eps = float(positive[0])
    return eps


def estimate_params(points, k: int = 4, backend: str | None = None) -> DbscanParams:
    """eps at the knee of the sorted k-distance curve, ``min_points = k``."""
    if k < 2:
        raise ValueError("k must be >= 2")
    return DbscanParams(eps_from_curve(k_distances(points, k, backend)), k)


def estimate_params_pooled(point_sets: Sequence, k: int = 4, backend: str | None = None) -> DbscanParams:
    """Like :func:`estimate_params` but pools per-set k-distance curves.

    Each set (typically one day of one slot) is measured on its own, so the
    result reflects single-day density even when many days are supplied.
    Sets with ``k`` points or fewer are skipped.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    curves = []
    for pts in point_sets:
        lat, lon = as_latlon(pts)
        if lat.shape[0] > k:
            curves.append(k_distances((lat, lon), k, backend))
    if not curves:
        raise InsufficientData(f"no point set has more than k={k} points")
    return DbscanParams(eps_from_curve(np.concatenate(curves)), k)
