"""Detection phase: cluster a live slot, match clusters to the trained
references and grade crowd sizes against boxplot fences."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import date
from typing import TYPE_CHECKING, Sequence

import numpy as np
import shapely.geometry

from . import kernels
from .errors import PatternMissing
from .geo import Cluster, as_latlon, dbscan
from .ingest import Post, TimeSlotKey, post_coords

if TYPE_CHECKING:
    from .pattern import CityPattern, CountStats, SlotPattern

# distances closer than this are treated as ties
TIE_TOLERANCE_M = 1e-9


class OutlierClass(str, enum.Enum):
    EXTREME_LOW = "extreme_low"
    MILD_LOW = "mild_low"
    NORMAL = "normal"
    MILD_HIGH = "mild_high"
    EXTREME_HIGH = "extreme_high"

    @property
    def rank(self) -> int:
        return _CLASS_ORDER.index(self)


_CLASS_ORDER = [OutlierClass.EXTREME_LOW, OutlierClass.MILD_LOW, OutlierClass.NORMAL,
                OutlierClass.MILD_HIGH, OutlierClass.EXTREME_HIGH]


class VerdictKind(str, enum.Enum):
    MATCHED = "matched"
    UNEXPECTED_LOCATION = "unexpected_location"


def mean_min_distance(cluster_points, ref_points, backend: str | None = None) -> float:
    """Mean over the cluster's points of the distance to the nearest reference point.

    Not symmetric: swapping the arguments generally changes the value.
    """
    clat, clon = as_latlon(cluster_points)
    plat, plon = as_latlon(ref_points)
    if clat.size == 0 or plat.size == 0:
        raise ValueError("mean_min_distance needs two non-empty point sets")
    return kernels.mean_min_distance(clat, clon, plat, plon, backend=backend)


def match_cluster(cluster_points, refs: Sequence, match_eps: float) -> tuple[int, float] | None:
    """Closest reference by mean-min distance, if within ``match_eps``.

    ``refs`` are objects with ``id``, ``lat`` and ``lon``. Distance ties go to
    the lowest reference id.
    """
    best = None
    for ref in sorted(refs, key=lambda r: r.id):
        d = mean_min_distance(cluster_points, (ref.lat, ref.lon))
        if best is None or d < best[1] - TIE_TOLERANCE_M:
            best = (ref.id, d)
    if best is None or best[1] > match_eps:
        return None
    return best


def classify(count: int, stats: "CountStats") -> OutlierClass:
    # fences are open intervals: a count equal to a bound is still inside
    if count > stats.extreme_high:
        return OutlierClass.EXTREME_HIGH
    if count > stats.mild_high:
        return OutlierClass.MILD_HIGH
    if count < stats.extreme_low:
        return OutlierClass.EXTREME_LOW
    if count < stats.mild_low:
        return OutlierClass.MILD_LOW
    return OutlierClass.NORMAL


@dataclass
class ClusterVerdict:
    cluster: Cluster
    kind: VerdictKind
    outlier_class: OutlierClass
    matched_ref: int | None = None
    dist: float | None = None  # mean-min distance to the matched reference
    member_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster.id,
            "size": self.cluster.size,
            "centroid": [self.cluster.centroid.lat, self.cluster.centroid.lon],
            "kind": self.kind.value,
            "class": self.outlier_class.value,
            "matched_ref": self.matched_ref,
            "dist_m": self.dist,
            "members": list(self.member_ids),
        }


@dataclass
class OutlierReport:
    key: TimeSlotKey
    date: date | None
    verdicts: list[ClusterVerdict]
    absent_refs: dict[int, OutlierClass]
    ref_counts: dict[int, int] = field(default_factory=dict)
    n_posts: int = 0
    # (lat, lon) arrays of the slot posts, kept for GeoJSON hulls
    coords: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def anomalies(self) -> list[ClusterVerdict]:
        return [v for v in self.verdicts
                if v.kind is VerdictKind.UNEXPECTED_LOCATION or v.outlier_class is not OutlierClass.NORMAL]

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat() if self.date else None,
            "weekday": self.key.weekday,
            "slot": self.key.slot,
            "n_posts": self.n_posts,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "ref_counts": {str(k): v for k, v in sorted(self.ref_counts.items())},
            "absent_refs": {str(k): v.value for k, v in sorted(self.absent_refs.items())},
        }


def detect_slot(posts: Sequence[Post], pattern: "SlotPattern", day: date | None = None) -> OutlierReport:
    """Cluster one slot of live posts with the trained parameters and grade it.

    Several live clusters may select the same reference; their sizes are
    summed before grading and every one of them carries the resulting class.
    A cluster matching no reference is an unexpected location and is graded
    extreme-high when it reaches ``min_points``.
    """
    if pattern is None:
        raise PatternMissing("no pattern for this slot")
    lat, lon = post_coords(posts)
    clustering = dbscan((lat, lon), pattern.params)
    ids = [p.id for p in posts]

    matches = {}
    ref_counts: dict[int, int] = {}
    for c in clustering.clusters:
        idx = np.asarray(c.members, dtype=np.int64)
        m = match_cluster((lat[idx], lon[idx]), pattern.references, pattern.match_eps)
        matches[c.id] = m
        if m is not None:
            ref_counts[m[0]] = ref_counts.get(m[0], 0) + c.size

    stats_by_ref = {r.id: r.stats for r in pattern.references}
    verdicts = []
    for c in clustering.clusters:
        m = matches[c.id]
        members = tuple(ids[i] for i in c.members)
        if m is None:
            cls = OutlierClass.EXTREME_HIGH if c.size >= pattern.params.min_points else OutlierClass.NORMAL
            verdicts.append(ClusterVerdict(c, VerdictKind.UNEXPECTED_LOCATION, cls, member_ids=members))
        else:
            cls = classify(ref_counts[m[0]], stats_by_ref[m[0]])
            verdicts.append(ClusterVerdict(c, VerdictKind.MATCHED, cls, m[0], m[1], members))

    absent = {r.id: classify(0, r.stats) for r in pattern.references if r.id not in ref_counts}
    return OutlierReport(pattern.key, day, verdicts, absent, ref_counts, len(posts), (lat, lon))


def detect_in_pattern(posts: Sequence[Post], city: "CityPattern", key: TimeSlotKey,
                      day: date | None = None) -> OutlierReport:
    slot = city.slots.get(key)
    if slot is None:
        raise PatternMissing(f"no pattern for {key.label()}")
    return detect_slot(posts, slot, day)


def _hull(lat: np.ndarray, lon: np.ndarray) -> dict:
    hull = shapely.geometry.MultiPoint(list(zip(lon.tolist(), lat.tolist()))).convex_hull
    return shapely.geometry.mapping(hull)


def report_geojson(report: OutlierReport, pattern: "SlotPattern | None" = None) -> dict:
    """FeatureCollection with one convex-hull feature per live cluster and,
    when ``pattern`` is given, one per absent reference."""
    features = []
    if report.coords is not None:
        lat, lon = report.coords
        for v in report.verdicts:
            idx = np.asarray(v.cluster.members, dtype=np.int64)
            props = v.to_dict()
            props.pop("members")
            features.append({"type": "Feature", "geometry": _hull(lat[idx], lon[idx]), "properties": props})
    if pattern is not None:
        for r in pattern.references:
            if r.id in report.absent_refs:
                features.append({
                    "type": "Feature",
                    "geometry": _hull(r.lat, r.lon),
                    "properties": {"kind": "absent_reference", "ref_id": r.id,
                                   "class": report.absent_refs[r.id].value, "support": r.support},
                })
    return {
        "type": "FeatureCollection",
        "properties": {"date": report.date.isoformat() if report.date else None,
                       "weekday": report.key.weekday, "slot": report.key.slot},
        "features": features,
    }


def write_report(report: OutlierReport, json_path, geojson_path=None, pattern=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    if geojson_path is not None:
        with open(geojson_path, "w", encoding="utf-8") as fh:
            json.dump(report_geojson(report, pattern), fh)
