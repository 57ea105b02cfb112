"""Training phase: per-(weekday, slot) reference crowds with boxplot fences,
plus the versioned JSON pattern file."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .detect import match_cluster
from .errors import InsufficientData, PatternFormatError
from .geo import DbscanParams, as_latlon, dbscan
from .ingest import GeoPoint, Geofence, TimeSlotKey

FORMAT_VERSION = 1
MILD = 1.5
EXTREME = 3.0


@dataclass(frozen=True)
class CountStats:
    q1: float
    q2: float
    q3: float
    iqr: float
    mild_low: float
    mild_high: float
    extreme_low: float
    extreme_high: float

    @classmethod
    def from_quartiles(cls, q1: float, q2: float, q3: float) -> "CountStats":
        iqr = q3 - q1
        return cls(q1, q2, q3, iqr,
                   q1 - MILD * iqr, q3 + MILD * iqr,
                   q1 - EXTREME * iqr, q3 + EXTREME * iqr)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in _STAT_FIELDS}


_STAT_FIELDS = ("q1", "q2", "q3", "iqr", "mild_low", "mild_high", "extreme_low", "extreme_high")


def _quantile(xs: Sequence[float], p: float) -> float:
    pos = (len(xs) - 1) * p
    lo = math.floor(pos)
    frac = pos - lo
    if frac == 0.0:
        return float(xs[lo])
    return float(xs[lo] + (xs[lo + 1] - xs[lo]) * frac)


def quartiles(counts: Sequence[float]) -> CountStats:
    """Quartiles by linear interpolation at positions (n-1)*p of the sorted sample."""
    xs = sorted(counts)
    if not xs:
        raise InsufficientData("quartiles of an empty sample")
    return CountStats.from_quartiles(_quantile(xs, 0.25), _quantile(xs, 0.5), _quantile(xs, 0.75))


@dataclass(eq=False)
class ReferenceCluster:
    id: int
    lat: np.ndarray
    lon: np.ndarray
    stats: CountStats
    support: int  # training days with at least one matched cluster
    counts: tuple[int, ...] = ()  # per training day, zero when nothing matched

    @property
    def size(self) -> int:
        return int(self.lat.shape[0])

    @property
    def low_confidence(self) -> bool:
        return self.support < 2

    @property
    def centroid(self) -> GeoPoint:
        return GeoPoint(float(self.lat.mean()), float(self.lon.mean()))


@dataclass(eq=False)
class SlotPattern:
    key: TimeSlotKey
    params: DbscanParams
    references: list[ReferenceCluster]
    match_eps: float
    days: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.match_eps) and self.match_eps > 0):
            raise ValueError("match_eps must be positive")

    def reference(self, ref_id: int) -> ReferenceCluster:
        for r in self.references:
            if r.id == ref_id:
                return r
        raise KeyError(ref_id)


@dataclass(eq=False)
class CityPattern:
    timezone: str
    geofence: Geofence
    slots: dict[TimeSlotKey, SlotPattern] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __eq__(self, other):
        if not isinstance(other, CityPattern):
            return NotImplemented
        return pattern_to_dict(self) == pattern_to_dict(other)


def train_slot(daily_points: Mapping[date, object], params: DbscanParams,
               match_eps: float | None = None, key: TimeSlotKey | None = None) -> SlotPattern:
    """Build the reference crowds of one (weekday, slot).

    Every day is clustered on its own, then all days together. The pooled
    run uses ``min_points * n_days`` so that it asks for the same per-day
    density as the daily runs. Each daily cluster is matched to its closest
    pooled cluster; a reference's count sample holds, per day, the summed
    size of the daily clusters matched to it (0 if none).
    """
    days = sorted(daily_points)
    if len(days) < 2:
        raise InsufficientData(f"need at least 2 training days, got {len(days)}")
    match_eps = params.eps if match_eps is None else float(match_eps)

    per_day = [as_latlon(daily_points[d]) for d in days]
    lat_all = np.concatenate([p[0] for p in per_day]) if per_day else np.empty(0)
    lon_all = np.concatenate([p[1] for p in per_day]) if per_day else np.empty(0)
    pooled = dbscan((lat_all, lon_all), DbscanParams(params.eps, params.min_points * len(days)))

    shells = []
    for c in pooled.clusters:
        idx = np.asarray(c.members, dtype=np.int64)
        shells.append(_Shell(c.id, lat_all[idx], lon_all[idx]))

    counts = np.zeros((len(shells), len(days)), dtype=np.int64)
    for j, (lat, lon) in enumerate(per_day):
        for c in dbscan((lat, lon), params).clusters:
            idx = np.asarray(c.members, dtype=np.int64)
            m = match_cluster((lat[idx], lon[idx]), shells, match_eps)
            if m is not None:
                counts[m[0], j] += c.size

    refs = []
    for s in shells:
        sample = tuple(int(x) for x in counts[s.id])
        refs.append(ReferenceCluster(s.id, s.lat, s.lon, quartiles(sample),
                                     int(np.count_nonzero(counts[s.id])), sample))
    return SlotPattern(key or TimeSlotKey(0, 0), params, refs, match_eps, len(days))


@dataclass
class _Shell:
    id: int
    lat: np.ndarray
    lon: np.ndarray


# ---------------------------------------------------------------- persistence

def pattern_to_dict(p: CityPattern) -> dict:
    return {
        "format_version": p.format_version,
        "timezone": p.timezone,
        "geofence": {
            "center": {"lat": float(p.geofence.center.lat), "lon": float(p.geofence.center.lon)},
            "radius_m": float(p.geofence.radius),
        },
        "slots": [_slot_to_dict(p.slots[k]) for k in sorted(p.slots)],
    }


def _slot_to_dict(s: SlotPattern) -> dict:
    return {
        "weekday": s.key.weekday,
        "slot": s.key.slot,
        "params": {"eps": float(s.params.eps), "min_points": int(s.params.min_points)},
        "match_eps": float(s.match_eps),
        "days": int(s.days),
        "references": [
            {
                "id": int(r.id),
                "support": int(r.support),
                "counts": [int(c) for c in r.counts],
                "stats": r.stats.to_dict(),
                "points": [[float(a), float(b)] for a, b in zip(r.lat.tolist(), r.lon.tolist())],
            }
            for r in s.references
        ],
    }


def dumps_pattern(p: CityPattern) -> str:
    return json.dumps(pattern_to_dict(p), sort_keys=True, separators=(",", ":")) + "\n"


def save_pattern(p: CityPattern, sink) -> None:
    """Write ``p`` to a path or a text file object."""
    text = dumps_pattern(p)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)


_schema = None


def pattern_schema() -> dict:
    global _schema
    if _schema is None:
        _schema = json.loads(resources.files("geopulse").joinpath("data/pattern.schema.json").read_text())
    return _schema


def _jpath(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def loads_pattern(text: str) -> CityPattern:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PatternFormatError(f"not valid JSON ({exc.msg} at char {exc.pos})") from None
    return pattern_from_dict(doc)


def load_pattern(source) -> CityPattern:
    """Read a pattern from a path or text file object; fails closed."""
    if hasattr(source, "read"):
        return loads_pattern(source.read())
    with open(source, encoding="utf-8") as fh:
        return loads_pattern(fh.read())


def pattern_from_dict(doc) -> CityPattern:
    if isinstance(doc, dict) and "format_version" in doc and doc["format_version"] != FORMAT_VERSION:
        raise PatternFormatError(
            f"unsupported format_version {doc['format_version']!r}, expected {FORMAT_VERSION}",
            "$.format_version")
    validator = jsonschema.Draft202012Validator(pattern_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise PatternFormatError(err.message, _jpath(err.absolute_path))

    try:
        fence = Geofence(GeoPoint(doc["geofence"]["center"]["lat"], doc["geofence"]["center"]["lon"]),
                         doc["geofence"]["radius_m"])
    except ValueError as exc:
        raise PatternFormatError(str(exc), "$.geofence") from None

    slots: dict[TimeSlotKey, SlotPattern] = {}
    for i, s in enumerate(doc["slots"]):
        path = f"$.slots[{i}]"
        key = TimeSlotKey(s["weekday"], s["slot"])
        if key in slots:
            raise PatternFormatError(f"duplicate slot {key.label()}", path)
        refs = []
        seen_ids = set()
        for j, r in enumerate(s["references"]):
            rpath = f"{path}.references[{j}]"
            if r["id"] in seen_ids:
                raise PatternFormatError("duplicate reference id", f"{rpath}.id")
            seen_ids.add(r["id"])
            stats = CountStats(**{k: float(r["stats"][k]) for k in _STAT_FIELDS})
            _check_stats(stats, f"{rpath}.stats")
            if len(r["counts"]) != s["days"]:
                raise PatternFormatError(f"expected {s['days']} counts, got {len(r['counts'])}", f"{rpath}.counts")
            pts = np.asarray(r["points"], dtype=np.float64).reshape(-1, 2)
            refs.append(ReferenceCluster(r["id"], np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                                         stats, r["support"], tuple(r["counts"])))
        params = DbscanParams(float(s["params"]["eps"]), int(s["params"]["min_points"]))
        slots[key] = SlotPattern(key, params, refs, float(s["match_eps"]), s["days"])
    return CityPattern(doc["timezone"], fence, slots, doc["format_version"])


def _check_stats(st: CountStats, path: str) -> None:
    expect = CountStats.from_quartiles(st.q1, st.q2, st.q3)
    if not (st.q1 <= st.q2 <= st.q3):
        raise PatternFormatError("quartiles out of order", path)
    for k in _STAT_FIELDS[3:]:
        if getattr(st, k) != getattr(expect, k):
            raise PatternFormatError(f"{k} inconsistent with quartiles", f"{path}.{k}")
