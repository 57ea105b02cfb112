"""Parsing, validation, geofencing and half-hour bucketing of post streams.

Input is newline-delimited JSON, one object per line::

    {"id": "p1", "t": "2015-10-10T17:45:00-04:00", "lat": 40.7567,
     "lon": -73.9864, "text": "...", "user": "..."}

``text`` and ``user`` are optional. Malformed lines never abort a run; they
come back as :class:`RejectRecord` entries.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Iterable, Iterator, Sequence
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np

from .errors import ConfigError
from .kernels import haversine_to

DEFAULT_TIMEZONE = "America/New_York"
SLOTS_PER_DAY = 48


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"lat out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"lon out of range: {self.lon}")


@dataclass(frozen=True)
class Post:
    id: str
    t: datetime  # timezone-aware, original offset retained
    loc: GeoPoint
    text: str = ""
    author: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "t": format_instant(self.t),
            "lat": self.loc.lat,
            "lon": self.loc.lon,
            "text": self.text,
            "user": self.author,
        }


@dataclass(frozen=True, order=True)
class TimeSlotKey:
    weekday: int  # Monday = 0
    slot: int  # half-hour index of the local day

    def __post_init__(self):
        if not (0 <= self.weekday <= 6):
            raise ValueError(f"weekday out of range: {self.weekday}")
        if not (0 <= self.slot < SLOTS_PER_DAY):
            raise ValueError(f"slot out of range: {self.slot}")

    def label(self) -> str:
        h, m = divmod(self.slot * 30, 60)
        return f"{_WEEKDAYS[self.weekday]} {h:02d}:{m:02d}"


_WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


@dataclass(frozen=True)
class Geofence:
    center: GeoPoint
    radius: float  # metres

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"geofence radius must be finite and positive, got {self.radius}")


# 5 km around Times Square
TIMES_SQUARE = GeoPoint(40.756667, -73.986389)
DEFAULT_FENCE = Geofence(TIMES_SQUARE, 5000.0)


@dataclass(frozen=True)
class RejectRecord:
    line_no: int  # 1-based
    reason: str


@dataclass
class ParseResult:
    posts: list[Post] = field(default_factory=list)
    rejects: list[RejectRecord] = field(default_factory=list)

    def __iter__(self):
        # allows ``posts, rejects = parse_posts(...)``
        yield self.posts
        yield self.rejects


def get_zone(name: str) -> ZoneInfo:
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError, TypeError) as exc:
        raise ConfigError(f"unknown timezone {name!r}") from exc


def parse_instant(value: str) -> datetime:
    """Parse an RFC 3339 timestamp. A UTC offset is mandatory."""
    if not isinstance(value, str) or not value:
        raise ValueError("t must be a non-empty string")
    s = value.strip()
    if s[-1:] in ("Z", "z"):
        s = s[:-1] + "+00:00"
    t = datetime.fromisoformat(s)
    if t.tzinfo is None or t.utcoffset() is None:
        raise ValueError("t lacks a UTC offset")
    return t


def format_instant(t: datetime) -> str:
    return t.isoformat()


def _number(rec: dict, name: str) -> float:
    v = rec.get(name)
    if v is None:
        raise ValueError(f"{name} missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{name} not a number")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{name} not finite")
    return v


def parse_record(rec) -> Post:
    """Validate one decoded record. Raises ValueError with a short reason."""
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    pid = rec.get("id")
    if not isinstance(pid, str) or not pid:
        raise ValueError("id missing or empty")
    if "t" not in rec:
        raise ValueError("t missing")
    try:
        t = parse_instant(rec["t"])
    except ValueError as exc:
        raise ValueError(f"t unparseable: {exc}") from None
    lat = _number(rec, "lat")
    lon = _number(rec, "lon")
    if not -90.0 <= lat <= 90.0:
        raise ValueError("lat out of range")
    if not -180.0 <= lon <= 180.0:
        raise ValueError("lon out of range")
    text = rec.get("text", "")
    if text is None:
        text = ""
    if not isinstance(text, str):
        raise ValueError("text not a string")
    user = rec.get("user", "")
    if user is None:
        user = ""
    if not isinstance(user, str):
        raise ValueError("user not a string")
    return Post(pid, t, GeoPoint(lat, lon), text, user)


def parse_posts(stream: Iterable[str]) -> ParseResult:
    """Parse newline-delimited records.

    Every well-formed line yields exactly one Post; anything else yields a
    RejectRecord with its 1-based line number. Blank lines are rejected too,
    so ``len(posts) + len(rejects)`` always equals the line count. A record
    whose id was already accepted is rejected as ``duplicate``.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    result = ParseResult()
    seen: set[str] = set()
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            result.rejects.append(RejectRecord(line_no, "empty line"))
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            result.rejects.append(RejectRecord(line_no, "malformed json"))
            continue
        try:
            post = parse_record(rec)
        except ValueError as exc:
            result.rejects.append(RejectRecord(line_no, str(exc)))
            continue
        if post.id in seen:
            result.rejects.append(RejectRecord(line_no, "duplicate"))
            continue
        seen.add(post.id)
        result.posts.append(post)
    return result


def read_posts(path) -> ParseResult:
    """Parse a file; I/O errors propagate (they are fatal, unlike bad lines)."""
    with open(path, encoding="utf-8") as fh:
        return parse_posts(fh)


def write_posts(posts: Iterable[Post], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def post_coords(posts: Sequence[Post]) -> tuple[np.ndarray, np.ndarray]:
    lat = np.fromiter((p.loc.lat for p in posts), dtype=np.float64, count=len(posts))
    lon = np.fromiter((p.loc.lon for p in posts), dtype=np.float64, count=len(posts))
    return lat, lon


def geofence_filter(posts: Sequence[Post], fence: Geofence) -> list[Post]:
    """Posts within ``fence.radius`` metres (inclusive) of the centre, order kept."""
    if not posts:
        return []
    lat, lon = post_coords(posts)
    d = haversine_to(lat, lon, fence.center.lat, fence.center.lon)
    return [p for p, keep in zip(posts, d <= fence.radius) if keep]


def local_time(t: datetime, zone: ZoneInfo | str) -> datetime:
    if isinstance(zone, str):
        zone = get_zone(zone)
    return t.astimezone(zone)


def slot_key(t: datetime, zone: ZoneInfo | str = DEFAULT_TIMEZONE) -> TimeSlotKey:
    """(weekday, half-hour slot) of ``t`` in the civil time of ``zone``."""
    lt = local_time(t, zone)
    return TimeSlotKey(lt.weekday(), 2 * lt.hour + (1 if lt.minute >= 30 else 0))


def local_date(t: datetime, zone: ZoneInfo | str = DEFAULT_TIMEZONE) -> date:
    return local_time(t, zone).date()


def bucket_by_slot(posts: Iterable[Post], zone: ZoneInfo | str = DEFAULT_TIMEZONE
                   ) -> dict[tuple[date, TimeSlotKey], list[Post]]:
    """Group posts by (local date, slot key). Input order is kept within a bucket."""
    if isinstance(zone, str):
        zone = get_zone(zone)
    buckets: dict[tuple[date, TimeSlotKey], list[Post]] = defaultdict(list)
    for p in posts:
        lt = p.t.astimezone(zone)
        key = TimeSlotKey(lt.weekday(), 2 * lt.hour + (1 if lt.minute >= 30 else 0))
        buckets[(lt.date(), key)].append(p)
    return dict(buckets)


def iter_slot_keys() -> Iterator[TimeSlotKey]:
    for wd in range(7):
        for s in range(SLOTS_PER_DAY):
            yield TimeSlotKey(wd, s)
