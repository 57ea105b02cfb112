"""End-to-end wiring shared by the CLI and the acceptance tests:
train a city pattern, run detection over a day, discover and rank threads."""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .detect import OutlierReport, detect_slot
from .errors import ConfigError, InsufficientData
from .geo import DbscanParams, estimate_params_pooled
from .ingest import (DEFAULT_TIMEZONE, SLOTS_PER_DAY, TIMES_SQUARE, GeoPoint, Geofence, Post, TimeSlotKey,
                     bucket_by_slot, geofence_filter, get_zone, post_coords)
from .pattern import CityPattern, SlotPattern, train_slot
from .rank import (DEFAULT_WEIGHTS, RankedThread, ThreadSlotScore, TopReport, cluster_slot_relevance,
                   rank_slot, rank_threads, score_slot, verdict_label)
from .threads import DEFAULT_THRESHOLD, LshConfig, ThreadDiscovery, discover_threads


@dataclass
class RunConfig:
    timezone: str = DEFAULT_TIMEZONE
    center: tuple[float, float] = (TIMES_SQUARE.lat, TIMES_SQUARE.lon)
    radius_m: float = 5000.0
    eps: float | None = None  # None: estimated per slot
    min_points: int | None = None
    k: int = 4  # k-distance order when estimating
    match_eps: float | None = None  # None: same as eps
    threshold: float = DEFAULT_THRESHOLD
    bands: int = 8
    rows: int = 12
    bucket_cap: int | None = 64
    window_h: float | None = 24.0
    seed: int = 0
    jobs: int = 1
    top_k: int = 10

    def __post_init__(self):
        self.center = tuple(float(x) for x in self.center)

    def validate(self) -> "RunConfig":
        get_zone(self.timezone)
        try:
            self.geofence
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.eps is not None and not (math.isfinite(self.eps) and self.eps > 0):
            raise ConfigError("eps must be positive")
        if self.min_points is not None and self.min_points < 2:
            raise ConfigError("min_points must be >= 2")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.match_eps is not None and not (math.isfinite(self.match_eps) and self.match_eps > 0):
            raise ConfigError("match_eps must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must be in (0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.top_k < 0:
            raise ConfigError("top_k must be >= 0")
        self.lsh.build()  # geometry checks
        return self

    @property
    def geofence(self) -> Geofence:
        return Geofence(GeoPoint(*self.center), self.radius_m)

    @property
    def lsh(self) -> LshConfig:
        return LshConfig(self.bands, self.rows, self.bucket_cap, self.window_h, self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from None


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    pattern: CityPattern
    diagnostics: list[str] = field(default_factory=list)  # slots that could not be trained

    @property
    def ok(self) -> bool:
        return not self.diagnostics


def _slot_params(daily: Sequence, cfg: RunConfig, fallback) -> DbscanParams:
    if cfg.eps is not None:
        return DbscanParams(cfg.eps, cfg.min_points or cfg.k)
    k = cfg.min_points or cfg.k
    try:
        return estimate_params_pooled(daily, k=k)
    except InsufficientData:
        return fallback(k)


def _train_one(args):
    key, dates, daily, params, match_eps = args
    return train_slot(dict(zip(dates, daily)), params, match_eps, key)


def train_pattern(posts: Sequence[Post], cfg: RunConfig) -> TrainResult:
    """Train every (weekday, slot) that the input covers.

    Each slot's samples include every input date of its weekday, so a day
    without posts in that slot counts as a zero. Parameters come from the
    config when given, otherwise from the pooled per-day k-distance curves
    of that slot; a slot too sparse to estimate from borrows the estimate
    pooled over all slots.
    """
    zone = get_zone(cfg.timezone)
    fence = cfg.geofence
    inside = geofence_filter(list(posts), fence)
    buckets = bucket_by_slot(inside, zone)
    dates_by_weekday: dict[int, list[date]] = {}
    for d in sorted({d for d, _ in buckets}):
        dates_by_weekday.setdefault(d.weekday(), []).append(d)

    coords = {k: post_coords(v) for k, v in buckets.items()}
    empty = (np.empty(0), np.empty(0))
    global_cache: dict[int, DbscanParams] = {}

    def fallback(k: int) -> DbscanParams:
        if k not in global_cache:
            global_cache[k] = estimate_params_pooled(list(coords.values()), k=k)
        return global_cache[k]

    diagnostics = []
    jobs = []
    for wd, dates in sorted(dates_by_weekday.items()):
        for s in range(SLOTS_PER_DAY):
            key = TimeSlotKey(wd, s)
            populated = [d for d in dates if (d, key) in coords]
            if len(dates) < 2:
                if populated:
                    diagnostics.append(f"{key.label()}: {len(dates)} day(s) of data, need >= 2")
                continue
            daily = [coords.get((d, key), empty) for d in dates]
            params = _slot_params(daily, cfg, fallback)
            jobs.append((key, dates, daily, params, cfg.match_eps))

    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            slots = list(ex.map(_train_one, jobs, chunksize=max(1, len(jobs) // (4 * cfg.jobs))))
    else:
        slots = [_train_one(j) for j in jobs]

    pattern = CityPattern(cfg.timezone, fence, {sp.key: sp for sp in slots})
    if not inside:
        diagnostics.append("no posts inside the geofence")
    return TrainResult(pattern, diagnostics)


# ------------------------------------------------------------------ detection

@dataclass
class SlotRun:
    day: date
    key: TimeSlotKey
    posts: list[Post]
    report: OutlierReport | None  # None when the pattern lacks this slot


@dataclass
class DayDetection:
    runs: list[SlotRun]

    @property
    def reports(self) -> list[OutlierReport]:
        return [r.report for r in self.runs if r.report is not None]

    @property
    def uncovered(self) -> list[tuple[date, TimeSlotKey]]:
        return [(r.day, r.key) for r in self.runs if r.report is None]


def _detect_one(args):
    posts, slot, day = args
    return detect_slot(posts, slot, day)


def detect_days(posts: Sequence[Post], pattern: CityPattern, jobs: int = 1) -> DayDetection:
    """Detection over all 48 slots of every local date in the input.

    Slots without posts are evaluated too, so a crowd that vanished shows
    up as an absent reference. Timezone and geofence come from the pattern.
    """
    zone = get_zone(pattern.timezone)
    inside = geofence_filter(list(posts), pattern.geofence)
    buckets = bucket_by_slot(inside, zone)
    days = sorted({d for d, _ in buckets})
    runs = []
    todo = []
    for d in days:
        for s in range(SLOTS_PER_DAY):
            key = TimeSlotKey(d.weekday(), s)
            ps = buckets.get((d, key), [])
            runs.append(SlotRun(d, key, ps, None))
            sp = pattern.slots.get(key)
            if sp is not None:
                todo.append((len(runs) - 1, (ps, sp, d)))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_detect_one, [a for _, a in todo], chunksize=8))
    else:
        reports = [_detect_one(a) for _, a in todo]
    for (i, _), rep in zip(todo, reports):
        runs[i].report = rep
    return DayDetection(runs)


# ------------------------------------------------------------------ ranking

@dataclass
class RankResult:
    detection: DayDetection
    threads: ThreadDiscovery
    scores: list[ThreadSlotScore]
    ranking: list[RankedThread]  # every thread, best first
    top: TopReport


def rank_posts(posts: Sequence[Post], pattern: CityPattern, cfg: RunConfig,
               weights: Mapping[str, float] = DEFAULT_WEIGHTS, k: int | None = None) -> RankResult:
    """Detection, thread discovery and ranking over the input posts.

    Threads are discovered over the geofenced posts of the whole input; each
    (date, slot) then scores the threads present in it, and a thread's day
    relevance is its peak slot score.
    """
    k = cfg.top_k if k is None else k
    detection = detect_days(posts, pattern, cfg.jobs)
    inside = geofence_filter(list(posts), pattern.geofence)
    td = discover_threads(inside, cfg.threshold, cfg.lsh)

    scores: list[ThreadSlotScore] = []
    per_slot = {}
    clusters = []
    for run in detection.runs:
        if run.report is None:
            continue
        ss = score_slot([p.id for p in run.posts], run.report, td.thread_of, weights)
        scores.extend(ss)
        per_slot[(run.day, run.key)] = rank_slot([s for s in ss if s.relevance > 0], td.threads, k)
        for v in run.report.verdicts:
            clusters.append({
                "date": run.day.isoformat(), "slot": run.key.slot, "cluster_id": v.cluster.id,
                "size": v.cluster.size, "centroid": [v.cluster.centroid.lat, v.cluster.centroid.lon],
                "class": verdict_label(v),
                "relevance": cluster_slot_relevance(v, run.report, td.thread_of, weights),
            })
    clusters.sort(key=lambda c: (-c["relevance"], c["date"], c["slot"], c["cluster_id"]))
    ranking = rank_threads(scores, td.threads)
    top = TopReport(ranking[:k], per_slot, clusters[:k])
    return RankResult(detection, td, scores, ranking, top)


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
