"""Seeded synthetic city: hotspots with Gaussian scatter, uniform background,
themed captions, and planted events with ground-truth labels.

Config files are JSON::

    {
      "geofence": {"center": [40.756667, -73.986389], "radius_m": 5000},
      "timezone": "America/New_York",
      "background_rate": 20,
      "background_vocabulary": "chatter",
      "vocabularies": {"chatter": {"pool": ["coffee", "work"], "core": [], "length": [3, 6]}},
      "hotspots": [{"id": "ts", "center": [40.758, -73.9855], "sigma_m": 60,
                    "rate": 12, "vocabulary": "chatter"}],
      "seed": 0
    }

A ``rate`` is the mean number of posts per half-hour slot, either a single
number or a list of 48. ``core`` tokens are the theme markers: every caption
of a themed vocabulary carries most of them, which is what makes its posts
collapse into one thread.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .geo import EARTH_RADIUS_M
from .ingest import (DEFAULT_FENCE, DEFAULT_TIMEZONE, SLOTS_PER_DAY, GeoPoint, Geofence, Post, get_zone,
                     haversine_to, post_coords, slot_key)

_M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


@dataclass
class Vocabulary:
    pool: list[str]
    core: list[str] = field(default_factory=list)
    length: tuple[int, int] = (3, 6)  # pool tokens per caption, inclusive
    core_keep: float = 0.85  # chance that each core token appears

    def caption(self, rng: np.random.Generator) -> str:
        toks = [t for t in self.core if rng.random() < self.core_keep]
        if self.pool:
            n = int(rng.integers(self.length[0], self.length[1] + 1))
            n = min(n, len(self.pool))
            toks += [self.pool[i] for i in rng.choice(len(self.pool), size=n, replace=False)]
        if not toks and self.core:
            toks = [self.core[0]]
        return " ".join(toks)


@dataclass
class Hotspot:
    id: str
    center: GeoPoint
    sigma_m: float
    rate: float | list[float]
    vocabulary: str

    def __post_init__(self):
        if not (self.sigma_m > 0):
            raise ConfigError(f"hotspot {self.id}: sigma_m must be > 0")
        _check_rate(self.rate, f"hotspot {self.id}")

    def rate_at(self, slot: int) -> float:
        return _rate_at(self.rate, slot)


def _check_rate(rate, what: str) -> None:
    vals = [rate] if isinstance(rate, (int, float)) else list(rate)
    if not isinstance(rate, (int, float)) and len(vals) != SLOTS_PER_DAY:
        raise ConfigError(f"{what}: rate list must have {SLOTS_PER_DAY} entries")
    if any(not (math.isfinite(v) and v >= 0) for v in vals):
        raise ConfigError(f"{what}: rates must be finite and >= 0")


def _rate_at(rate, slot: int) -> float:
    return float(rate) if isinstance(rate, (int, float)) else float(rate[slot])


@dataclass
class CityConfig:
    geofence: Geofence = DEFAULT_FENCE
    timezone: str = DEFAULT_TIMEZONE
    hotspots: list[Hotspot] = field(default_factory=list)
    background_rate: float | list[float] = 0.0
    background_vocabulary: str | None = None
    vocabularies: dict[str, Vocabulary] = field(default_factory=dict)
    seed: int = 0
    empty_text_rate: float = 0.0  # share of posts generated without a caption
    n_users: int = 5000

    def __post_init__(self):
        _check_rate(self.background_rate, "background")
        names = [h.id for h in self.hotspots]
        if len(set(names)) != len(names):
            raise ConfigError("hotspot ids must be unique")
        for v in [h.vocabulary for h in self.hotspots] + [self.background_vocabulary]:
            if v is not None and v not in self.vocabularies:
                raise ConfigError(f"unknown vocabulary {v!r}")
        if not 0.0 <= self.empty_text_rate <= 1.0:
            raise ConfigError("empty_text_rate must be in [0, 1]")

    def hotspot(self, hid: str) -> Hotspot:
        for h in self.hotspots:
            if h.id == hid:
                return h
        raise ConfigError(f"unknown hotspot {hid!r}")

    def expected_rate(self, slot: int) -> float:
        return _rate_at(self.background_rate, slot) + sum(h.rate_at(slot) for h in self.hotspots)


def config_from_dict(doc: Mapping) -> CityConfig:
    try:
        fence = DEFAULT_FENCE
        if "geofence" in doc:
            g = doc["geofence"]
            fence = Geofence(GeoPoint(*g["center"]), float(g["radius_m"]))
        vocabs = {}
        for name, v in doc.get("vocabularies", {}).items():
            vocabs[name] = Vocabulary(list(v.get("pool", [])), list(v.get("core", [])),
                                      tuple(v.get("length", (3, 6))), float(v.get("core_keep", 0.85)))
        hotspots = [Hotspot(h["id"], GeoPoint(*h["center"]), float(h["sigma_m"]), h["rate"], h["vocabulary"])
                    for h in doc.get("hotspots", [])]
        return CityConfig(fence, doc.get("timezone", DEFAULT_TIMEZONE), hotspots,
                          doc.get("background_rate", 0.0), doc.get("background_vocabulary"),
                          vocabs, int(doc.get("seed", 0)), float(doc.get("empty_text_rate", 0.0)),
                          int(doc.get("n_users", 5000)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad city config: {exc!r}") from None


def load_config(path) -> CityConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"city config is not valid JSON: {exc}") from None
    return config_from_dict(doc)


# ------------------------------------------------------------------ preset

def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:03d}" for i in range(n)]


def daily_profile(low: float, high: float) -> list[float]:
    """48 slot rates, quiet before dawn, peaking in the evening."""
    out = []
    for s in range(SLOTS_PER_DAY):
        h = s / 2.0
        x = 0.5 - 0.5 * math.cos(2 * math.pi * (h - 5.0) / 24.0)  # 0 at 05:00, 1 at 17:00
        out.append(round(low + (high - low) * x, 3))
    return out


# themed captions are near-duplicates: the full tag set plus at most one word
THEMES = {
    "comiccon": Vocabulary(_words("cc", 6), ["#nycc", "#comiccon", "cosplay", "@newyorkcomiccon"], (0, 1), 0.9),
    "storm": Vocabulary(_words("sn", 6), ["#blizzard2016", "#jonas", "snow", "storm"], (0, 1), 0.9),
    "newyear": Vocabulary(_words("ny", 6), ["#happynewyear", "#2016", "ball", "countdown"], (0, 1), 0.9),
}


def nyc_preset(seed: int = 0, scale: float = 1.0) -> CityConfig:
    """Five Midtown/Downtown hotspots, each with its own place vocabulary,
    plus diffuse background chatter over the 5 km Times Square fence."""
    vocabs = {
        "chatter": Vocabulary(_words("w", 3000), [], (3, 6)),
        "timessquare": Vocabulary(_words("ts", 10), ["#timessquare", "#nyc", "broadway"], (0, 1), 0.9),
        "grandcentral": Vocabulary(_words("gc", 60), ["#grandcentral"], (2, 5), 0.6),
        "msg": Vocabulary(_words("mg", 60), ["#msg"], (2, 5), 0.6),
        "unionsquare": Vocabulary(_words("us", 60), ["#unionsquare"], (2, 5), 0.6),
        "columbuscircle": Vocabulary(_words("co", 60), ["#columbuscircle"], (2, 5), 0.6),
    }
    vocabs.update(THEMES)
    spots = [
        ("timessquare", (40.7580, -73.9855), 16.0),
        ("grandcentral", (40.7527, -73.9772), 10.0),
        ("msg", (40.7505, -73.9934), 8.0),
        ("unionsquare", (40.7359, -73.9911), 8.0),
        ("columbuscircle", (40.7681, -73.9819), 6.0),
    ]
    hotspots = [Hotspot(name, GeoPoint(*c), 60.0, daily_profile(0.15 * r * scale, r * scale), name)
                for name, c, r in spots]
    return CityConfig(DEFAULT_FENCE, DEFAULT_TIMEZONE, hotspots,
                      daily_profile(3.0 * scale, 20.0 * scale), "chatter", vocabs, seed)


JAVITS_CENTER = GeoPoint(40.7577, -74.0023)


# ------------------------------------------------------------------ sampling

def _offset(center: GeoPoint, north_m: np.ndarray, east_m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lat = center.lat + north_m / _M_PER_DEG
    lon = center.lon + east_m / (_M_PER_DEG * math.cos(math.radians(center.lat)))
    return lat, lon


def _gaussian_points(rng, center: GeoPoint, sigma: float, n: int, fence: Geofence):
    """``n`` Gaussian points around ``center``; draws outside the fence are redrawn."""
    lat_out, lon_out = np.empty(0), np.empty(0)
    for _ in range(100):
        need = n - lat_out.size
        if need <= 0:
            break
        lat, lon = _offset(center, rng.normal(0.0, sigma, need), rng.normal(0.0, sigma, need))
        inside = haversine_to(lat, lon, fence.center.lat, fence.center.lon) <= fence.radius
        lat_out = np.concatenate([lat_out, lat[inside]])
        lon_out = np.concatenate([lon_out, lon[inside]])
    if lat_out.size < n:
        raise ConfigError(f"cannot place points around {center} inside the geofence")
    return lat_out[:n], lon_out[:n]


def _uniform_points(rng, fence: Geofence, n: int):
    """Uniform over the fence disc, by rejection from the bounding square."""
    lat_out, lon_out = np.empty(0), np.empty(0)
    r = fence.radius * 1.001
    while lat_out.size < n:
        m = 2 * (n - lat_out.size) + 8
        lat, lon = _offset(fence.center, rng.uniform(-r, r, m), rng.uniform(-r, r, m))
        inside = haversine_to(lat, lon, fence.center.lat, fence.center.lon) <= fence.radius
        lat_out = np.concatenate([lat_out, lat[inside]])
        lon_out = np.concatenate([lon_out, lon[inside]])
    return lat_out[:n], lon_out[:n]


def _slot_times(rng, day: date, slot: int, n: int, zone) -> list[datetime]:
    """Whole-second instants uniform in the slot's local half hour.

    Local times that do not exist (spring-forward gap) are dropped, so the
    result can be shorter than ``n``.
    """
    start = datetime.combine(day, time(0)) + timedelta(minutes=30 * slot)
    secs = np.sort(rng.integers(0, 1800, n))
    out = []
    for s in secs.tolist():
        naive = start + timedelta(seconds=s)
        t = naive.replace(tzinfo=zone)
        back = t.astimezone(timezone.utc).astimezone(zone)
        if back.replace(tzinfo=None) != naive:
            continue
        out.append(t)
    return out


@dataclass
class _Draft:
    t: datetime
    lat: float
    lon: float
    text: str
    user: str


def _drafts(rng, cfg: CityConfig, day: date, slot: int, n: int, sampler, vocab: Vocabulary | None,
            zone) -> list[_Draft]:
    if n <= 0:
        return []
    times = _slot_times(rng, day, slot, n, zone)
    lat, lon = sampler(len(times))
    out = []
    for i, t in enumerate(times):
        if vocab is None or rng.random() < cfg.empty_text_rate:
            text = ""
        else:
            text = vocab.caption(rng)
        out.append(_Draft(t, float(lat[i]), float(lon[i]), text, f"u{int(rng.integers(cfg.n_users))}"))
    return out


def _finish(drafts: list[_Draft], prefix: str) -> list[Post]:
    drafts.sort(key=lambda d: d.t)
    return [Post(f"{prefix}-{i:06d}", d.t, GeoPoint(d.lat, d.lon), d.text, d.user) for i, d in enumerate(drafts)]


def generate_day(config: CityConfig, day: date, seed: int | None = None) -> list[Post]:
    """One local day of posts, sorted by time, ids ``YYYYMMDD-nnnnnn``.

    The stream depends only on (config, day, seed); ``seed`` defaults to the
    config's.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, day.toordinal()])
    zone = get_zone(config.timezone)
    fence = config.geofence
    bg_vocab = config.vocabularies.get(config.background_vocabulary) if config.background_vocabulary else None
    drafts: list[_Draft] = []
    for slot in range(SLOTS_PER_DAY):
        for h in config.hotspots:
            n = int(rng.poisson(h.rate_at(slot)))
            drafts += _drafts(rng, config, day, slot, n,
                              lambda m, h=h: _gaussian_points(rng, h.center, h.sigma_m, m, fence),
                              config.vocabularies[h.vocabulary], zone)
        n = int(rng.poisson(_rate_at(config.background_rate, slot)))
        drafts += _drafts(rng, config, day, slot, n, lambda m: _uniform_points(rng, fence, m), bg_vocab, zone)
    return _finish(drafts, day.strftime("%Y%m%d"))


# ------------------------------------------------------------------ events

@dataclass
class EventSpec:
    """A planted anomaly on one day.

    ``target`` is a hotspot id, ``"city"`` for the whole fence, or a GeoPoint
    for a brand-new location. ``multiplier`` scales the existing activity of
    the target (below 1 thins it, above 1 adds posts in proportion to the
    baseline rate); ``rate`` adds that many posts per slot on top. Added
    posts take captions from ``vocabulary``.
    """

    id: str
    slots: Sequence[int]
    target: str | GeoPoint
    multiplier: float = 1.0
    rate: float = 0.0
    sigma_m: float | None = None
    vocabulary: str | None = None

    def __post_init__(self):
        if not (self.multiplier > 0 and math.isfinite(self.multiplier)):
            raise ConfigError("event multiplier must be > 0")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ConfigError("event rate must be >= 0")
        if any(not 0 <= s < SLOTS_PER_DAY for s in self.slots):
            raise ConfigError("event slots must lie in [0, 47]")
        if isinstance(self.target, GeoPoint) and self.multiplier != 1.0:
            raise ConfigError("a new location has no baseline to multiply; use rate")
        if self.sigma_m is not None and not self.sigma_m > 0:
            raise ConfigError("event sigma_m must be > 0")


def event_from_dict(doc: Mapping) -> EventSpec:
    target = doc["target"]
    if isinstance(target, (list, tuple)):
        target = GeoPoint(*target)
    return EventSpec(doc["id"], list(doc["slots"]), target, float(doc.get("multiplier", 1.0)),
                     float(doc.get("rate", 0.0)), doc.get("sigma_m"), doc.get("vocabulary"))


def plant_event(posts: Sequence[Post], spec: EventSpec, config: CityConfig, day: date,
                seed: int | None = None, labels: Mapping[str, str] | None = None
                ) -> tuple[list[Post], dict[str, str]]:
    """Apply ``spec`` to one generated day.

    Returns the new post list (time-sorted) and the label map post id ->
    event id, extended with the posts this event added. Thinning never
    touches posts labelled by an earlier event; such an overlap is refused.
    """
    labels = dict(labels or {})
    if spec.id in labels.values():
        raise ValueError(f"event {spec.id!r} already planted")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, day.toordinal(), _stable_id(spec.id)])
    zone = get_zone(config.timezone)
    fence = config.geofence
    slots = set(spec.slots)
    vocab = None
    if spec.vocabulary is not None:
        if spec.vocabulary not in config.vocabularies:
            raise ConfigError(f"unknown vocabulary {spec.vocabulary!r}")
        vocab = config.vocabularies[spec.vocabulary]

    hotspot = None
    if isinstance(spec.target, GeoPoint):
        center, sigma = spec.target, spec.sigma_m or 60.0
    elif spec.target == "city":
        center, sigma = None, None
    else:
        hotspot = config.hotspot(spec.target)
        center, sigma = hotspot.center, spec.sigma_m or hotspot.sigma_m
        if vocab is None:
            vocab = config.vocabularies[hotspot.vocabulary]
    if vocab is None and config.background_vocabulary:
        vocab = config.vocabularies[config.background_vocabulary]

    kept = list(posts)
    if spec.multiplier < 1.0:
        kept = _thin(kept, spec, hotspot, zone, labels, rng)

    drafts: list[_Draft] = []
    for slot in sorted(slots):
        if spec.multiplier > 1.0:
            base = hotspot.rate_at(slot) if hotspot is not None else config.expected_rate(slot)
            lam = (spec.multiplier - 1.0) * base + spec.rate
        else:
            lam = spec.rate
        n = int(rng.poisson(lam))
        if center is None:
            sampler = lambda m: _uniform_points(rng, fence, m)  # noqa: E731
        else:
            sampler = lambda m: _gaussian_points(rng, center, sigma, m, fence)  # noqa: E731
        drafts += _drafts(rng, config, day, slot, n, sampler, vocab, zone)

    added = _finish(drafts, f"{day:%Y%m%d}-{spec.id}")
    for p in added:
        labels[p.id] = spec.id
    out = sorted(kept + added, key=lambda p: (p.t, p.id))
    return out, labels


def _thin(posts, spec: EventSpec, hotspot: Hotspot | None, zone, labels, rng) -> list[Post]:
    """Keep each affected post with probability ``multiplier``."""
    slots = set(spec.slots)
    affected = np.array([slot_key(p.t, zone).slot in slots for p in posts], dtype=bool)
    if hotspot is not None and posts:
        lat, lon = post_coords(posts)
        d = haversine_to(lat, lon, hotspot.center.lat, hotspot.center.lon)
        affected &= d <= 3.0 * hotspot.sigma_m
    keep = np.ones(len(posts), dtype=bool)
    draws = rng.random(len(posts))
    for i in np.flatnonzero(affected):
        if posts[i].id in labels:
            raise ValueError(f"event {spec.id!r} would thin post {posts[i].id!r} planted by {labels[posts[i].id]!r}")
        keep[i] = draws[i] < spec.multiplier
    return [p for p, k in zip(posts, keep) if k]


def _stable_id(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def theme_corpus(n_posts: int, seed: int, n_themes: int = 40, background_share: float = 0.3,
                 start: datetime | None = None, span_h: float = 12.0) -> list[Post]:
    """Text-heavy corpus for thread experiments: ``n_themes`` themes, each a
    few core tags over a private word pool, mixed with background chatter.
    Locations are uniform over the default fence."""
    rng = np.random.default_rng([seed, 7919])
    start = start or datetime(2016, 1, 23, 12, 0, tzinfo=timezone.utc)
    themes = []
    for j in range(n_themes):
        core = [f"#theme{j:03d}", f"tag{j:03d}a", f"tag{j:03d}b"]
        themes.append(Vocabulary([f"t{j:03d}w{i:02d}" for i in range(25)], core, (1, 4), 0.8))
    chatter = Vocabulary(_words("w", 5000), [], (3, 7))
    weights = rng.dirichlet(np.full(n_themes, 0.7))
    lat, lon = _uniform_points(rng, DEFAULT_FENCE, n_posts)
    offs = np.sort(rng.uniform(0.0, span_h * 3600.0, n_posts))
    posts = []
    for i in range(n_posts):
        if rng.random() < background_share:
            text = chatter.caption(rng)
        else:
            text = themes[int(rng.choice(n_themes, p=weights))].caption(rng)
        t = start + timedelta(seconds=int(offs[i]))
        posts.append(Post(f"c{seed}-{i:06d}", t, GeoPoint(float(lat[i]), float(lon[i])), text,
                          f"u{int(rng.integers(5000))}"))
    return posts
