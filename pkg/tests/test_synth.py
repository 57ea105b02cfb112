import json
import math
from datetime import date

import numpy as np
import pytest
from scipy import stats

import oracles
from geopulse.errors import ConfigError
from geopulse.ingest import DEFAULT_FENCE, GeoPoint, slot_key, write_posts
from geopulse.synth import (JAVITS_CENTER, CityConfig, EventSpec, Hotspot, Vocabulary, config_from_dict,
                            daily_profile, event_from_dict, generate_day, load_config, nyc_preset, plant_event,
                            theme_corpus)

DAY = date(2015, 10, 10)
NY = "America/New_York"


def one_spot(rate=20.0, sigma=60.0, bg=0.0):
    v = {"w": Vocabulary(["a", "b", "c", "d"])}
    return CityConfig(hotspots=[Hotspot("h", GeoPoint(40.758, -73.9855), sigma, rate, "w")],
                      background_rate=bg, background_vocabulary="w", vocabularies=v)


def in_slots(posts, slots):
    return [p for p in posts if slot_key(p.t, NY).slot in slots]


def test_zero_rates_give_an_empty_day():
    assert generate_day(one_spot(0.0), DAY) == []


def test_hotspot_scatter_stays_within_three_sigma():
    posts = generate_day(one_spot(40.0), DAY)
    d = np.array([oracles.hav(p.loc.lat, p.loc.lon, 40.758, -73.9855) for p in posts])
    assert len(posts) > 1500
    # 2-D Gaussian radius: P(r <= 3 sigma) = 1 - exp(-4.5)
    assert np.mean(d <= 180.0) >= 0.985


def test_daily_counts_are_poisson():
    posts = generate_day(one_spot(20.0), DAY)
    counts = np.bincount([slot_key(p.t, NY).slot for p in posts], minlength=48)
    assert abs(counts.mean() - 20.0) < 2.0
    assert 0.5 < counts.var() / counts.mean() < 1.8


def test_background_is_inside_the_fence():
    posts = generate_day(one_spot(0.0, bg=30.0), DAY)
    c = DEFAULT_FENCE.center
    assert posts and all(oracles.hav(p.loc.lat, p.loc.lon, c.lat, c.lon) <= DEFAULT_FENCE.radius for p in posts)


def test_same_seed_same_bytes(tmp_path):
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        write_posts(generate_day(nyc_preset(seed, 0.3), DAY), tmp_path / f"{name}.jsonl")
    a, b, c = ((tmp_path / f"{n}.jsonl").read_bytes() for n in "abc")
    assert a == b and a != c


def test_posts_are_sorted_and_local_day():
    posts = generate_day(nyc_preset(1, 0.3), DAY)
    assert [p.t for p in posts] == sorted(p.t for p in posts)
    assert {p.t.date() for p in posts} == {DAY}
    assert len({p.id for p in posts}) == len(posts)


def test_spring_forward_day_skips_missing_hour():
    posts = generate_day(one_spot(30.0), date(2016, 3, 13))
    assert not any(p.t.hour == 2 for p in posts)
    assert all(p.t.utcoffset() is not None for p in posts)


def test_multiplier_only_changes_the_target_slot():
    cfg = one_spot(20.0)
    base = generate_day(cfg, DAY)
    out, labels = plant_event(base, EventSpec("surge", [35], "h", multiplier=5.0), cfg, DAY)
    assert {p.id for p in base} <= {p.id for p in out}
    added = [p for p in out if p.id in labels]
    assert added and all(slot_key(p.t, NY).slot == 35 for p in added)
    n = len(added)
    # Poisson(80) added: a generous 5-sigma band
    assert abs(n - 80) < 5 * math.sqrt(80)


def test_thinning_to_a_fifth_is_binomial():
    cfg = one_spot(0.0, bg=60.0)
    slots = list(range(20, 44))
    base = generate_day(cfg, DAY)
    out, labels = plant_event(base, EventSpec("storm", slots, "city", multiplier=0.2), cfg, DAY)
    assert labels == {}
    before, after = len(in_slots(base, slots)), len(in_slots(out, slots))
    assert stats.binomtest(after, before, 0.2).pvalue > 1e-3
    assert len(in_slots(out, set(range(48)) - set(slots))) == len(in_slots(base, set(range(48)) - set(slots)))


def test_new_location_lies_outside_every_hotspot():
    cfg = nyc_preset(0, 0.2)
    far = GeoPoint(*oracles.offset_point(40.7580, -73.9855, 2000.0))
    out, labels = plant_event([], EventSpec("pop", [30], far, rate=40.0), cfg, DAY)
    assert len(out) == len(labels) > 0
    for p in out:
        for h in cfg.hotspots:
            assert oracles.hav(p.loc.lat, p.loc.lon, h.center.lat, h.center.lon) > 3 * h.sigma_m


def test_planted_posts_carry_the_theme():
    cfg = nyc_preset(0, 0.2)
    out, labels = plant_event([], EventSpec("cc", [35], JAVITS_CENTER, rate=60, vocabulary="comiccon"), cfg, DAY)
    assert all(p.text for p in out)
    assert sum("#nycc" in p.text for p in out) >= 0.8 * len(out)


def test_overlapping_thinning_is_refused():
    cfg = one_spot(20.0)
    base = generate_day(cfg, DAY)
    out, labels = plant_event(base, EventSpec("a", [35], "h", multiplier=3.0), cfg, DAY)
    with pytest.raises(ValueError):
        plant_event(out, EventSpec("b", [35], "h", multiplier=0.5), cfg, DAY, labels=labels)
    with pytest.raises(ValueError):
        plant_event(out, EventSpec("a", [36], "h", rate=1.0), cfg, DAY, labels=labels)


def test_event_validation():
    with pytest.raises(ConfigError):
        EventSpec("x", [48], "city")
    with pytest.raises(ConfigError):
        EventSpec("x", [1], JAVITS_CENTER, multiplier=2.0)
    with pytest.raises(ConfigError):
        EventSpec("x", [1], "city", multiplier=0.0)
    spec = event_from_dict({"id": "e", "slots": [1], "target": [40.7, -73.9], "rate": 3})
    assert spec.target == GeoPoint(40.7, -73.9)


def test_config_json(tmp_path):
    doc = {
        "geofence": {"center": [40.756667, -73.986389], "radius_m": 5000},
        "timezone": NY, "background_rate": 2, "background_vocabulary": "chatter",
        "vocabularies": {"chatter": {"pool": ["coffee", "work"], "length": [1, 2]}},
        "hotspots": [{"id": "ts", "center": [40.758, -73.9855], "sigma_m": 60, "rate": daily_profile(1, 5),
                      "vocabulary": "chatter"}],
        "seed": 7,
    }
    (tmp_path / "c.json").write_text(json.dumps(doc))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.seed == 7 and cfg.hotspot("ts").rate_at(34) == daily_profile(1, 5)[34]
    assert generate_day(cfg, DAY) == generate_day(config_from_dict(doc), DAY)


@pytest.mark.parametrize("doc", [
    {"hotspots": [{"id": "a", "center": [0, 0], "sigma_m": 60, "rate": 1, "vocabulary": "missing"}]},
    {"background_rate": [1, 2]},
    {"background_rate": -1},
    {"hotspots": [{"id": "a"}]},
])
def test_bad_config(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_bad_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_daily_profile_shape():
    p = daily_profile(2.0, 10.0)
    assert len(p) == 48 and p[10] == 2.0 and p[34] == 10.0
    assert min(p) == 2.0 and max(p) == 10.0


def test_theme_corpus():
    posts = theme_corpus(200, seed=3)
    assert len(posts) == 200 and len({p.id for p in posts}) == 200
    assert [p.t for p in posts] == sorted(p.t for p in posts)
    assert theme_corpus(200, seed=3) == posts
