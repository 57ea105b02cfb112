import csv
import json
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geopulse.errors import ConfigError
from geopulse.ingest import TIMES_SQUARE, Post
from geopulse.synth import theme_corpus
from geopulse.threads import (DIMENSION, HashingTfidf, LshConfig, LshIndex, SparseVector, ThreadDiscovery, cosine,
                              discover_threads, normalize, threads_to_json, token_index, vectorize,
                              write_threads_csv, write_threads_json)

T0 = datetime(2016, 1, 23, 12, 0, tzinfo=timezone.utc)


def post(pid, text, minutes=0):
    return Post(pid, T0 + timedelta(minutes=minutes), TIMES_SQUARE, text)


# ---------------------------------------------------------------- text

def test_normalize_keeps_tags_and_drops_numbers():
    assert normalize("Comic-Con 2015! #NYCC @Javits") == ["comic", "con", "#nycc", "@javits"]


def test_normalize_folds_width_and_case():
    assert normalize("ＮＹＣ Snow") == ["nyc", "snow"]


def test_normalize_empty():
    assert normalize("") == [] and normalize("!!! 42 ...") == []


def test_token_index_is_stable_and_in_range():
    assert token_index("#nycc") == token_index("#nycc")
    assert 0 <= token_index("anything") < DIMENSION


def test_cosine_examples():
    assert cosine(vectorize(["a"]), vectorize(["a", "a", "b"])) == pytest.approx(2 / math.sqrt(5), abs=1e-12)
    assert cosine(vectorize(["a"]), vectorize(["a", "b"])) == pytest.approx(0.70711, abs=1e-5)
    assert cosine(vectorize(["a"]), vectorize(["b"])) == 0.0
    assert cosine(vectorize([]), vectorize(["a"])) == 0.0


def test_vectors_are_unit_length():
    m = HashingTfidf().fit([["a", "b"], ["a"], ["c", "a", "a"]])
    for toks in (["a"], ["a", "b", "b"], ["zzz", "c"]):
        assert m.transform(toks).norm == pytest.approx(1.0, abs=1e-12)


def test_idf_formula():
    m = HashingTfidf().fit([["a", "b"], ["a"], ["c"]])
    assert m.idf(token_index("a")) == pytest.approx(math.log(4 / 3) + 1)
    assert m.idf(token_index("zzz")) == pytest.approx(math.log(4) + 1)


def test_frozen_model_ignores_new_documents():
    m = HashingTfidf().fit([["a"], ["b"]])
    before = m.transform(["a", "b"])
    m.vectorize(["a", "a", "c"])
    assert m.n_docs == 2 and m.transform(["a", "b"]) == before


@given(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8),
       st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8))
def test_cosine_bounded_and_symmetric(a, b):
    va, vb = vectorize(a), vectorize(b)
    c = cosine(va, vb)
    assert 0.0 <= c <= 1.0 and c == pytest.approx(cosine(vb, va), abs=1e-15)


# ---------------------------------------------------------------- LSH index

def test_insert_then_query_contains_id():
    idx = LshIndex(seed=3)
    v = vectorize(["#nycc", "comic", "con"])
    idx.lsh_insert("p1", v, T0)
    assert "p1" in idx.lsh_candidates(v)
    assert "p1" in idx and len(idx) == 1


def test_orthogonal_vectors_rarely_share_all_bits():
    idx = LshIndex(bands=1, rows=30, seed=0)
    idx.lsh_insert("p1", SparseVector({1: 1.0}), T0)
    assert idx.lsh_candidates(SparseVector({2: 1.0})) == set()


def test_each_post_sits_in_one_bucket_per_band():
    idx = LshIndex(bands=5, rows=4, seed=1, bucket_cap=None)
    for i in range(40):
        idx.lsh_insert(f"p{i}", vectorize([f"w{i}", "x"]), T0)
    assert idx.stored() == 5 * 40


def test_signatures_depend_only_on_seed():
    v = vectorize(["a", "b", "c"])
    assert LshIndex(seed=4).signatures(v) == LshIndex(seed=4).signatures(v)
    assert LshIndex(seed=4).signatures(v) != LshIndex(seed=5).signatures(v)


def test_per_hyperplane_collision_probability():
    # one-row bands: every band is an independent hyperplane
    theta = math.pi / 4
    u = SparseVector({10: 1.0})
    v = SparseVector({10: math.cos(theta), 11: math.sin(theta)})
    idx = LshIndex(bands=4000, rows=1, seed=2)
    same = np.mean(np.array(idx.signatures(u)) == np.array(idx.signatures(v)))
    assert same == pytest.approx(1 - theta / math.pi, abs=0.03)


def test_bucket_cap_evicts_oldest_everywhere():
    idx = LshIndex(bands=3, rows=1, bucket_cap=2, window=None, seed=0)
    v = vectorize(["same"])
    for i in range(3):
        idx.lsh_insert(f"p{i}", v, T0 + timedelta(minutes=i))
    assert "p0" not in idx
    assert idx.lsh_candidates(v) == {"p1", "p2"}
    assert idx.stored() == 3 * 2


def test_window_eviction():
    idx = LshIndex(window=timedelta(hours=1), bucket_cap=None, seed=0)
    v = vectorize(["same"])
    idx.lsh_insert("old", v, T0)
    idx.lsh_insert("new", v, T0 + timedelta(minutes=90))
    assert "old" not in idx and idx.lsh_candidates(v) == {"new"}


def test_double_insert_rejected():
    idx = LshIndex()
    idx.lsh_insert("p", vectorize(["a"]), T0)
    with pytest.raises(ValueError):
        idx.lsh_insert("p", vectorize(["a"]), T0)


def test_bad_geometry_is_config_error():
    with pytest.raises(ConfigError):
        LshIndex(bands=0)
    with pytest.raises(ConfigError):
        LshIndex(rows=63)
    with pytest.raises(ConfigError):
        LshConfig(bucket_cap=0).build()


# ---------------------------------------------------------------- assignment

def test_exact_duplicate_joins_at_threshold_one():
    td = ThreadDiscovery(1.0)
    a = td.process(post("a", "#nycc comic con"))
    b = td.process(post("b", "#nycc comic con", 1))
    assert a == b and td.threads[a].members == ["a", "b"]


def test_unrelated_caption_starts_new_thread():
    td = discover_threads([post("a", "#nycc comic con"), post("b", "snow storm jonas", 1)])
    assert len(td.threads) == 2


def test_empty_vector_is_singleton():
    td = ThreadDiscovery()
    td.assign_thread("x", SparseVector(), T0)
    td.assign_thread("y", SparseVector(), T0)
    assert [t.members for t in td.threads] == [["x"], ["y"]]
    assert td.process(post("z", "")) is None


def test_threshold_bounds():
    for bad in (0.0, -0.1, 1.1):
        with pytest.raises(ConfigError):
            ThreadDiscovery(bad)


def test_centroid_matches_recomputation():
    posts = theme_corpus(300, seed=4, n_themes=5, background_share=0.0)
    td = discover_threads(posts, 0.5)
    model = HashingTfidf().fit([normalize(p.text) for p in posts])
    vec = {p.id: model.transform(normalize(p.text)) for p in posts}
    for th in td.threads:
        acc: dict[int, float] = {}
        for m in th.members:
            for i, w in vec[m].entries.items():
                acc[i] = acc.get(i, 0.0) + w
        n = math.sqrt(sum(w * w for w in acc.values()))
        got = th.centroid.entries
        assert set(got) == set(acc)
        assert max(abs(got[i] - acc[i] / n) for i in acc) < 1e-6


@pytest.mark.parametrize("exhaustive", [False, True])
def test_threads_partition_the_input(exhaustive):
    posts = theme_corpus(500, seed=1)
    td = discover_threads(posts, 0.65, exhaustive=exhaustive)
    members = [m for th in td.threads for m in th.members]
    assert sorted(members) == sorted(p.id for p in posts if p.text)
    assert all(td.thread_of[m] == th.id for th in td.threads for m in th.members)
    for th in td.threads:
        ts = [p.t for p in posts if p.id in set(th.members)]
        assert th.first_t == min(ts) and th.last_t == max(ts)


def test_batch_run_is_deterministic():
    posts = theme_corpus(300, seed=6)
    a = discover_threads(posts)
    b = discover_threads(list(reversed(posts)))
    assert [t.members for t in a.threads] == [t.members for t in b.threads]


def test_audit_recall_is_one_with_unbounded_fine_lsh():
    posts = theme_corpus(300, seed=9)
    td = discover_threads(posts, 0.65, LshConfig(bands=32, rows=2, bucket_cap=None, window_h=None), audit=True)
    assert td.recall_total > 0 and td.recall == 1.0


def test_outputs(tmp_path):
    td = discover_threads([post("a", "#nycc comic con"), post("b", "#nycc comic con", 5), post("c", "snow", 7)],
                          0.9)
    write_threads_csv(td, tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv", encoding="utf-8")))
    assert [r["size"] for r in rows] == ["2", "1"]
    assert rows[0]["representative_text"] == "#nycc comic con"
    assert rows[0]["first_t"] == "2016-01-23T12:00:00+00:00" and rows[0]["last_t"] == "2016-01-23T12:05:00+00:00"
    write_threads_json(td, tmp_path / "t.json")
    assert json.loads((tmp_path / "t.json").read_text()) == threads_to_json(td)
