import json
import os
import subprocess
import sys

import pytest

import oracles
from geopulse.cli import build_config, build_parser, main
from geopulse.synth import JAVITS_CENTER

TRAIN_START = "2015-08-15"  # Saturdays through 2015-10-03
TEST_DAY = "2015-10-10"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    d = tmp_path_factory.mktemp("city")
    assert run("synth", "--date", TRAIN_START, "--weeks", 8, "--seed", 1, "--out", d / "train.jsonl") == 0
    assert run("synth", "--date", TEST_DAY, "--seed", 1, "--out", d / "base.jsonl") == 0
    assert run("synth", "--date", TEST_DAY, "--seed", 1, "--comiccon", "--labels", d / "labels.json",
               "--out", d / "event.jsonl") == 0
    assert run("train", "--input", d / "train.jsonl", "--out", d / "model" / "pattern.json") == 0
    return d


def test_train_covers_all_saturday_slots(city):
    doc = json.loads((city / "model" / "pattern.json").read_text())
    assert len(doc["slots"]) == 48
    assert {s["weekday"] for s in doc["slots"]} == {5}
    echo = json.loads((city / "model" / "run_config.json").read_text())
    assert echo["command"] == "train" and echo["config"]["seed"] == 0


def test_train_rerun_is_byte_identical(city, tmp_path):
    assert run("train", "--input", city / "train.jsonl", "--out", tmp_path / "p.json") == 0
    assert (tmp_path / "p.json").read_bytes() == (city / "model" / "pattern.json").read_bytes()


def test_train_parallel_matches_serial(city, tmp_path):
    assert run("train", "--input", city / "train.jsonl", "--jobs", 2, "--out", tmp_path / "p.json") == 0
    assert (tmp_path / "p.json").read_bytes() == (city / "model" / "pattern.json").read_bytes()


def test_train_empty_input_exits_2(tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    assert run("train", "--input", tmp_path / "empty.jsonl", "--out", tmp_path / "p.json") == 2
    assert "no valid posts" in capsys.readouterr().err
    assert not (tmp_path / "p.json").exists()


def test_train_single_day_exits_2_with_diagnostics(city, tmp_path, capsys):
    assert run("train", "--input", city / "base.jsonl", "--out", tmp_path / "p.json") == 2
    err = capsys.readouterr().err
    assert "insufficient" in err and "need >= 2" in err


def _javits_anomalies(out_dir, slot):
    summary = json.loads((out_dir / "detect_summary.json").read_text())
    rep = json.loads((out_dir / f"report_{TEST_DAY}_{slot:02d}.json").read_text())
    hits = []
    for v in rep["verdicts"]:
        lat, lon = v["centroid"]
        if oracles.hav(lat, lon, JAVITS_CENTER.lat, JAVITS_CENTER.lon) < 300 and \
                (v["kind"] == "unexpected_location" or v["class"] == "extreme_high"):
            hits.append(v)
    return summary, hits


def test_detect_baseline_has_no_javits_crowd(city, tmp_path):
    assert run("detect", "--input", city / "base.jsonl", "--pattern", city / "model" / "pattern.json",
               "--out", tmp_path) == 0
    summary, hits = _javits_anomalies(tmp_path, 35)
    assert len(summary["slots"]) == 48 and summary["uncovered"] == []
    assert hits == []
    assert (tmp_path / f"report_{TEST_DAY}_35.geojson").exists()


def test_detect_flags_the_planted_surge(city, tmp_path):
    assert run("detect", "--input", city / "event.jsonl", "--pattern", city / "model" / "pattern.json",
               "--out", tmp_path) == 0
    _, hits = _javits_anomalies(tmp_path, 35)
    labels = json.loads((city / "labels.json").read_text())
    assert len(hits) == 1
    assert len(set(hits[0]["members"]) & set(labels)) >= 0.9 * hits[0]["size"]


def test_detect_on_untrained_weekday_reports_uncovered(city, tmp_path):
    assert run("synth", "--date", "2015-10-11", "--seed", 1, "--out", tmp_path / "sun.jsonl") == 0
    assert run("detect", "--input", tmp_path / "sun.jsonl", "--pattern", city / "model" / "pattern.json",
               "--out", tmp_path / "det") == 0
    summary = json.loads((tmp_path / "det" / "detect_summary.json").read_text())
    assert summary["slots"] == [] and len(summary["uncovered"]) == 48


def test_detect_bad_pattern_exits_2(city, tmp_path):
    (tmp_path / "bad.json").write_text('{"format_version": 1')
    assert run("detect", "--input", city / "base.jsonl", "--pattern", tmp_path / "bad.json",
               "--out", tmp_path / "o") == 2
    assert run("detect", "--input", city / "base.jsonl", "--pattern", tmp_path / "missing.json",
               "--out", tmp_path / "o") == 2


def test_rank_puts_planted_thread_first(city, tmp_path):
    assert run("rank", "--posts", city / "event.jsonl", "--pattern", city / "model" / "pattern.json",
               "--top-k", 5, "--out", tmp_path) == 0
    top = json.loads((tmp_path / "top_k.json").read_text())
    assert len(top["top_threads"]) == 5
    assert "#nycc" in top["top_threads"][0]["representative_text"] or \
        "#comiccon" in top["top_threads"][0]["representative_text"]
    assert top["top_threads"][0]["peak_slot"] == 35
    for name in ("relevance.csv", "top_k.md", "threads.csv", "run_config.json"):
        assert (tmp_path / name).exists()
    assert json.loads((tmp_path / "run_config.json").read_text())["config"]["top_k"] == 5


def test_rank_k_zero_gives_empty_report(city, tmp_path):
    assert run("rank", "--posts", city / "event.jsonl", "--pattern", city / "model" / "pattern.json",
               "--top-k", 0, "--out", tmp_path) == 0
    top = json.loads((tmp_path / "top_k.json").read_text())
    assert top["top_threads"] == [] and top["clusters"] == []


def test_threads_command(city, tmp_path):
    assert run("threads", "--input", city / "event.jsonl", "--threshold", 0.7, "--bucket-cap", "none",
               "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "threads.json").read_text())
    assert doc["threshold"] == 0.7 and doc["lsh"]["bucket_cap"] is None
    assert (tmp_path / "threads.csv").read_text().startswith("thread_id,size,first_t,last_t,representative_text")


def test_threads_bad_threshold_exits_2(city, tmp_path):
    assert run("threads", "--input", city / "event.jsonl", "--threshold", 1.5, "--out", tmp_path) == 2


def test_report_command(city, tmp_path):
    assert run("detect", "--input", city / "event.jsonl", "--pattern", city / "model" / "pattern.json",
               "--out", tmp_path / "det") == 0
    assert run("report", "--pattern", city / "model" / "pattern.json", "--detect-dir", tmp_path / "det",
               "--out", tmp_path / "r.md") == 0
    text = (tmp_path / "r.md").read_text()
    assert "# Pattern" in text and "# Anomalies" in text and "unexpected_location" in text
    assert run("report") == 2


def test_bench_empty_corpus_exits_2(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert run("bench", "--input", tmp_path / "e.jsonl") == 2


def test_bench_small_synthetic_run(capsys):
    assert run("bench", "--synthetic", 300, "--repeat", 1) == 0
    assert "posts/s" in capsys.readouterr().out


def test_config_file_and_flag_priority(tmp_path, monkeypatch):
    (tmp_path / "c.json").write_text(json.dumps({"threshold": 0.7, "seed": 3, "bands": 4}))
    ap = build_parser()
    cfg = build_config(ap.parse_args(["threads", "--input", "x", "--out", "o", "--config", str(tmp_path / "c.json"),
                                      "--bands", "6"]))
    assert (cfg.threshold, cfg.seed, cfg.bands) == (0.7, 3, 6)
    monkeypatch.setenv("GEOPULSE_SEED", "11")
    cfg = build_config(ap.parse_args(["threads", "--input", "x", "--out", "o"]))
    assert cfg.seed == 11
    cfg = build_config(ap.parse_args(["threads", "--input", "x", "--out", "o", "--seed", "2"]))
    assert cfg.seed == 2


def test_unknown_config_key_exits_2(city, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"tresh": 0.7}))
    assert run("threads", "--input", city / "base.jsonl", "--config", tmp_path / "c.json", "--out", tmp_path) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "geopulse", "--version"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert out.returncode == 0 and "0.1.0" in out.stdout
