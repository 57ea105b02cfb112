"""geopulse command line: synth, train, detect, threads, rank, bench, report.

Exit codes: 0 success, 1 runtime error, 2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from datetime import date, timedelta
from pathlib import Path

from . import __version__
from .detect import report_geojson
from .errors import ConfigError, GeopulseError, InsufficientData, PatternFormatError
from .ingest import Post, read_posts, write_posts
from .pattern import load_pattern, save_pattern
from .pipeline import RunConfig, detect_days, rank_posts, train_pattern
from .rank import write_relevance_csv
from .synth import (EventSpec, JAVITS_CENTER, event_from_dict, generate_day, load_config, nyc_preset,
                    plant_event, theme_corpus)
from .threads import discover_threads, write_threads_csv, write_threads_json

log = logging.getLogger("geopulse")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class InvalidInput(GeopulseError):
    pass


# ------------------------------------------------------------------ config

# flag name -> RunConfig field
_RUN_FLAGS = {
    "timezone": "timezone", "center": "center", "radius_m": "radius_m", "eps": "eps",
    "min_points": "min_points", "match_eps": "match_eps", "threshold": "threshold", "bands": "bands",
    "rows": "rows", "bucket_cap": "bucket_cap", "window_h": "window_h", "seed": "seed", "jobs": "jobs",
    "top_k": "top_k",
}


def _latlon(text: str) -> tuple[float, float]:
    try:
        lat, lon = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LAT,LON") from None
    return lat, lon


# parsed value of "none"/"inf"/"unbounded"; kept distinct from an absent flag
UNBOUNDED = "unbounded"


def _optional_int(text: str) -> int | str:
    return UNBOUNDED if text.lower() in ("none", "inf", "unbounded") else int(text)


def _optional_float(text: str) -> float | str:
    return UNBOUNDED if text.lower() in ("none", "inf", "unbounded") else float(text)


def build_config(args) -> RunConfig:
    """Defaults, then the --config file, then explicit flags (flags win).

    The seed falls back to GEOPULSE_SEED when neither file nor flag sets it.
    """
    doc: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    if "seed" not in doc and os.environ.get("GEOPULSE_SEED"):
        try:
            doc["seed"] = int(os.environ["GEOPULSE_SEED"])
        except ValueError:
            raise ConfigError("GEOPULSE_SEED must be an integer") from None
    for flag, name in _RUN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            doc[name] = None if v == UNBOUNDED else v
    return RunConfig.from_dict(doc).validate()


def echo_config(cfg: RunConfig, out_dir: Path, command: str, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, "config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    (out_dir / "run_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _read_inputs(paths) -> list[Post]:
    posts: list[Post] = []
    seen = set()
    n_rejects = 0
    for path in paths:
        res = read_posts(path)
        n_rejects += len(res.rejects)
        for r in res.rejects[:5]:
            log.warning("%s:%d rejected: %s", path, r.line_no, r.reason)
        for p in res.posts:
            if p.id in seen:
                n_rejects += 1
                continue
            seen.add(p.id)
            posts.append(p)
    if n_rejects:
        log.warning("%d line(s) rejected", n_rejects)
    return posts


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    cfg = load_config(args.city) if args.city else nyc_preset(0)
    seed = args.seed if args.seed is not None else int(os.environ.get("GEOPULSE_SEED", cfg.seed))
    try:
        start = date.fromisoformat(args.date)
    except ValueError:
        raise InvalidInput(f"bad --date {args.date!r}") from None
    days = [start + timedelta(weeks=i) for i in range(args.weeks)]
    events = []
    if args.events:
        with open(args.events, encoding="utf-8") as fh:
            events = [event_from_dict(e) for e in json.load(fh)]
    elif args.comiccon:
        events = [EventSpec("comiccon", [35], JAVITS_CENTER, rate=60.0, vocabulary="comiccon")]
    posts: list[Post] = []
    labels: dict[str, str] = {}
    for d in days:
        day_posts = generate_day(cfg, d, seed)
        if d == days[-1]:
            for ev in events:
                day_posts, labels = plant_event(day_posts, ev, cfg, d, seed, labels)
        posts += day_posts
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_posts(posts, out)
    if args.labels:
        Path(args.labels).write_text(json.dumps(labels, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(posts)} posts over {len(days)} day(s) to {out}"
          + (f", {len(labels)} labelled" if labels else ""))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    posts = _read_inputs(args.input)
    if not posts:
        raise InvalidInput("no valid posts in the input")
    result = train_pattern(posts, cfg)
    if not result.ok:
        for line in result.diagnostics:
            print(f"insufficient: {line}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pattern(result.pattern, out)
    echo_config(cfg, out.parent, "train", {"inputs": [str(p) for p in args.input], "pattern": str(out)})
    slots = result.pattern.slots
    n_refs = sum(len(s.references) for s in slots.values())
    n_low = sum(r.low_confidence for s in slots.values() for r in s.references)
    print(f"trained {len(slots)} slot(s), {n_refs} reference cluster(s), {n_low} low-confidence")
    for key in sorted(slots):
        s = slots[key]
        refs = ", ".join(f"#{r.id} n={r.size} support={r.support}" for r in s.references)
        print(f"  {key.label()}  eps={s.params.eps:.1f} m  min_points={s.params.min_points}  [{refs}]")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = build_config(args)
    pattern = load_pattern(args.pattern)
    posts = _read_inputs(args.input)
    det = detect_days(posts, pattern, cfg.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"slots": [], "uncovered": [{"date": d.isoformat(), "weekday": k.weekday, "slot": k.slot}
                                          for d, k in det.uncovered]}
    for run in det.runs:
        rep = run.report
        if rep is None:
            continue
        stem = f"report_{run.day.isoformat()}_{run.key.slot:02d}"
        (out / f"{stem}.json").write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
        (out / f"{stem}.geojson").write_text(json.dumps(report_geojson(rep, pattern.slots[run.key])) + "\n")
        summary["slots"].append({
            "date": run.day.isoformat(), "slot": run.key.slot, "n_posts": rep.n_posts,
            "anomalies": [{"cluster_id": v.cluster.id, "kind": v.kind.value, "class": v.outlier_class.value,
                           "size": v.cluster.size} for v in rep.anomalies],
            "absent": {str(k): v.value for k, v in sorted(rep.absent_refs.items())},
        })
    (out / "detect_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    echo_config(cfg, out, "detect", {"inputs": [str(p) for p in args.input], "pattern": str(args.pattern)})
    n_anom = sum(len(s["anomalies"]) for s in summary["slots"])
    print(f"evaluated {len(summary['slots'])} slot(s), {n_anom} anomalous cluster(s), "
          f"{len(det.uncovered)} uncovered slot(s)")
    for s in summary["slots"]:
        for a in s["anomalies"]:
            print(f"  {s['date']} slot {s['slot']:02d}: cluster {a['cluster_id']} {a['kind']} {a['class']} n={a['size']}")
    if det.uncovered:
        print(f"  uncovered: {len(det.uncovered)} slot(s) have no trained pattern")
    return EXIT_OK


def cmd_threads(args) -> int:
    cfg = build_config(args)
    posts = _read_inputs(args.input)
    td = discover_threads(posts, cfg.threshold, cfg.lsh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_threads_csv(td, out / "threads.csv")
    write_threads_json(td, out / "threads.json")
    echo_config(cfg, out, "threads", {"inputs": [str(p) for p in args.input]})
    sizes = sorted((t.size for t in td.threads), reverse=True)
    print(f"{td.processed} post(s) with text -> {len(td.threads)} thread(s); largest {sizes[:5]}")
    return EXIT_OK


def cmd_rank(args) -> int:
    cfg = build_config(args)
    pattern = load_pattern(args.pattern)
    posts = _read_inputs(args.posts)
    res = rank_posts(posts, pattern, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_relevance_csv(res.scores, out / "relevance.csv")
    res.top.write(out / "top_k.json", out / "top_k.md")
    write_threads_csv(res.threads, out / "threads.csv")
    echo_config(cfg, out, "rank", {"posts": [str(p) for p in args.posts], "pattern": str(args.pattern)})
    for i, r in enumerate(res.top.day, 1):
        peak = r.peak_key[1].label() if r.peak_key else "-"
        print(f"{i:3d}. thread {r.thread_id:<6d} relevance {r.relevance:8.1f}  size {r.size:<5d} {peak:10s} {r.text[:60]}")
    if res.detection.uncovered:
        print(f"  {len(res.detection.uncovered)} slot(s) not covered by the pattern")
    return EXIT_OK


def _throughput(posts, cfg: RunConfig) -> tuple[float, float]:
    t0 = time.perf_counter()
    discover_threads(posts, cfg.threshold, cfg.lsh)
    wall = time.perf_counter() - t0
    return len(posts) / wall, wall


def cmd_bench(args) -> int:
    cfg = build_config(args)
    if args.input:
        posts = _read_inputs(args.input)
    else:
        posts = theme_corpus(args.synthetic, cfg.seed)
    posts = [p for p in posts if p.text]
    if not posts:
        raise InvalidInput("benchmark corpus is empty")
    if len(posts) < 100_000:
        log.warning("corpus has %d posts; throughput figures are meant for >= 100k", len(posts))
    rates = []
    for i in range(args.repeat):
        rate, wall = _throughput(posts, cfg)
        rates.append(rate)
        print(f"run {i + 1}: {len(posts)} posts in {wall:.2f} s -> {rate:,.0f} posts/s")
    mean = statistics.fmean(rates)
    spread = (max(rates) - min(rates)) / mean if len(rates) > 1 else 0.0
    print(f"threads throughput: mean {mean:,.0f} posts/s, spread {spread:.1%} over {len(rates)} run(s)")
    if args.kernels:
        from .bench import kernel_timings
        for line in kernel_timings(seed=cfg.seed):
            print(line)
    return EXIT_OK


def cmd_report(args) -> int:
    lines = []
    if args.pattern:
        p = load_pattern(args.pattern)
        lines += [f"# Pattern {args.pattern}", "", f"timezone {p.timezone}, geofence "
                  f"({p.geofence.center.lat}, {p.geofence.center.lon}) r={p.geofence.radius:g} m", "",
                  "| slot | eps (m) | min_points | references | low-confidence |", "|---|---:|---:|---:|---:|"]
        for key in sorted(p.slots):
            s = p.slots[key]
            lines.append(f"| {key.label()} | {s.params.eps:.1f} | {s.params.min_points} | {len(s.references)} | "
                         f"{sum(r.low_confidence for r in s.references)} |")
    if args.detect_dir:
        path = Path(args.detect_dir) / "detect_summary.json"
        summary = json.loads(path.read_text())
        lines += ["", "# Anomalies", ""]
        for s in summary["slots"]:
            for a in s["anomalies"]:
                lines.append(f"- {s['date']} slot {s['slot']:02d}: cluster {a['cluster_id']} "
                             f"{a['kind']} / {a['class']} ({a['size']} posts)")
            for ref, cls in s["absent"].items():
                if cls != "normal":
                    lines.append(f"- {s['date']} slot {s['slot']:02d}: reference {ref} absent, {cls}")
        if summary["uncovered"]:
            lines.append(f"- {len(summary['uncovered'])} slot(s) uncovered by the pattern")
    if not lines:
        raise InvalidInput("report needs --pattern and/or --detect-dir")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_run_flags(p: argparse.ArgumentParser, threads=False, geo=False) -> None:
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    if geo:
        p.add_argument("--timezone")
        p.add_argument("--center", type=_latlon, metavar="LAT,LON")
        p.add_argument("--radius-m", dest="radius_m", type=float)
        p.add_argument("--eps", type=float, help="DBSCAN radius in metres (default: estimated per slot)")
        p.add_argument("--min-points", dest="min_points", type=int)
        p.add_argument("--match-eps", dest="match_eps", type=float)
    if threads:
        p.add_argument("--threshold", type=float)
        p.add_argument("--bands", type=int)
        p.add_argument("--rows", type=int)
        p.add_argument("--bucket-cap", dest="bucket_cap", type=_optional_int)
        p.add_argument("--window-h", dest="window_h", type=_optional_float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geopulse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city stream")
    p.add_argument("--city", help="city config JSON (default: built-in NYC preset)")
    p.add_argument("--date", required=True, help="first local date, YYYY-MM-DD")
    p.add_argument("--weeks", type=int, default=1, help="number of same-weekday dates to emit")
    p.add_argument("--events", help="JSON list of events planted on the last date")
    p.add_argument("--comiccon", action="store_true", help="plant the built-in Javits surge on the last date")
    p.add_argument("--labels", help="write post id -> event id labels here")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a city pattern")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True, help="pattern JSON path")
    _add_run_flags(p, geo=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect crowd anomalies per slot")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--pattern", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_run_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("threads", help="discover story threads")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_run_flags(p, threads=True)
    p.set_defaults(func=cmd_threads)

    p = sub.add_parser("rank", help="rank threads by geographic concentration")
    p.add_argument("--posts", "--input", dest="posts", nargs="+", required=True)
    p.add_argument("--pattern", required=True)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--out", required=True, help="output directory")
    _add_run_flags(p, threads=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bench", help="measure threads throughput")
    p.add_argument("--input", nargs="+", help="corpus (default: synthetic)")
    p.add_argument("--synthetic", type=int, default=100_000, help="synthetic corpus size")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--kernels", action="store_true", help="also time numba vs numpy kernels")
    _add_run_flags(p, threads=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarise a pattern and/or a detect output directory")
    p.add_argument("--pattern")
    p.add_argument("--detect-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, ConfigError, InsufficientData, PatternFormatError, FileNotFoundError,
            IsADirectoryError) as exc:
        print(f"geopulse: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"geopulse: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
