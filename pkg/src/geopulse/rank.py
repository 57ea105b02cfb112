"""Thread and cluster relevance per half-hour slot.

A thread scores in a slot by how many of its slot posts sit inside one live
crowd, weighted by how anomalous that crowd is::

    relevance = n_slot * concentration * weight(class)

where ``concentration`` is the largest share of the thread's slot posts
inside a single live cluster. Members outside every cluster weigh 0, so a
story spread thinly over the city scores nothing however large it is.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Iterable, Mapping, Sequence

from .detect import ClusterVerdict, OutlierReport, VerdictKind
from .ingest import TimeSlotKey, format_instant

DEFAULT_WEIGHTS = {
    "unexpected_location": 3.0,
    "extreme_high": 3.0,
    "mild_high": 2.0,
    "normal": 1.0,
    "mild_low": 1.0,
    "extreme_low": 1.0,
}


def verdict_weight(v: ClusterVerdict, weights: Mapping[str, float] = DEFAULT_WEIGHTS) -> float:
    if v.kind is VerdictKind.UNEXPECTED_LOCATION:
        return weights["unexpected_location"]
    return weights[v.outlier_class.value]


def verdict_label(v: ClusterVerdict) -> str:
    if v.kind is VerdictKind.UNEXPECTED_LOCATION:
        return "unexpected_location"
    return v.outlier_class.value


@dataclass
class ThreadSlotScore:
    thread_id: int
    date: date | None
    key: TimeSlotKey
    n_slot: int
    in_cluster_counts: dict[int, int]  # live cluster id -> member posts inside it
    concentration: float
    weight: float
    cluster_id: int | None  # cluster holding the concentration maximum
    label: str | None  # its verdict class, None when no member is clustered
    relevance: float


def thread_slot_relevance(thread_id: int, member_ids: Iterable[str], report: OutlierReport,
                          weights: Mapping[str, float] = DEFAULT_WEIGHTS,
                          cluster_of: Mapping[str, int] | None = None) -> ThreadSlotScore:
    """Score one thread in one slot from the posts it has there.

    When several clusters tie on member count the heavier verdict wins, then
    the lower cluster id.
    """
    members = list(member_ids)
    if cluster_of is None:
        cluster_of = post_cluster_map(report)
    by_id = {v.cluster.id: v for v in report.verdicts}
    counts: dict[int, int] = {}
    for pid in members:
        cid = cluster_of.get(pid)
        if cid is not None:
            counts[cid] = counts.get(cid, 0) + 1
    n = len(members)
    if not counts:
        return ThreadSlotScore(thread_id, report.date, report.key, n, {}, 0.0, 0.0, None, None, 0.0)
    best = min(counts, key=lambda c: (-counts[c], -verdict_weight(by_id[c], weights), c))
    conc = counts[best] / n
    w = verdict_weight(by_id[best], weights)
    return ThreadSlotScore(thread_id, report.date, report.key, n, counts, conc, w, best,
                           verdict_label(by_id[best]), n * conc * w)


def post_cluster_map(report: OutlierReport) -> dict[str, int]:
    return {pid: v.cluster.id for v in report.verdicts for pid in v.member_ids}


def score_slot(slot_post_ids: Sequence[str], report: OutlierReport, thread_of: Mapping[str, int],
               weights: Mapping[str, float] = DEFAULT_WEIGHTS) -> list[ThreadSlotScore]:
    """Scores of every thread with at least one post in the slot."""
    groups: dict[int, list[str]] = {}
    for pid in slot_post_ids:
        tid = thread_of.get(pid)
        if tid is not None:
            groups.setdefault(tid, []).append(pid)
    cluster_of = post_cluster_map(report)
    return [thread_slot_relevance(tid, groups[tid], report, weights, cluster_of) for tid in sorted(groups)]


def cluster_slot_relevance(verdict: ClusterVerdict, report: OutlierReport, thread_of: Mapping[str, int],
                           weights: Mapping[str, float] = DEFAULT_WEIGHTS) -> float:
    """Sum over threads of their slot relevance restricted to this cluster's members."""
    groups: dict[int, list[str]] = {}
    for pid in verdict.member_ids:
        tid = thread_of.get(pid)
        if tid is not None:
            groups.setdefault(tid, []).append(pid)
    cluster_of = {pid: verdict.cluster.id for pid in verdict.member_ids}
    return sum(thread_slot_relevance(tid, ids, report, weights, cluster_of).relevance
               for tid, ids in groups.items())


@dataclass
class RelevanceSeries:
    subject: str
    keys: list[tuple[date | None, TimeSlotKey]]
    values: list[float]

    @property
    def peak(self) -> float:
        return max(self.values, default=0.0)

    @property
    def total(self) -> float:
        return float(sum(self.values))


def cluster_relevance(verdict: ClusterVerdict, report: OutlierReport, thread_of: Mapping[str, int],
                      day_reports: Sequence[OutlierReport],
                      weights: Mapping[str, float] = DEFAULT_WEIGHTS) -> RelevanceSeries:
    """Series over the day's evaluated slots; a live cluster exists in one slot
    only, so every other slot carries 0."""
    keys = [(r.date, r.key) for r in day_reports]
    values = [cluster_slot_relevance(verdict, report, thread_of, weights)
              if (r.date, r.key) == (report.date, report.key) else 0.0
              for r in day_reports]
    return RelevanceSeries(f"{report.key.label()}#{verdict.cluster.id}", keys, values)


def thread_series(thread_id: int, scores: Iterable[ThreadSlotScore],
                  day_reports: Sequence[OutlierReport]) -> RelevanceSeries:
    by_key = {(s.date, s.key): s.relevance for s in scores if s.thread_id == thread_id}
    keys = [(r.date, r.key) for r in day_reports]
    return RelevanceSeries(f"thread {thread_id}", keys, [by_key.get(k, 0.0) for k in keys])


@dataclass
class RankedThread:
    thread_id: int
    relevance: float
    size: int
    first_t: datetime
    total: float = 0.0
    peak_key: tuple[date | None, TimeSlotKey] | None = None
    text: str = ""

    def sort_key(self):
        return (-self.relevance, -self.size, self.first_t, self.thread_id)

    def to_dict(self) -> dict:
        return {
            "thread_id": self.thread_id,
            "relevance": self.relevance,
            "total_relevance": self.total,
            "size": self.size,
            "first_t": format_instant(self.first_t),
            "peak_date": self.peak_key[0].isoformat() if self.peak_key and self.peak_key[0] else None,
            "peak_slot": self.peak_key[1].slot if self.peak_key else None,
            "representative_text": self.text,
        }


def rank_threads(scores: Iterable[ThreadSlotScore], threads: Sequence, k: int | None = None) -> list[RankedThread]:
    """Day ranking: threads ordered by their peak slot relevance.

    Ties fall back to larger size, earlier first post, lower id. Threads with
    no slot score still take part (relevance 0). ``threads`` is indexable by
    thread id and exposes ``size``, ``first_t`` and ``text``.
    """
    peak: dict[int, tuple[float, tuple]] = {}
    total: dict[int, float] = {}
    for s in scores:
        total[s.thread_id] = total.get(s.thread_id, 0.0) + s.relevance
        cur = peak.get(s.thread_id)
        if cur is None or s.relevance > cur[0]:
            peak[s.thread_id] = (s.relevance, (s.date, s.key))
    ranked = []
    for th in threads:
        rel, key = peak.get(th.id, (0.0, None))
        ranked.append(RankedThread(th.id, rel, th.size, th.first_t, total.get(th.id, 0.0), key, th.text))
    ranked.sort(key=RankedThread.sort_key)
    return ranked if k is None else ranked[:max(k, 0)]


def rank_slot(scores: Iterable[ThreadSlotScore], threads: Sequence, k: int | None = None) -> list[RankedThread]:
    ranked = [RankedThread(s.thread_id, s.relevance, threads[s.thread_id].size, threads[s.thread_id].first_t,
                           s.relevance, (s.date, s.key), threads[s.thread_id].text)
              for s in scores]
    ranked.sort(key=RankedThread.sort_key)
    return ranked if k is None else ranked[:max(k, 0)]


def write_relevance_csv(scores: Iterable[ThreadSlotScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["thread_id", "date", "slot", "relevance", "concentration", "class"])
        for s in scores:
            w.writerow([s.thread_id, s.date.isoformat() if s.date else "", s.key.slot,
                        repr(s.relevance), repr(s.concentration), s.label or "none"])


@dataclass
class TopReport:
    day: list[RankedThread]
    per_slot: dict[tuple[date | None, TimeSlotKey], list[RankedThread]] = field(default_factory=dict)
    clusters: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top_threads": [r.to_dict() for r in self.day],
            "per_slot": [
                {"date": d.isoformat() if d else None, "slot": key.slot, "label": key.label(),
                 "threads": [r.to_dict() for r in rows]}
                for (d, key), rows in sorted(self.per_slot.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
                if rows
            ],
            "clusters": self.clusters,
        }

    def to_markdown(self) -> str:
        lines = ["# Top threads", "", "| rank | thread | relevance | size | peak slot | story |",
                 "|---:|---:|---:|---:|---|---|"]
        for i, r in enumerate(self.day, 1):
            peak = r.peak_key[1].label() if r.peak_key else "-"
            text = r.text.replace("|", "\\|").replace("\n", " ")
            lines.append(f"| {i} | {r.thread_id} | {r.relevance:g} | {r.size} | {peak} | {text} |")
        for (d, key), rows in sorted(self.per_slot.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
            if not rows:
                continue
            lines += ["", f"## {d} {key.label()}", ""]
            for i, r in enumerate(rows, 1):
                lines.append(f"{i}. ({r.relevance:g}) {r.text}")
        return "\n".join(lines) + "\n"

    def write(self, json_path, md_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1)
        if md_path is not None:
            with open(md_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_markdown())
