"""Streaming story threads over post captions.

Captions become hashed TF-IDF vectors; random-hyperplane LSH buckets keep
the comparison set small; a post joins the most similar thread centroid
among its bucket-mates' threads when the cosine reaches the threshold,
otherwise it starts a new thread.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import unicodedata
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .ingest import Post, format_instant

DIMENSION = 1 << 18
DEFAULT_THRESHOLD = 0.65
# slack on the threshold comparison so exact duplicates pass at threshold 1.0
SIM_SLACK = 1e-9

_TOKEN_RE = re.compile(r"[#@]?\w+")


def normalize(text: str) -> list[str]:
    """Lowercased NFKC tokens; ``#tag`` and ``@user`` stay whole.

    Bare numbers and punctuation are dropped, no stemming.
    """
    if not text:
        return []
    folded = unicodedata.normalize("NFKC", text).lower()
    out = []
    for tok in _TOKEN_RE.findall(folded):
        body = tok.lstrip("#@")
        if not any(ch.isalnum() for ch in body):
            continue
        if tok == body and body.isdigit():
            continue
        out.append(tok)
    return out


_hash_cache: dict[str, int] = {}


def token_index(token: str) -> int:
    """Stable 64-bit blake2b hash of the token, reduced mod 2**18."""
    idx = _hash_cache.get(token)
    if idx is None:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(h, "little") % DIMENSION
        if len(_hash_cache) < 1_000_000:
            _hash_cache[token] = idx
    return idx


class SparseVector:
    """Sparse vector in the 2**18 hashed feature space (index -> weight)."""

    __slots__ = ("entries",)
    dimension = DIMENSION

    def __init__(self, entries: dict[int, float] | None = None):
        self.entries = entries or {}

    def __len__(self):
        return len(self.entries)

    def __bool__(self):
        return bool(self.entries)

    def __eq__(self, other):
        return isinstance(other, SparseVector) and self.entries == other.entries

    def __repr__(self):
        return f"SparseVector(nnz={len(self.entries)})"

    @property
    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.entries.values()))

    def dot(self, other: "SparseVector | dict") -> float:
        a = self.entries
        b = other.entries if isinstance(other, SparseVector) else other
        if len(a) > len(b):
            a, b = b, a
        return sum(w * b[i] for i, w in a.items() if i in b)


def cosine(a: SparseVector, b: SparseVector) -> float:
    """Cosine of two vectors, 0 if either is empty; clamped to [0, 1]."""
    if not a or not b:
        return 0.0
    s = a.dot(b) / (a.norm * b.norm)
    return min(1.0, max(0.0, s))


class HashingTfidf:
    """Term frequency times a running, add-one-smoothed idf.

    ``idf = ln((1 + N) / (1 + df)) + 1`` where N counts observed documents.
    After :meth:`freeze` the table no longer changes, which makes a batch
    run reproducible and identical captions map to identical vectors.
    """

    def __init__(self):
        self.df: dict[int, int] = {}
        self.n_docs = 0
        self.frozen = False

    def observe(self, tokens: Sequence[str]) -> None:
        if self.frozen:
            return
        self.n_docs += 1
        for i in {token_index(t) for t in tokens}:
            self.df[i] = self.df.get(i, 0) + 1

    def fit(self, docs: Iterable[Sequence[str]]) -> "HashingTfidf":
        for tokens in docs:
            self.observe(tokens)
        self.frozen = True
        return self

    def freeze(self) -> None:
        self.frozen = True

    def idf(self, index: int) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(index, 0))) + 1.0

    def transform(self, tokens: Sequence[str]) -> SparseVector:
        if not tokens:
            return SparseVector()
        tf: dict[int, int] = {}
        for t in tokens:
            i = token_index(t)
            tf[i] = tf.get(i, 0) + 1
        w = {i: c * self.idf(i) for i, c in tf.items()}
        norm = math.sqrt(sum(x * x for x in w.values()))
        return SparseVector({i: x / norm for i, x in w.items()})

    def vectorize(self, tokens: Sequence[str]) -> SparseVector:
        """Observe (unless frozen), then transform."""
        self.observe(tokens)
        return self.transform(tokens)


def vectorize(tokens: Sequence[str], model: HashingTfidf | None = None) -> SparseVector:
    """Vector of ``tokens``; without a model every term gets idf 1."""
    if model is None:
        model = HashingTfidf()
        model.freeze()
    return model.transform(tokens)


class LshIndex:
    """Random-hyperplane LSH with ``bands`` tables of ``rows``-bit signatures.

    Hyperplane components are Gaussian and drawn lazily per feature index
    from a generator seeded by ``(seed, index)``, so the same seed always
    yields the same directions without materialising a 2**18 x B*R matrix.
    Buckets hold at most ``bucket_cap`` post ids; overflowing a bucket or
    ageing past ``window`` removes the post from all its buckets at once.
    ``None`` disables either limit.
    """

    def __init__(self, bands: int = 8, rows: int = 12, bucket_cap: int | None = 64,
                 window: timedelta | None = timedelta(hours=24), seed: int = 0):
        if bands < 1 or rows < 1 or rows > 62:
            raise ConfigError("bands must be >= 1 and rows in [1, 62]")
        if bucket_cap is not None and bucket_cap < 1:
            raise ConfigError("bucket_cap must be >= 1")
        self.bands = bands
        self.rows = rows
        self.bucket_cap = bucket_cap
        self.window = window
        self.seed = seed
        self._planes: dict[int, np.ndarray] = {}
        self._tables: list[dict[int, deque]] = [{} for _ in range(bands)]
        self._where: dict[str, tuple[int, ...]] = {}
        self._fifo: deque[tuple[datetime, str]] = deque()
        self._pack = (1 << np.arange(rows, dtype=np.int64))

    def __len__(self):
        return len(self._where)

    def __contains__(self, post_id):
        return post_id in self._where

    def hyperplane_components(self, index: int) -> np.ndarray:
        row = self._planes.get(index)
        if row is None:
            row = np.random.default_rng((self.seed, index)).standard_normal(self.bands * self.rows)
            self._planes[index] = row
        return row

    def project(self, v: SparseVector) -> np.ndarray:
        """Projections of ``v`` onto all B*R hyperplanes."""
        if not v:
            return np.zeros(self.bands * self.rows)
        idx = list(v.entries)
        rows = np.stack([self.hyperplane_components(i) for i in idx])
        w = np.fromiter(v.entries.values(), dtype=np.float64, count=len(idx))
        return w @ rows

    def signatures(self, v: SparseVector) -> tuple[int, ...]:
        bits = (self.project(v) >= 0.0).reshape(self.bands, self.rows).astype(np.int64)
        return tuple(int(x) for x in bits @ self._pack)

    def lsh_signature(self, v: SparseVector, band: int) -> int:
        return self.signatures(v)[band]

    def stored(self) -> int:
        """Total bucket entries (each stored post counts once per band)."""
        return sum(len(dq) for table in self._tables for dq in table.values())

    def advance(self, now: datetime) -> None:
        """Evict everything older than ``now - window``."""
        if self.window is None:
            return
        horizon = now - self.window
        while self._fifo and self._fifo[0][0] < horizon:
            _, pid = self._fifo.popleft()
            if pid in self._where:
                self._drop(pid)

    def lsh_candidates(self, v: SparseVector, sigs: tuple[int, ...] | None = None) -> set[str]:
        if sigs is None:
            sigs = self.signatures(v)
        out: set[str] = set()
        for table, s in zip(self._tables, sigs):
            dq = table.get(s)
            if dq:
                out.update(dq)
        return out

    def lsh_insert(self, post_id: str, v: SparseVector, t: datetime,
                   sigs: tuple[int, ...] | None = None) -> None:
        if post_id in self._where:
            raise ValueError(f"post {post_id!r} already indexed")
        if sigs is None:
            sigs = self.signatures(v)
        self.advance(t)
        self._where[post_id] = sigs
        self._fifo.append((t, post_id))
        for table, s in zip(self._tables, sigs):
            dq = table.get(s)
            if dq is None:
                dq = table[s] = deque()
            dq.append(post_id)
            if self.bucket_cap is not None and len(dq) > self.bucket_cap:
                self._drop(dq[0])

    def _drop(self, post_id: str) -> None:
        sigs = self._where.pop(post_id)
        for table, s in zip(self._tables, sigs):
            dq = table[s]
            if dq and dq[0] == post_id:
                dq.popleft()
            else:
                dq.remove(post_id)
            if not dq:
                del table[s]


@dataclass
class Thread:
    id: int
    members: list[str]
    first_t: datetime
    last_t: datetime
    text: str  # caption of the earliest member
    vsum: dict[int, float] = field(default_factory=dict, repr=False)
    norm2: float = 0.0

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def centroid(self) -> SparseVector:
        """L2-normalised mean of the member vectors."""
        if self.norm2 <= 0.0:
            return SparseVector()
        n = math.sqrt(self.norm2)
        return SparseVector({i: w / n for i, w in self.vsum.items()})

    def similarity(self, v: SparseVector, raw_dot: float | None = None) -> float:
        if self.norm2 <= 0.0 or not v:
            return 0.0
        d = v.dot(self.vsum) if raw_dot is None else raw_dot
        return d / math.sqrt(self.norm2)

    def add(self, post_id: str, v: SparseVector, t: datetime) -> None:
        d = v.dot(self.vsum)
        for i, w in v.entries.items():
            self.vsum[i] = self.vsum.get(i, 0.0) + w
        # |s + v|^2 = |s|^2 + 2 s.v + |v|^2, with |v| = 1
        self.norm2 += 2.0 * d + 1.0
        self.members.append(post_id)
        if t > self.last_t:
            self.last_t = t
        if t < self.first_t:
            self.first_t = t


@dataclass
class LshConfig:
    bands: int = 8
    rows: int = 12
    bucket_cap: int | None = 64
    window_h: float | None = 24.0
    seed: int = 0

    def build(self) -> LshIndex:
        window = None if self.window_h is None else timedelta(hours=self.window_h)
        return LshIndex(self.bands, self.rows, self.bucket_cap, window, self.seed)


class ThreadDiscovery:
    """Single-writer thread store.

    ``exhaustive=True`` replaces LSH candidates by every thread sharing at
    least one feature with the post (all others have cosine 0), which is the
    reference the LSH path approximates. ``audit=True`` tracks LSH recall
    against that reference while running the LSH path.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, lsh: LshConfig | None = None,
                 model: HashingTfidf | None = None, exhaustive: bool = False, audit: bool = False):
        if not (0.0 < threshold <= 1.0):
            raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
        self.threshold = threshold
        self.lsh_config = lsh or LshConfig()
        self.index = self.lsh_config.build()
        self.model = model or HashingTfidf()
        self.exhaustive = exhaustive
        self.audit = audit
        self.threads: list[Thread] = []
        self.thread_of: dict[str, int] = {}
        self._postings: dict[int, set[int]] = {}
        self.recall_found = 0
        self.recall_total = 0

    @property
    def processed(self) -> int:
        return len(self.thread_of)

    @property
    def recall(self) -> float:
        return 1.0 if self.recall_total == 0 else self.recall_found / self.recall_total

    def process(self, post: Post) -> int | None:
        """Assign one post; posts with empty captions are skipped (None)."""
        if not post.text:
            return None
        v = self.model.vectorize(normalize(post.text))
        return self.assign_thread(post.id, v, post.t, post.text)

    def _exhaustive_candidates(self, v: SparseVector) -> set[int]:
        out: set[int] = set()
        for i in v.entries:
            s = self._postings.get(i)
            if s:
                out |= s
        return out

    def _best(self, v: SparseVector, tids: Iterable[int]) -> tuple[int | None, float]:
        best_id, best_sim = None, -1.0
        for tid in sorted(tids):
            s = self.threads[tid].similarity(v)
            if s > best_sim:
                best_id, best_sim = tid, s
        return best_id, best_sim

    def assign_thread(self, post_id: str, v: SparseVector, t: datetime, text: str = "") -> int:
        if post_id in self.thread_of:
            raise ValueError(f"post {post_id!r} already assigned")
        if not v:
            return self._new_thread(post_id, v, t, text)

        self.index.advance(t)
        sigs = self.index.signatures(v)
        if self.exhaustive:
            cand = self._exhaustive_candidates(v)
        else:
            cand = {self.thread_of[p] for p in self.index.lsh_candidates(v, sigs)}
            if self.audit:
                for tid in self._exhaustive_candidates(v):
                    if self.threads[tid].similarity(v) >= self.threshold - SIM_SLACK:
                        self.recall_total += 1
                        self.recall_found += tid in cand

        best_id, best_sim = self._best(v, cand)
        if best_id is not None and best_sim >= self.threshold - SIM_SLACK:
            self.threads[best_id].add(post_id, v, t)
            tid = best_id
        else:
            tid = self._new_thread(post_id, v, t, text)
        self.thread_of[post_id] = tid
        for i in v.entries:
            self._postings.setdefault(i, set()).add(tid)
        self.index.lsh_insert(post_id, v, t, sigs)
        return tid

    def _new_thread(self, post_id: str, v: SparseVector, t: datetime, text: str) -> int:
        tid = len(self.threads)
        th = Thread(tid, [], t, t, text)
        th.add(post_id, v, t)
        self.threads.append(th)
        self.thread_of[post_id] = tid
        return tid


def discover_threads(posts: Sequence[Post], threshold: float = DEFAULT_THRESHOLD,
                     lsh: LshConfig | None = None, exhaustive: bool = False,
                     audit: bool = False) -> ThreadDiscovery:
    """Batch run: posts in time order, idf fitted on the batch and frozen."""
    ordered = sorted((p for p in posts if p.text), key=lambda p: (p.t, p.id))
    tokens = [normalize(p.text) for p in ordered]
    model = HashingTfidf().fit(tokens)
    td = ThreadDiscovery(threshold, lsh, model, exhaustive=exhaustive, audit=audit)
    for p, toks in zip(ordered, tokens):
        v = model.transform(toks)
        td.assign_thread(p.id, v, p.t, p.text)
    return td


def write_threads_csv(td: ThreadDiscovery, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["thread_id", "size", "first_t", "last_t", "representative_text"])
        for th in td.threads:
            w.writerow([th.id, th.size, format_instant(th.first_t), format_instant(th.last_t), th.text])


def threads_to_json(td: ThreadDiscovery) -> dict:
    return {
        "threshold": td.threshold,
        "lsh": vars(td.lsh_config),
        "threads": [
            {"thread_id": th.id, "size": th.size, "first_t": format_instant(th.first_t),
             "last_t": format_instant(th.last_t), "representative_text": th.text,
             "members": list(th.members)}
            for th in td.threads
        ],
    }


def write_threads_json(td: ThreadDiscovery, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(threads_to_json(td), fh, ensure_ascii=False, indent=1)
