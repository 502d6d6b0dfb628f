"""Batch walk maintenance: re-walk affected walks, stack a new version, merge by policy."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from typing import IO, Optional

import numpy as np

from . import ctree
from .corpus import (
    Corpus,
    check_capacity,
    find_next,
    group_triplets,
    grouped_order,
    triplets_of,
    walk_matrix,
)
from .hybrid import (
    MAV,
    EdgeBatch,
    apply_edge_batch,
    decode_vertices,
    push_versions,
    replace_versions,
    walk_store_bytes,
)
from .models import walk_kernel
from .codec import encode_triplets

log = logging.getLogger(__name__)

__all__ = [
    "MAV",
    "MergePolicy",
    "UpdateReport",
    "InsertionAccumulator",
    "batch_walk_update",
    "apply_batch",
    "merge",
    "corpus_stats",
    "previous_vertices",
    "WalkEngine",
]


@dataclass(frozen=True)
class MergePolicy:
    kind: str = "on_demand"
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("on_demand", "eager", "every_k"):
            raise ValueError(f"unknown merge policy {self.kind!r}")
        if self.k < 1:
            raise ValueError("every_k needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "MergePolicy":
        t = text.strip().lower().replace("_", "-")
        if t == "on-demand":
            return cls("on_demand")
        if t == "eager":
            return cls("eager")
        if t.startswith("every:"):
            return cls("every_k", int(t.split(":", 1)[1]))
        raise ValueError(f"policy must be on-demand, eager or every:K, got {text!r}")

    def fires(self, pending: int) -> bool:
        """Whether to merge once ``pending`` unmerged batches have accumulated."""
        if self.kind == "eager":
            return pending >= 1
        if self.kind == "every_k":
            return pending >= self.k
        return False

    def __str__(self) -> str:
        return {"on_demand": "on-demand", "eager": "eager"}.get(self.kind, f"every:{self.k}")


@dataclass
class UpdateReport:
    epoch: int
    affected: int = 0
    rewalked: int = 0
    inserted_affected: int = 0
    inserted: int = 0
    spawned: int = 0
    retired: int = 0
    skipped: int = 0
    truncated: int = 0
    pmin_hist: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    sample_time: float = 0.0
    merge_time: float = 0.0
    walk_store_bytes: int = 0
    merged: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class InsertionAccumulator:
    """Encoded triplets grouped by owning vertex, sorted within each group."""

    vertices: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def group(self, v: int) -> np.ndarray:
        i = int(np.searchsorted(self.vertices, v))
        if i >= len(self.vertices) or self.vertices[i] != v:
            return np.empty(0, dtype=np.uint64)
        return self.values[self.offsets[i]:self.offsets[i + 1]]


def corpus_stats(mav: MAV, l: int) -> dict:
    """p_min histogram, affected-walk count and |I| = sum of (l - p_min)."""
    hist = np.bincount(mav.positions, minlength=l)[:l] if len(mav) else np.zeros(l, dtype=np.int64)
    return {
        "affected": len(mav),
        "inserted": int(np.sum(l - mav.positions)) if len(mav) else 0,
        "pmin_hist": hist.tolist(),
    }


# -- previous-vertex recovery (second-order models) -------------------------

_SCALAR_PREFIX_LIMIT = 20_000


def previous_vertices(c: Corpus, walks: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Vertex of each walk at ``position - 1`` (-1 where the position is 0).

    Small requests follow the walk from its start with ``find_next``; large
    ones decode the whole corpus once.  Both read the same valid triplets.
    """
    walks = np.asarray(walks, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    out = np.full(len(walks), -1, dtype=np.int64)
    need = np.flatnonzero(positions > 0)
    if need.size == 0:
        return out
    if int(positions[need].sum()) <= _SCALAR_PREFIX_LIMIT:
        s = c.snapshot
        for i in need.tolist():
            w = int(walks[i])
            v = c.roster.start(w)
            for p in range(int(positions[i]) - 1):
                v = find_next(s, v, w, p, c.log)
            out[i] = v
        return out
    ids, seq = walk_matrix(c, np.unique(walks[need]))
    rows = np.searchsorted(ids, walks[need])
    out[need] = seq[rows, positions[need] - 1]
    return out


# -- update -----------------------------------------------------------------


def _accumulate(seq: np.ndarray, walks: np.ndarray, p0: np.ndarray, l: int) -> InsertionAccumulator:
    g = group_triplets(*triplets_of(seq, walks, p0), l)
    return InsertionAccumulator(g.vertices, g.values, g.offsets, g.lo, g.hi)


def batch_walk_update(c: Corpus, mav: MAV, policy: MergePolicy = MergePolicy(), epoch: Optional[int] = None,
                      pending: int = 0) -> tuple[Corpus, UpdateReport]:
    """Re-sample every affected walk from its first affected position.

    ``c.snapshot`` must already carry the batch's graph changes (see
    ``apply_batch``).  Walks rooted at removed vertices are retired, fresh
    walks are spawned for added vertices, and all new triplets land in one
    version stamped ``epoch`` on each owning vertex.  ``pending`` counts
    unmerged batches before this one, for the merge policy.
    """
    t0 = time.perf_counter()
    s = c.snapshot
    l = s.walk_length
    cfg = c.cfg
    if epoch is None:
        epoch = s.epoch + 1
    if epoch <= s.epoch:
        raise ValueError(f"epoch {epoch} must exceed the snapshot's epoch {s.epoch}")
    roster = c.roster

    stale = int((~roster.live[mav.walks]).sum()) if len(mav) else 0
    if stale:
        log.warning("epoch %d: skipping %d affected walks retired in earlier batches", epoch, stale)
    retired = roster.rooted_at(mav.removed_vertices)
    roster = roster.retire(retired)
    live = roster.live[mav.walks] if len(mav) else np.zeros(0, dtype=bool)
    skipped = int((~live).sum())
    walks = mav.walks[live]
    starts = mav.vertices[live]
    p0 = mav.positions[live]
    if cfg.model.order == 2:
        prevs = previous_vertices(replace(c, roster=roster), walks, p0)
    else:
        prevs = np.full(len(walks), -1, dtype=np.int64)

    new_verts = np.sort(np.asarray(mav.added_vertices, dtype=np.int64))
    roster, spawned = roster.spawn(new_verts, cfg.n_w)
    if len(spawned):
        check_capacity(roster.next_id, l, int(new_verts.max()))
    all_walks = np.concatenate([walks, spawned])
    all_starts = np.concatenate([starts, roster.starts[spawned]])
    all_prev = np.concatenate([prevs, np.full(len(spawned), -1, dtype=np.int64)])
    all_p0 = np.concatenate([p0, np.zeros(len(spawned), dtype=np.int64)])

    ts = time.perf_counter()
    res = walk_kernel(s.adjacency(), cfg.model, cfg.seed, epoch, all_walks, all_starts, all_prev, all_p0, l)
    acc = _accumulate(res.seq, all_walks, all_p0, l)
    sample_time = time.perf_counter() - ts

    logbook = c.log.record(epoch, walks, p0).record(epoch, retired, np.zeros(len(retired), dtype=np.int64))
    if len(acc.vertices):
        trees = ctree.build_many(acc.values, acc.offsets, s.config.walks)
        s = push_versions(s, epoch, acc.vertices, trees, acc.lo, acc.hi)
    out = Corpus(s.replace(epoch=epoch), roster, logbook, cfg)
    peak = walk_store_bytes(out.snapshot)

    st = corpus_stats(MAV(walks, starts, p0), l)
    report = UpdateReport(
        epoch=epoch,
        affected=len(mav),
        rewalked=len(walks),
        inserted_affected=st["inserted"],
        inserted=len(acc),
        spawned=len(spawned),
        retired=len(retired),
        skipped=skipped,
        truncated=int(res.truncated.sum()),
        pmin_hist=st["pmin_hist"],
        sample_time=sample_time,
        walk_store_bytes=peak,
    )
    if policy.fires(pending + 1):
        tm = time.perf_counter()
        out = merge(out)
        report.merge_time = time.perf_counter() - tm
        report.merged = True
    report.wall_time = time.perf_counter() - t0
    return out, report


def apply_batch(c: Corpus, batch: EdgeBatch, policy: MergePolicy = MergePolicy(),
                pending: int = 0) -> tuple[Corpus, MAV, UpdateReport]:
    """Graph update followed by the walk update, stamped with the next epoch."""
    t0 = time.perf_counter()
    s2, mav = apply_edge_batch(c.snapshot, batch, c.log)
    out, report = batch_walk_update(replace(c, snapshot=s2), mav, policy, c.epoch + 1, pending)
    report.wall_time = time.perf_counter() - t0
    return out, mav, report


# -- merge ------------------------------------------------------------------


def merge(c: Corpus) -> Corpus:
    """Collapse each vertex's versions into one holding exactly its valid triplets.

    Vertices with a single version and nothing invalidated keep their tree
    object as-is.  The merged version is stamped with the newest epoch it
    absorbed, so the result does not depend on when merges happened.
    """
    s = c.snapshot
    last_log = max((e for e, _, _ in c.log.entries), default=-1)
    cand = []
    for e in s.entries():
        if len(e.versions) > 1 or (e.versions and e.versions[0][0] < last_log):
            cand.append(e)
    if not cand:
        return replace(c, log=c.log.cleared()) if len(c.log) else c
    verts = [e.vertex for e in cand]
    own, w, p, nxt = decode_vertices(s, verts, c.log)
    vals = encode_triplets(w, p, nxt, s.walk_length)
    order = grouped_order(own, vals)
    own, vals, nxt = own[order], vals[order], nxt[order]
    varr = np.asarray(verts, dtype=np.int64)
    lo_i = np.searchsorted(own, varr, side="left")
    hi_i = np.searchsorted(own, varr, side="right")
    keep_tree = []
    rebuild = []
    for i, e in enumerate(cand):
        n_valid = int(hi_i[i] - lo_i[i])
        if len(e.versions) == 1 and n_valid == e.versions[0][1].size:
            keep_tree.append(i)
        else:
            rebuild.append(i)
    trees: list[Optional[ctree.CTree]] = [None] * len(cand)
    for i in keep_tree:
        trees[i] = cand[i].versions[0][1]
    if rebuild:
        rb = np.asarray(rebuild, dtype=np.int64)
        seg_lo, seg_hi = lo_i[rb], hi_i[rb]
        sizes = seg_hi - seg_lo
        idx = np.repeat(seg_lo - np.cumsum(sizes) + sizes, sizes) + np.arange(int(sizes.sum()))
        built = ctree.build_many(vals[idx], np.append(0, np.cumsum(sizes)), s.config.walks)
        for i, t in zip(rebuild, built):
            trees[i] = t
    epochs, bounds = [], []
    for i, e in enumerate(cand):
        epochs.append(max(ep for ep, _ in e.versions))
        if hi_i[i] > lo_i[i]:
            seg = nxt[lo_i[i]:hi_i[i]]
            bounds.append((int(seg.min()), int(seg.max())))
        else:
            bounds.append(None)
    s = replace_versions(s, varr, trees, epochs, bounds)
    return Corpus(s, c.roster, c.log.cleared(), c.cfg)


# -- live handle -------------------------------------------------------------


class WalkEngine:
    """Single-writer handle publishing immutable corpus states.

    Readers call ``acquire`` and keep whatever state they got; writers are
    serialized by a lock and publish a new state with one reference swap.
    """

    def __init__(self, corpus: Corpus, policy: MergePolicy = MergePolicy(), stats: Optional[IO[str]] = None):
        self._state = corpus
        self.policy = policy
        self.stats = stats
        self.pending = 0
        self._lock = threading.Lock()
        self.reports: list[UpdateReport] = []

    def acquire(self) -> Corpus:
        return self._state

    def acquire_snapshot(self):
        return self._state.snapshot

    def apply(self, batch: EdgeBatch) -> tuple[MAV, UpdateReport]:
        with self._lock:
            out, mav, report = apply_batch(self._state, batch, self.policy, self.pending)
            self.pending = 0 if report.merged else self.pending + 1
            self._state = out
            self.reports.append(report)
            if self.stats is not None:
                self.stats.write(report.to_json() + "\n")
            return mav, report

    def merge(self) -> Corpus:
        with self._lock:
            self._state = merge(self._state)
            self.pending = 0
            return self._state


def acquire_snapshot(h: WalkEngine):
    return h.acquire_snapshot()
