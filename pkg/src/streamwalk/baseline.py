"""Inverted-index walk store: explicit walk sequences plus vertex -> walk-id postings.

Used as a cross-check for the tree engine (same affected walks, same
re-walks under the same seeds) and as the reference point for space.
The graph itself is kept in the same hybrid snapshot as the primary
engine; only walk storage differs.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from .corpus import CorpusConfig, WalkRoster, check_capacity, grouped_order
from .hybrid import MAV, EdgeBatch, GraphSnapshot, apply_edge_batch, min_position_per_walk
from .models import walk_kernel
from .updater import UpdateReport, corpus_stats

_EMPTY = np.empty(0, dtype=np.int64)


def _postings(owner: np.ndarray, walks: np.ndarray) -> dict[int, np.ndarray]:
    """Sorted walk-id multiset per vertex."""
    if owner.size == 0:
        return {}
    order = grouped_order(owner, walks)
    owner, walks = owner[order], walks[order]
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
    return dict(zip(owner[starts].tolist(), np.split(walks, starts[1:])))


def _multiset_remove(a: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Remove one occurrence of each element of sorted ``r`` from sorted ``a``."""
    if r.size == 0:
        return a
    rank = np.arange(r.size) - np.searchsorted(r, r, side="left")
    pos = np.searchsorted(a, r, side="left") + rank
    if np.any(pos >= a.size) or np.any(a[np.minimum(pos, a.size - 1)] != r):
        raise AssertionError("inverted index lost track of a walk occurrence")
    keep = np.ones(a.size, dtype=bool)
    keep[pos] = False
    return a[keep]


class IIEngine:
    """Walk table (walk id -> vertex row) and inverted index over it."""

    def __init__(self, snapshot: GraphSnapshot, cfg: CorpusConfig, table: np.ndarray,
                 roster: WalkRoster, index: dict[int, np.ndarray]):
        self.snapshot = snapshot
        self.cfg = cfg
        self.table = table
        self.roster = roster
        self.index = index
        self.epoch = snapshot.epoch
        self.reports: list[UpdateReport] = []

    @classmethod
    def generate(cls, s: GraphSnapshot, cfg: CorpusConfig) -> "IIEngine":
        verts = np.asarray(s.vertices(), dtype=np.int64)
        if verts.size == 0:
            raise ValueError("cannot generate walks on an empty graph")
        roster = WalkRoster.initial(verts, cfg.n_w)
        check_capacity(roster.next_id, cfg.l, int(verts.max()))
        walks = np.arange(roster.next_id, dtype=np.int64)
        res = walk_kernel(s.adjacency(), cfg.model, cfg.seed, 0, walks, roster.starts,
                          np.full(len(walks), -1, dtype=np.int64), 0, cfg.l)
        table = res.seq
        index = _postings(table.ravel(), np.repeat(walks, cfg.l))
        return cls(s.replace(epoch=0), cfg, table, roster, index)

    # -- reads --

    def walks(self) -> tuple[np.ndarray, np.ndarray]:
        ids = self.roster.live_ids()
        return ids, self.table[ids]

    def memory_bytes(self) -> tuple[int, int]:
        """Payload bytes of (walk sequences, inverted index), 8 bytes per id."""
        walks_bytes = len(self.roster) * self.cfg.l * 8
        index_bytes = sum(8 + 8 * len(p) for p in self.index.values() if len(p))
        return walks_bytes, index_bytes

    def check_index(self) -> bool:
        ids, seq = self.walks()
        expect = _postings(seq.ravel(), np.repeat(ids, self.cfg.l))
        got = {v: p for v, p in self.index.items() if len(p)}
        return expect.keys() == got.keys() and all(np.array_equal(expect[v], got[v]) for v in expect)

    # -- updates --

    def affected(self, touched: np.ndarray) -> MAV:
        """First occurrence of any touched vertex in each walk that visits one."""
        lists = [self.index[v] for v in touched.tolist() if v in self.index]
        if not lists:
            return MAV()
        walks = np.unique(np.concatenate(lists))
        rows = self.table[walks]
        hit = np.isin(rows, touched)
        first = np.argmax(hit, axis=1)
        verts = rows[np.arange(len(walks)), first]
        w, v, p = min_position_per_walk(walks, first.astype(np.int64), verts)
        return MAV(w, v, p)

    def apply_batch(self, batch: EdgeBatch) -> MAV:
        """Graph update plus affected-walk discovery via the index."""
        s2, gmav = apply_edge_batch(self.snapshot, batch, None)
        ends = sorted({a for _, a, _ in batch.ops} | {b for _, _, b in batch.ops})
        mav = self.affected(np.asarray(ends, dtype=np.int64)) if s2 is not self.snapshot else MAV()
        self.snapshot = s2
        return MAV(mav.walks, mav.vertices, mav.positions, gmav.added_vertices, gmav.removed_vertices)

    def update_walks(self, mav: MAV, epoch: Optional[int] = None) -> UpdateReport:
        t0 = time.perf_counter()
        cfg, l = self.cfg, self.cfg.l
        epoch = self.epoch + 1 if epoch is None else epoch
        roster = self.roster
        retired = roster.rooted_at(mav.removed_vertices)
        roster = roster.retire(retired)
        live = roster.live[mav.walks] if len(mav) else np.zeros(0, dtype=bool)
        walks, starts, p0 = mav.walks[live], mav.vertices[live], mav.positions[live]
        if cfg.model.order == 2:
            prevs = np.where(p0 > 0, self.table[walks, np.maximum(p0 - 1, 0)], -1)
        else:
            prevs = np.full(len(walks), -1, dtype=np.int64)
        new_verts = np.sort(np.asarray(mav.added_vertices, dtype=np.int64))
        roster, spawned = roster.spawn(new_verts, cfg.n_w)
        if len(spawned):
            check_capacity(roster.next_id, l, int(new_verts.max()))
        all_w = np.concatenate([walks, spawned])
        res = walk_kernel(
            self.snapshot.adjacency(), cfg.model, cfg.seed, epoch, all_w,
            np.concatenate([starts, roster.starts[spawned]]),
            np.concatenate([prevs, np.full(len(spawned), -1, dtype=np.int64)]),
            np.concatenate([p0, np.zeros(len(spawned), dtype=np.int64)]), l,
        )

        pos = np.arange(l)
        # postings to drop: old suffixes of re-walked walks and whole retired walks
        old_mask = pos[None, :] >= p0[:, None]
        drop_v = np.concatenate([self.table[walks][old_mask], self.table[retired].ravel()])
        drop_w = np.concatenate([np.broadcast_to(walks[:, None], (len(walks), l))[old_mask],
                                 np.repeat(retired, l)])
        k = len(walks)
        new_rows = res.seq
        add_mask = pos[None, :] >= np.concatenate([p0, np.zeros(len(spawned), dtype=np.int64)])[:, None]
        add_v = new_rows[add_mask]
        add_w = np.broadcast_to(all_w[:, None], new_rows.shape)[add_mask]

        if len(spawned):
            self.table = np.concatenate([self.table, np.zeros((len(spawned), l), dtype=np.int64)])
        if k:
            self.table[walks] = np.where(old_mask, new_rows[:k], self.table[walks])
        if len(spawned):
            self.table[spawned] = new_rows[k:]
        self._patch_index(drop_v, drop_w, add_v, add_w)
        for v in mav.removed_vertices.tolist():
            if v in self.index and len(self.index[v]) == 0:
                del self.index[v]
        self.roster = roster
        self.epoch = epoch
        self.snapshot = self.snapshot.replace(epoch=epoch)
        st = corpus_stats(MAV(walks, starts, p0), l)
        report = UpdateReport(
            epoch=epoch, affected=len(mav), rewalked=k, inserted_affected=st["inserted"],
            inserted=int(add_mask.sum()), spawned=len(spawned), retired=len(retired),
            skipped=int((~live).sum()), truncated=int(res.truncated.sum()), pmin_hist=st["pmin_hist"],
            walk_store_bytes=sum(self.memory_bytes()),
        )
        report.wall_time = time.perf_counter() - t0
        self.reports.append(report)
        return report

    def _patch_index(self, drop_v, drop_w, add_v, add_w) -> None:
        drops = _postings(drop_v, drop_w)
        adds = _postings(add_v, add_w)
        for v in sorted(drops.keys() | adds.keys()):
            cur = self.index.get(v, _EMPTY)
            if v in drops:
                cur = _multiset_remove(cur, drops[v])
            if v in adds:
                cur = np.sort(np.concatenate([cur, adds[v]]), kind="stable")
            if len(cur):
                self.index[v] = cur
            else:
                self.index.pop(v, None)

    def step(self, batch: EdgeBatch) -> tuple[MAV, UpdateReport]:
        t0 = time.perf_counter()
        mav = self.apply_batch(batch)
        report = self.update_walks(mav)
        report.wall_time = time.perf_counter() - t0
        return mav, report


def ii_generate(s: GraphSnapshot, cfg: CorpusConfig) -> IIEngine:
    return IIEngine.generate(s, cfg)


def ii_apply_batch(engine: IIEngine, batch: EdgeBatch) -> MAV:
    return engine.apply_batch(batch)


def ii_update_walks(engine: IIEngine, mav: MAV) -> UpdateReport:
    return engine.update_walks(mav)


def ii_memory_bytes(engine: Optional[IIEngine]) -> tuple[int, int]:
    return (0, 0) if engine is None else engine.memory_bytes()
