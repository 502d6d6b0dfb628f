"""Walk corpus on top of the hybrid tree: generation, lookups and reconstruction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from . import ctree
from .codec import OPERAND_LIMIT, EncodingOverflow, decode_triplet, encode_triplets, szudzik_pair
from .ctree import ScanStats
from .hybrid import GraphSnapshot, ParseError, VertexNotFound, decode_vertices, replace_versions
from .models import WalkModel, walk_kernel

_NO_CUT = np.iinfo(np.int64).max


class WalkCorruption(RuntimeError):
    def __init__(self, walk: int, position: int, detail: str = "missing triplet"):
        super().__init__(f"walk {walk} broken at position {position}: {detail}")
        self.walk = walk
        self.position = position


@dataclass(frozen=True)
class CorpusConfig:
    n_w: int = 10
    l: int = 80
    model: WalkModel = WalkModel()
    seed: int = 0

    def __post_init__(self):
        if self.n_w < 1 or self.l < 1:
            raise ValueError("n_w and l must both be >= 1")


def check_capacity(n_walks: int, l: int, max_vertex: int) -> None:
    """Raise ``EncodingOverflow`` if walk ids or vertex ids exceed the pairing domain."""
    if n_walks and (n_walks - 1) * l + l - 1 >= OPERAND_LIMIT:
        raise EncodingOverflow(f"{n_walks} walks of length {l} exceed the 32-bit walk coordinate")
    if max_vertex >= OPERAND_LIMIT:
        raise EncodingOverflow(f"vertex id {max_vertex} exceeds 2^32-1")


# -- roster and rewrite log -------------------------------------------------


@dataclass(frozen=True)
class WalkRoster:
    """Walk id -> start vertex, plus which ids are still live.  Ids are never reused."""

    starts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    live: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    @classmethod
    def initial(cls, vertices: np.ndarray, n_w: int) -> "WalkRoster":
        starts = np.repeat(np.asarray(vertices, dtype=np.int64), n_w)
        return cls(starts, np.ones(len(starts), dtype=bool))

    @property
    def next_id(self) -> int:
        return len(self.starts)

    def __len__(self) -> int:
        return int(self.live.sum())

    def start(self, w: int) -> int:
        if not (0 <= w < len(self.starts)) or not self.live[w]:
            raise KeyError(f"walk {w} is not live")
        return int(self.starts[w])

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self.live)

    def rooted_at(self, vertices: np.ndarray) -> np.ndarray:
        if len(vertices) == 0:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.live & np.isin(self.starts, vertices))

    def retire(self, walks: np.ndarray) -> "WalkRoster":
        if len(walks) == 0:
            return self
        live = self.live.copy()
        live[walks] = False
        return WalkRoster(self.starts, live)

    def spawn(self, vertices: np.ndarray, n_w: int) -> tuple["WalkRoster", np.ndarray]:
        """Append ``n_w`` walks per vertex (in the given order); returns the new ids."""
        add = np.repeat(np.asarray(vertices, dtype=np.int64), n_w)
        ids = np.arange(self.next_id, self.next_id + len(add), dtype=np.int64)
        if len(add) == 0:
            return self, ids
        return WalkRoster(np.concatenate([self.starts, add]), np.concatenate([self.live, np.ones(len(add), bool)])), ids


@dataclass(frozen=True)
class RewriteLog:
    """Cut positions recorded since the last merge.

    Entry ``(e, walks, cuts)`` says each listed walk was rewritten at epoch
    ``e`` from position ``cut`` onward.  A triplet written at epoch ``e0``
    survives unless some entry with a later epoch has ``cut <= position``.
    """

    entries: tuple[tuple[int, np.ndarray, np.ndarray], ...] = ()

    def record(self, epoch: int, walks: np.ndarray, cuts: np.ndarray) -> "RewriteLog":
        walks = np.asarray(walks, dtype=np.int64)
        if walks.size == 0:
            return self
        cuts = np.broadcast_to(np.asarray(cuts, dtype=np.int64), walks.shape)
        order = np.argsort(walks, kind="stable")
        return RewriteLog(self.entries + ((epoch, walks[order], cuts[order].copy()),))

    def __len__(self) -> int:
        return len(self.entries)

    def cut_table(self, epoch: int, size: int) -> np.ndarray:
        """Dense per-walk cut applying to triplets written at ``epoch``."""
        cut = np.full(size, _NO_CUT, dtype=np.int64)
        for e, w, c in self.entries:
            if e > epoch:
                m = w < size
                np.minimum.at(cut, w[m], c[m])
        return cut

    def is_valid(self, w: int, p: int, epoch: int) -> bool:
        for e, ws, cs in self.entries:
            if e <= epoch:
                continue
            i = int(np.searchsorted(ws, w))
            while i < len(ws) and ws[i] == w:
                if cs[i] <= p:
                    return False
                i += 1
        return True

    def cleared(self) -> "RewriteLog":
        return RewriteLog()


@dataclass(frozen=True)
class Corpus:
    """Everything a reader needs: graph and walk trees, roster and log."""

    snapshot: GraphSnapshot
    roster: WalkRoster
    log: RewriteLog
    cfg: CorpusConfig

    @property
    def epoch(self) -> int:
        return self.snapshot.epoch


# -- grouping triplets by owner --------------------------------------------


@dataclass
class Grouped:
    vertices: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def triplets_of(seq: np.ndarray, walks: np.ndarray, p0: np.ndarray):
    """Owner/walk/position/next arrays for every filled position of ``seq``."""
    k, l = seq.shape
    pos = np.arange(l, dtype=np.int64)
    mask = pos[None, :] >= np.asarray(p0, dtype=np.int64)[:, None]
    nxt = np.empty_like(seq)
    nxt[:, :-1] = seq[:, 1:]
    nxt[:, -1] = seq[:, -1]
    wmat = np.broadcast_to(np.asarray(walks, dtype=np.int64)[:, None], seq.shape)
    pmat = np.broadcast_to(pos[None, :], seq.shape)
    return seq[mask], wmat[mask], pmat[mask], nxt[mask]


def grouped_order(keys: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Permutation sorting by ``keys`` (< 2^64, non-negative), ties broken by ``vals``.

    Sorts by value once, then runs stable 16-bit radix passes over the key,
    which is several times faster than ``np.lexsort`` on large inputs.
    """
    order = np.argsort(vals)
    if order.size == 0:
        return order
    k = np.asarray(keys, dtype=np.int64)[order].astype(np.uint64)
    top = int(k.max())
    shift = 0
    while shift == 0 or (top >> shift):
        digit = ((k >> np.uint64(shift)) & np.uint64(0xFFFF)).astype(np.uint16)
        o = np.argsort(digit, kind="stable")
        order = order[o]
        k = k[o]
        shift += 16
    return order


def group_triplets(owner: np.ndarray, w: np.ndarray, p: np.ndarray, nxt: np.ndarray, l: int) -> Grouped:
    """Encode triplets and group them by owning vertex, sorted within each group."""
    vals = encode_triplets(w, p, nxt, l)
    order = grouped_order(owner, vals)
    owner = owner[order]
    vals = vals[order]
    nxt = nxt[order]
    if owner.size == 0:
        e = np.empty(0, dtype=np.int64)
        return Grouped(e, vals, np.zeros(1, dtype=np.int64), e, e)
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
    offsets = np.append(starts, owner.size).astype(np.int64)
    return Grouped(owner[starts], vals, offsets, np.minimum.reduceat(nxt, starts), np.maximum.reduceat(nxt, starts))


# -- generation -------------------------------------------------------------


def generate_corpus(s: GraphSnapshot, cfg: CorpusConfig) -> Corpus:
    """Sample ``n_w`` walks of length ``l`` from every vertex as the epoch-0 corpus."""
    verts = np.asarray(s.vertices(), dtype=np.int64)
    if verts.size == 0:
        raise ValueError("cannot generate walks on an empty graph")
    roster = WalkRoster.initial(verts, cfg.n_w)
    check_capacity(roster.next_id, cfg.l, int(verts.max()))
    walks = np.arange(roster.next_id, dtype=np.int64)
    res = walk_kernel(s.adjacency(), cfg.model, cfg.seed, 0, walks, roster.starts,
                      np.full(len(walks), -1, dtype=np.int64), 0, cfg.l)
    g = group_triplets(*triplets_of(res.seq, walks, np.zeros(len(walks), dtype=np.int64)), cfg.l)
    s = s.replace(walk_length=cfg.l, epoch=0)
    trees = ctree.build_many(g.values, g.offsets, s.config.walks)
    bounds = list(zip(g.lo.tolist(), g.hi.tolist()))
    s = replace_versions(s, g.vertices, trees, [0] * len(trees), bounds)
    return Corpus(s, roster, RewriteLog(), cfg)


# -- lookups ----------------------------------------------------------------


def search_range(s: GraphSnapshot, v: int, w: int, p: int) -> Optional[tuple[int, int]]:
    e = s.entry(v)
    if not e.versions or e.bounds is None:
        return None
    f = w * s.walk_length + p
    return szudzik_pair(f, e.bounds[0]), szudzik_pair(f, e.bounds[1])


def find_next(s: GraphSnapshot, v: int, w: int, p: int, log: Optional[RewriteLog] = None,
              stats: Optional[ScanStats] = None) -> Optional[int]:
    """Next vertex of walk ``w`` after it stands on ``v`` at position ``p``.

    Scans ``v``'s walk-tree versions newest first, decoding only chunks that
    can overlap the encoded range built from ``v``'s next-vertex bounds.
    """
    l = s.walk_length
    if not 0 <= p < max(l, 1):
        raise ValueError(f"position {p} outside walk length {l}")
    rng = search_range(s, v, w, p)
    if rng is None:
        return None
    lb, ub = rng
    for ep, t in reversed(s.entry(v).versions):
        for x in ctree.range_scan(t, lb, ub, stats):
            tw, tp, nxt = decode_triplet(x, l)
            if tw == w and tp == p and (log is None or log.is_valid(w, p, ep)):
                return nxt
    return None


def reconstruct_walk(c: Corpus, w: int) -> list[int]:
    s, l = c.snapshot, c.snapshot.walk_length
    v = c.roster.start(w)
    out = [v]
    for p in range(l):
        try:
            nxt = find_next(s, v, w, p, c.log)
        except VertexNotFound:
            raise WalkCorruption(w, p, f"vertex {v} missing") from None
        if nxt is None:
            raise WalkCorruption(w, p)
        if p == l - 1:
            if nxt != v:
                raise WalkCorruption(w, p, "terminal triplet does not point at its own vertex")
            break
        out.append(nxt)
        v = nxt
    return out


def walk_matrix(c: Corpus, walks: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Bulk reconstruction of live walks by decoding every valid triplet.

    Returns ``(walk ids, seq)`` with ``seq[i, p]`` the vertex of walk ``i``
    at position ``p``.  Raises ``WalkCorruption`` unless each live
    ``(walk, position)`` has exactly one valid triplet.
    """
    s, l = c.snapshot, c.snapshot.walk_length
    ids = c.roster.live_ids() if walks is None else np.asarray(walks, dtype=np.int64)
    own, w, p, nxt = decode_vertices(s, s.vertices(), c.log)
    keep = np.zeros(c.roster.next_id, dtype=bool)
    keep[ids] = True
    m = keep[w]
    own, w, p, nxt = own[m], w[m], p[m], nxt[m]
    row = np.full(c.roster.next_id, -1, dtype=np.int64)
    row[ids] = np.arange(len(ids))
    seq = np.full((len(ids), l), -1, dtype=np.int64)
    nxtm = np.full((len(ids), l), -1, dtype=np.int64)
    flat = row[w] * l + p
    counts = np.bincount(flat, minlength=len(ids) * l)
    if counts.size and counts.max() > 1:
        bad = int(np.argmax(counts > 1))
        raise WalkCorruption(int(ids[bad // l]), bad % l, "duplicate valid triplets")
    seq.ravel()[flat] = own
    nxtm.ravel()[flat] = nxt
    missing = np.flatnonzero(seq.ravel() < 0)
    if missing.size:
        bad = int(missing[0])
        raise WalkCorruption(int(ids[bad // l]), bad % l)
    if l > 1 and not np.array_equal(nxtm[:, :-1], seq[:, 1:]):
        bad = int(np.argmax((nxtm[:, :-1] != seq[:, 1:]).ravel()))
        raise WalkCorruption(int(ids[bad // (l - 1)]), bad % (l - 1), "next vertex disagrees with successor")
    if not np.array_equal(nxtm[:, -1], seq[:, -1]):
        bad = int(np.argmax(nxtm[:, -1] != seq[:, -1]))
        raise WalkCorruption(int(ids[bad]), l - 1, "terminal triplet does not point at its own vertex")
    if not np.array_equal(seq[:, 0], c.roster.starts[ids]):
        bad = int(np.argmax(seq[:, 0] != c.roster.starts[ids]))
        raise WalkCorruption(int(ids[bad]), 0, "walk does not begin at its roster start")
    return ids, seq


def write_corpus(c: Corpus, fh: IO[str]) -> None:
    """One line per live walk: ``walk_id: v0 v1 ...``."""
    ids, seq = walk_matrix(c)
    for w, row in zip(ids.tolist(), seq.tolist()):
        fh.write(f"{w}: {' '.join(map(str, row))}\n")


def read_corpus(fh: IO[str]) -> dict[int, list[int]]:
    out = {}
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        try:
            if not sep:
                raise ValueError
            out[int(head)] = [int(x) for x in rest.split()]
        except ValueError:
            raise ParseError(lineno, f"expected 'walk_id: v0 v1 ...', got {line!r}") from None
    return out
