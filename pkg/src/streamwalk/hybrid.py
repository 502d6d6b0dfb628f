"""Vertex-tree holding both the graph and the walk corpus.

Each vertex maps to an edge-tree (its sorted neighbors), a tuple of
walk-tree versions stamped with the epoch that wrote them, and widen-only
bounds on the next-vertex ids stored in those versions.  Snapshots are
immutable; applying a batch produces a new root sharing every untouched
entry with the previous one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import ctree, pftree
from .codec import OPERAND_LIMIT, decode_triplets
from .ctree import ChunkParams, CTree

INSERT = "+"
DELETE = "-"


class VertexNotFound(KeyError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, message: str, source: str = "<input>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


@dataclass(frozen=True)
class OpError:
    index: int
    op: str
    src: int
    dst: int
    reason: str

    def __str__(self) -> str:
        return f"op {self.index} ({self.op} {self.src} {self.dst}): {self.reason}"


class BatchRejected(ValueError):
    def __init__(self, errors: Sequence[OpError]):
        self.errors = list(errors)
        shown = "; ".join(str(e) for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"batch rejected, {len(self.errors)} bad ops: {shown}{more}")


@dataclass(frozen=True)
class EdgeBatch:
    ops: tuple[tuple[str, int, int], ...] = ()

    @classmethod
    def of(cls, inserts: Iterable[tuple[int, int]] = (), deletes: Iterable[tuple[int, int]] = ()) -> "EdgeBatch":
        ops = [(INSERT, int(a), int(b)) for a, b in inserts]
        ops += [(DELETE, int(a), int(b)) for a, b in deletes]
        return cls(tuple(ops))

    def __len__(self) -> int:
        return len(self.ops)


_BATCH_LINE = re.compile(r"^([+-])\s+(\d+)\s+(\d+)$")


def parse_batch(text: str, source: str = "<input>") -> EdgeBatch:
    """Parse ``+ src dst`` / ``- src dst`` lines; ``#`` starts a comment."""
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _BATCH_LINE.match(line)
        if m is None:
            raise ParseError(lineno, f"expected '+ src dst' or '- src dst', got {raw.strip()!r}", source)
        ops.append((m.group(1), int(m.group(2)), int(m.group(3))))
    return EdgeBatch(tuple(ops))


def format_batch(batch: EdgeBatch) -> str:
    return "".join(f"{op} {s} {d}\n" for op, s, d in batch.ops)


@dataclass(frozen=True)
class VertexEntry:
    vertex: int
    edges: CTree
    versions: tuple[tuple[int, CTree], ...] = ()
    bounds: Optional[tuple[int, int]] = None

    @property
    def degree(self) -> int:
        return self.edges.size

    @property
    def triplet_count(self) -> int:
        return sum(t.size for _, t in self.versions)


@dataclass(frozen=True)
class TreeConfig:
    edges: ChunkParams = ChunkParams()
    walks: ChunkParams = ChunkParams()


@dataclass(frozen=True)
class Adjacency:
    """Flat read-only view of a snapshot's graph, for bulk samplers."""

    vertices: np.ndarray
    indptr: np.ndarray
    nbrs: np.ndarray
    keys: np.ndarray
    lookup: Optional[np.ndarray] = None

    def rows(self, v: np.ndarray) -> np.ndarray:
        """Row index of each vertex id; -1 where absent."""
        v = np.asarray(v, dtype=np.int64)
        if len(self.vertices) == 0:
            return np.full(v.shape, -1, dtype=np.int64)
        if self.lookup is not None:
            inside = (v >= 0) & (v < len(self.lookup))
            return np.where(inside, self.lookup[np.where(inside, v, 0)], -1)
        r = np.minimum(np.searchsorted(self.vertices, v), len(self.vertices) - 1)
        return np.where(self.vertices[r] == v, r, -1)

    def degrees(self, v: np.ndarray) -> np.ndarray:
        r = self.rows(v)
        safe = np.maximum(r, 0)
        d = self.indptr[safe + 1] - self.indptr[safe]
        return np.where(r >= 0, d, 0)

    def neighbors(self, v: int) -> np.ndarray:
        r = int(self.rows(np.array([v]))[0])
        if r < 0:
            return np.empty(0, dtype=np.int64)
        return self.nbrs[self.indptr[r]:self.indptr[r + 1]]

    def has_edges(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        k = (np.asarray(u, dtype=np.int64) << 32) | np.asarray(v, dtype=np.int64)
        if len(self.keys) == 0:
            return np.zeros(k.shape, dtype=bool)
        i = np.minimum(np.searchsorted(self.keys, k), len(self.keys) - 1)
        return self.keys[i] == k


class GraphSnapshot:
    """Immutable handle on a vertex-tree root plus its counters."""

    __slots__ = ("root", "epoch", "n", "m", "config", "walk_length", "_adj")

    def __init__(self, root, epoch: int, n: int, m: int, config: TreeConfig, walk_length: int = 0):
        self.root = root
        self.epoch = epoch
        self.n = n
        self.m = m
        self.config = config
        self.walk_length = walk_length
        self._adj = None

    def replace(self, **kw) -> "GraphSnapshot":
        args = dict(root=self.root, epoch=self.epoch, n=self.n, m=self.m, config=self.config,
                    walk_length=self.walk_length)
        args.update(kw)
        out = GraphSnapshot(**args)
        if out.root is self.root:
            out._adj = self._adj
        return out

    def entry(self, v: int) -> VertexEntry:
        e = pftree.map_get(self.root, v)
        if e is None:
            raise VertexNotFound(v)
        return e

    def get(self, v: int) -> Optional[VertexEntry]:
        return pftree.map_get(self.root, v)

    def __contains__(self, v: int) -> bool:
        return pftree.map_get(self.root, v) is not None

    def entries(self) -> Iterator[VertexEntry]:
        for _, e in pftree.map_items(self.root):
            yield e

    def vertices(self) -> list[int]:
        return [k for k, _ in pftree.map_items(self.root)]

    def adjacency(self) -> Adjacency:
        if self._adj is None:
            self._adj = _build_adjacency(self)
        return self._adj

    def __repr__(self) -> str:
        return f"GraphSnapshot(epoch={self.epoch}, n={self.n}, m={self.m})"


def _build_adjacency(s: GraphSnapshot) -> Adjacency:
    ents = list(s.entries())
    verts = np.array([e.vertex for e in ents], dtype=np.int64)
    vals, off = ctree.arrays_many([e.edges for e in ents])
    nbrs = vals.astype(np.int64)
    deg = np.diff(off)
    keys = (np.repeat(verts, deg) << 32) | nbrs
    lookup = None
    if len(verts) and int(verts[-1]) < 4 * len(verts) + (1 << 20):
        lookup = np.full(int(verts[-1]) + 1, -1, dtype=np.int64)
        lookup[verts] = np.arange(len(verts))
    return Adjacency(verts, off, nbrs, keys, lookup)


def empty_snapshot(config: TreeConfig = TreeConfig()) -> GraphSnapshot:
    return GraphSnapshot(None, 0, 0, 0, config)


def from_edges(edges: Iterable[tuple[int, int]], config: TreeConfig = TreeConfig()) -> GraphSnapshot:
    """Snapshot of an undirected simple graph; duplicates collapse, self-loops are rejected."""
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return empty_snapshot(config)
    if np.any(arr < 0) or np.any(arr >= OPERAND_LIMIT):
        raise ValueError("vertex ids must lie in [0, 2^32)")
    loops = np.flatnonzero(arr[:, 0] == arr[:, 1])
    if loops.size:
        bad = [OpError(int(i), INSERT, int(arr[i, 0]), int(arr[i, 1]), "self-loop") for i in loops]
        raise BatchRejected(bad)
    src = np.concatenate([arr[:, 0], arr[:, 1]])
    dst = np.concatenate([arr[:, 1], arr[:, 0]])
    keys = np.unique((src << 32) | dst)
    src = keys >> 32
    dst = keys & 0xFFFFFFFF
    verts, starts = np.unique(src, return_index=True)
    off = np.append(starts, len(src))
    trees = ctree.build_many(dst.astype(np.uint64), off, config.edges)
    root = pftree.map_build([(int(v), VertexEntry(int(v), t)) for v, t in zip(verts.tolist(), trees)])
    return GraphSnapshot(root, 0, len(verts), len(keys) // 2, config)


def neighbors(s: GraphSnapshot, v: int) -> list[int]:
    return s.entry(v).edges.to_list()


def degree(s: GraphSnapshot, v: int) -> int:
    e = s.get(v)
    return 0 if e is None else e.edges.size


def has_edge(s: GraphSnapshot, u: int, v: int) -> bool:
    e = s.get(u)
    return e is not None and ctree.contains(e.edges, v)


# -- affected walks ---------------------------------------------------------


@dataclass(frozen=True)
class MAV:
    """Affected walks of one batch: walk id -> (first affected vertex, its position)."""

    walks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    vertices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    positions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    added_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    removed_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.walks)

    def as_dict(self) -> dict[int, tuple[int, int]]:
        return {w: (v, p) for w, v, p in zip(self.walks.tolist(), self.vertices.tolist(), self.positions.tolist())}

    def same_entries(self, other: "MAV") -> bool:
        return (
            np.array_equal(self.walks, other.walks)
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.positions, other.positions)
        )


def min_position_per_walk(w: np.ndarray, p: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep, for each walk id, the occurrence with the smallest position."""
    if w.size == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, e
    best = np.full(int(w.max()) + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(best, w, p)
    hit = np.flatnonzero(p == best[w])
    order = hit[np.argsort(w[hit], kind="stable")]
    ws = w[order]
    keep = np.ones(ws.size, dtype=bool)
    keep[1:] = ws[1:] != ws[:-1]
    sel = order[keep]
    return w[sel], v[sel], p[sel]


def valid_triplet_mask(w: np.ndarray, p: np.ndarray, epochs: np.ndarray, log) -> np.ndarray:
    """Triplet ``(w, p)`` written at epoch ``e`` survives unless a later cut reaches ``p``."""
    valid = np.ones(w.shape, dtype=bool)
    if log is None or w.size == 0:
        return valid
    size = int(w.max()) + 1
    for e in np.unique(epochs).tolist():
        m = epochs == e
        cut = log.cut_table(e, size)
        valid[m] = p[m] < cut[w[m]]
    return valid


def decode_vertices(s: GraphSnapshot, verts: Iterable[int], log=None):
    """Decoded valid triplets of ``verts``: arrays (owner, walk, position, next)."""
    trees, epochs, owners = [], [], []
    for v in verts:
        e = pftree.map_get(s.root, v)
        if e is None:
            continue
        for ep, t in e.versions:
            trees.append(t)
            epochs.append(ep)
            owners.append(v)
    empty = np.empty(0, dtype=np.int64)
    if not trees or s.walk_length == 0:
        return empty, empty, empty, empty
    vals, off = ctree.arrays_many(trees)
    w, p, nxt = decode_triplets(vals, s.walk_length)
    sizes = np.diff(off)
    ep = np.repeat(np.asarray(epochs, dtype=np.int64), sizes)
    own = np.repeat(np.asarray(owners, dtype=np.int64), sizes)
    ok = valid_triplet_mask(w, p, ep, log)
    return own[ok], w[ok], p[ok], nxt[ok]


# -- batch application -----------------------------------------------------


def _validate(s: GraphSnapshot, batch: EdgeBatch):
    errors: list[OpError] = []
    wanted: dict[tuple[int, int], tuple[str, int]] = {}
    for i, (op, a, b) in enumerate(batch.ops):
        if op not in (INSERT, DELETE):
            errors.append(OpError(i, str(op), a, b, "unknown op"))
            continue
        if not (0 <= a < OPERAND_LIMIT and 0 <= b < OPERAND_LIMIT):
            errors.append(OpError(i, op, a, b, "vertex id outside [0, 2^32)"))
            continue
        if a == b:
            errors.append(OpError(i, op, a, b, "self-loop"))
            continue
        key = (a, b) if a < b else (b, a)
        prev = wanted.get(key)
        if prev is not None:
            if prev[0] != op:
                errors.append(OpError(i, op, a, b, f"conflicts with op {prev[1]} on the same edge"))
            continue
        wanted[key] = (op, i)
        present = has_edge(s, a, b)
        if op == INSERT and present:
            errors.append(OpError(i, op, a, b, "edge already present"))
        elif op == DELETE and not present:
            errors.append(OpError(i, op, a, b, "edge absent"))
    if errors:
        raise BatchRejected(errors)
    ins = [k for k, (op, _) in wanted.items() if op == INSERT]
    dels = [k for k, (op, _) in wanted.items() if op == DELETE]
    return ins, dels


def _directed(pairs: list[tuple[int, int]]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for a, b in pairs:
        out.setdefault(a, []).append(b)
        out.setdefault(b, []).append(a)
    for v in out:
        out[v].sort()
    return out


def apply_edge_batch(s: GraphSnapshot, batch: EdgeBatch, log=None) -> tuple[GraphSnapshot, MAV]:
    """Apply a validated batch; returns the new snapshot and the affected walks.

    All-or-nothing: any bad op raises ``BatchRejected`` listing every
    problem and leaves ``s`` untouched.  The epoch is not advanced here;
    the walk updater stamps it.
    """
    ins, dels = _validate(s, batch)
    if not ins and not dels:
        return s, MAV()
    add = _directed(ins)
    rem = _directed(dels)
    touched = sorted(set(add) | set(rem))

    own, w, p, _ = decode_vertices(s, touched, log)
    mw, mv, mp = min_position_per_walk(w, p, own)

    updates = []
    added, removed = [], []
    n, m = s.n, s.m + len(ins) - len(dels)
    for v in touched:
        e = pftree.map_get(s.root, v)
        if e is None:
            t = ctree.build(add[v], s.config.edges)
            updates.append((v, VertexEntry(v, t)))
            added.append(v)
            n += 1
            continue
        t = e.edges
        if v in add:
            t = ctree.multi_insert(t, add[v])
        if v in rem:
            t = ctree.multi_delete(t, rem[v])
        if t.size == 0:
            updates.append((v, None))
            removed.append(v)
            n -= 1
        else:
            updates.append((v, VertexEntry(v, t, e.versions, e.bounds)))
    root = pftree.map_update(s.root, updates)
    mav = MAV(mw, mv, mp, np.asarray(added, dtype=np.int64), np.asarray(removed, dtype=np.int64))
    return s.replace(root=root, n=n, m=m), mav


# -- walk versions ----------------------------------------------------------


def _widen(bounds, lo: int, hi: int):
    if bounds is None:
        return (lo, hi)
    return (min(bounds[0], lo), max(bounds[1], hi))


def push_walk_version(s: GraphSnapshot, v: int, epoch: int, triples) -> GraphSnapshot:
    """Append a version holding sorted encoded ``triples`` to vertex ``v``."""
    vals = ctree._checked(triples)
    if not vals:
        return s
    e = s.entry(v)
    if e.versions and e.versions[-1][0] >= epoch:
        raise ValueError(f"epoch {epoch} is not newer than vertex {v}'s last version")
    t = ctree.build(vals, s.config.walks)
    _, _, nxt = decode_triplets(np.asarray(vals, dtype=np.uint64), s.walk_length)
    ne = VertexEntry(v, e.edges, e.versions + ((epoch, t),), _widen(e.bounds, int(nxt.min()), int(nxt.max())))
    return s.replace(root=pftree.map_update(s.root, [(v, ne)]))


def push_versions(s: GraphSnapshot, epoch: int, verts: np.ndarray, trees: Sequence[CTree],
                  lo: np.ndarray, hi: np.ndarray) -> GraphSnapshot:
    """Bulk form of ``push_walk_version`` for sorted distinct ``verts``."""
    updates = []
    for v, t, a, b in zip(verts.tolist(), trees, lo.tolist(), hi.tolist()):
        e = pftree.map_get(s.root, v)
        if e is None:
            raise VertexNotFound(v)
        updates.append((v, VertexEntry(v, e.edges, e.versions + ((epoch, t),), _widen(e.bounds, a, b))))
    return s.replace(root=pftree.map_update(s.root, updates))


def replace_versions(s: GraphSnapshot, verts: np.ndarray, trees: Sequence[Optional[CTree]],
                     epochs: Sequence[int], bounds: Sequence[Optional[tuple[int, int]]]) -> GraphSnapshot:
    """Install a single version (or none, for ``None``) per listed vertex."""
    updates = []
    for v, t, ep, bd in zip(verts.tolist(), trees, epochs, bounds):
        e = pftree.map_get(s.root, v)
        if e is None:
            raise VertexNotFound(v)
        versions = () if t is None or t.size == 0 else ((ep, t),)
        updates.append((v, VertexEntry(v, e.edges, versions, bd if versions else None)))
    return s.replace(root=pftree.map_update(s.root, updates))


def walk_store_bytes(s: GraphSnapshot) -> int:
    """Payload bytes of every walk-tree version plus 16 bytes of bounds per vertex holding walks."""
    total = 0
    for e in s.entries():
        if e.versions:
            total += 16 + sum(ctree.payload_bytes(t) for _, t in e.versions)
    return total


def graph_bytes(s: GraphSnapshot) -> int:
    return sum(8 + ctree.payload_bytes(e.edges) for e in s.entries())
