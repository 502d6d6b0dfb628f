"""Compressed purely-functional ordered sets of 64-bit integers.

Elements whose hash is divisible by ``b`` become heads.  Heads live in a
weight-balanced binary tree; each head owns the run of non-head elements
that follow it (its tail), stored as a delta/varint chunk.  Elements smaller
than every head form a headless prefix chunk.  Every update returns a new
tree and shares untouched nodes with the old one.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import pftree
from .codec import (
    ChunkBytes,
    ContractViolation,
    CorruptChunk,
    compress_chunk,
    decompress_chunk,
    decode_varints,
    encode_varints,
    put_varint,
    segmented_prefix_sum,
)
from .hashing import MASK64, mix64, mix64_array

__all__ = [
    "ChunkParams",
    "CTree",
    "ScanStats",
    "build",
    "multi_insert",
    "multi_delete",
    "range_iterate",
    "range_scan",
    "iterate",
    "contains",
    "build_many",
    "arrays_many",
    "dumps",
    "loads",
    "payload_bytes",
    "max_chunk_size",
    "head_count",
]


@dataclass(frozen=True)
class ChunkParams:
    b: int = 32
    hash_seed: int = 0
    compress: bool = True

    def __post_init__(self):
        if self.b < 1:
            raise ValueError(f"chunking parameter b must be >= 1, got {self.b}")
        if not 0 <= self.hash_seed <= MASK64:
            raise ValueError("hash_seed must fit in 64 bits")

    def is_head(self, x: int) -> bool:
        return self.b == 1 or mix64(x ^ self.hash_seed) % self.b == 0

    def head_mask(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.uint64)
        if self.b == 1:
            return np.ones(xs.shape, dtype=bool)
        h = mix64_array(xs ^ np.uint64(self.hash_seed))
        return h % np.uint64(self.b) == 0


class _Chunk:
    """Tree node: a head plus its encoded tail, with subtree aggregates."""

    __slots__ = ("left", "right", "w", "n", "nb", "mc", "lo", "hi", "head", "tail", "tail_n", "last")

    def __init__(self, left, head, tail, tail_n, last, right):
        self.left = left
        self.right = right
        self.head = head
        self.tail = tail
        self.tail_n = tail_n
        self.last = last
        w = 1
        n = 1 + tail_n
        nb = 16 + len(tail)
        mc = n
        if left is not None:
            w += left.w
            n += left.n
            nb += left.nb
            if left.mc > mc:
                mc = left.mc
            self.lo = left.lo
        else:
            self.lo = head
        if right is not None:
            w += right.w
            n += right.n
            nb += right.nb
            if right.mc > mc:
                mc = right.mc
            self.hi = right.hi
        else:
            self.hi = last
        self.w = w
        self.n = n
        self.nb = nb
        self.mc = mc


def _mk(l, c, r):
    return _Chunk(l, c.head, c.tail, c.tail_n, c.last, r)


class CTree:
    """Immutable handle: params, optional prefix chunk and the head tree."""

    __slots__ = ("params", "root", "prefix", "prefix_n", "prefix_first", "prefix_last")

    def __init__(self, params: ChunkParams, root=None, prefix: bytes = b"", prefix_n: int = 0,
                 prefix_first: int = 0, prefix_last: int = 0):
        self.params = params
        self.root = root
        self.prefix = prefix
        self.prefix_n = prefix_n
        self.prefix_first = prefix_first
        self.prefix_last = prefix_last

    @property
    def size(self) -> int:
        return self.prefix_n + (self.root.n if self.root is not None else 0)

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[int]:
        return _iter_all(self)

    def __contains__(self, x) -> bool:
        return contains(self, x)

    def to_list(self) -> list[int]:
        return list(_iter_all(self))

    def __repr__(self) -> str:
        return f"CTree(size={self.size}, heads={head_count(self)}, b={self.params.b})"


# -- chunk encoding helpers -------------------------------------------------


def _enc(vals: Sequence[int], P: ChunkParams) -> bytes:
    if not vals:
        return b""
    if P.compress:
        return compress_chunk(vals).data
    return struct.pack(f"<{len(vals)}Q", *vals)


def _dec(data: bytes, n: int, P: ChunkParams) -> list[int]:
    if n == 0:
        if data:
            raise CorruptChunk(f"{len(data)} bytes in an empty chunk")
        return []
    if not P.compress:
        if len(data) != 8 * n:
            raise CorruptChunk(f"raw chunk of {len(data)} bytes cannot hold {n} values")
        return list(struct.unpack(f"<{n}Q", data))
    return decompress_chunk(ChunkBytes(data, n))


def _leaf(head: int, tail: list[int], P: ChunkParams) -> _Chunk:
    return _Chunk(None, head, _enc(tail, P), len(tail), tail[-1] if tail else head, None)


_BULK = 64  # below this, per-element hashing beats numpy call overhead


def _split_heads(vals: Iterable[int], P: ChunkParams) -> tuple[list[int], list[tuple[int, list[int]]]]:
    """Split a sorted run into (elements before the first head, [(head, tail)])."""
    if isinstance(vals, list) and len(vals) >= _BULK:
        idx = np.flatnonzero(P.head_mask(np.asarray(vals, dtype=np.uint64))).tolist()
        if not idx:
            return list(vals), []
        bounds = idx + [len(vals)]
        return vals[:idx[0]], [(vals[a], vals[a + 1:b]) for a, b in zip(idx, bounds[1:])]
    return _split_heads_scalar(vals, P)


def _split_heads_scalar(vals: Iterable[int], P: ChunkParams) -> tuple[list[int], list[tuple[int, list[int]]]]:
    pre: list[int] = []
    chunks: list[tuple[int, list[int]]] = []
    cur = pre
    is_head = P.is_head
    for x in vals:
        if is_head(x):
            cur = []
            chunks.append((x, cur))
        else:
            cur.append(x)
    return pre, chunks


def _build_chunks(chunks, P: ChunkParams):
    return pftree.build([_leaf(h, t, P) for h, t in chunks], _mk)


def _with_prefix(P: ChunkParams, pre: list[int], root) -> CTree:
    if not pre:
        return CTree(P, root)
    return CTree(P, root, _enc(pre, P), len(pre), pre[0], pre[-1])


def _checked(xs) -> list[int]:
    if isinstance(xs, np.ndarray):
        xs = xs.tolist()
    out = [int(x) for x in xs]
    prev = -1
    for x in out:
        if x <= prev:
            raise ContractViolation("input must be strictly increasing")
        prev = x
    if out and (out[0] < 0 or out[-1] > MASK64):
        raise ContractViolation("elements must be unsigned 64-bit integers")
    return out


def _union(a: list[int], b: list[int]) -> list[int]:
    if not a:
        return list(b)
    return sorted(set(a).union(b))


def _difference(a: list[int], b: list[int]) -> list[int]:
    drop = set(b)
    return [x for x in a if x not in drop]


# -- construction and batch updates ----------------------------------------


def build(elements, params: ChunkParams = ChunkParams()) -> CTree:
    vals = _checked(elements)
    if len(vals) >= _BULK:
        return build_many(np.asarray(vals, dtype=np.uint64), np.array([0, len(vals)]), params)[0]
    return _build_scalar(vals, params)


def _build_scalar(vals: list[int], P: ChunkParams) -> CTree:
    """Element-at-a-time construction; the reference the bulk path must reproduce."""
    pre, chunks = _split_heads_scalar(vals, P)
    return _with_prefix(P, pre, _build_chunks(chunks, P))


def multi_insert(t: CTree, xs) -> CTree:
    """Union of ``t`` with sorted ``xs``; ``t`` itself is left untouched."""
    xs = _checked(xs)
    if not xs:
        return t
    P = t.params
    root = t.root
    cut = len(xs) if root is None else bisect_left(xs, root.lo)
    xpre, xrest = xs[:cut], xs[cut:]
    if xrest:
        root = _ins(root, xrest, P)
    if xpre:
        merged = _union(_dec(t.prefix, t.prefix_n, P), xpre)
        if len(merged) == t.prefix_n and root is t.root:
            return t
        pre, chunks = _split_heads(merged, P)
        if chunks:
            root = pftree.concat(_build_chunks(chunks, P), root, _mk)
        return _with_prefix(P, pre, root)
    if root is t.root:
        return t
    return CTree(P, root, t.prefix, t.prefix_n, t.prefix_first, t.prefix_last)


def _ins(node: _Chunk, xs: list[int], P: ChunkParams) -> _Chunk:
    # precondition: xs non-empty and every x >= node.lo
    i = bisect_left(xs, node.head)
    xl = xs[:i]
    rest = xs[i:]
    if rest and rest[0] == node.head:
        rest = rest[1:]
    r = node.right
    if r is not None:
        j = bisect_left(rest, r.lo)
        xin, xr = rest[:j], rest[j:]
    else:
        xin, xr = rest, []
    L = _ins(node.left, xl, P) if xl else node.left
    R = _ins(r, xr, P) if xr else r
    if xin:
        merged = _union(_dec(node.tail, node.tail_n, P), xin)
        if len(merged) != node.tail_n:
            own, chunks = _split_heads(merged, P)
            if chunks:
                R = pftree.concat(_build_chunks(chunks, P), R, _mk)
            return pftree.join(L, _leaf(node.head, own, P), R, _mk)
    if L is node.left and R is node.right:
        return node
    return pftree.join(L, node, R, _mk)


def multi_delete(t: CTree, xs) -> CTree:
    """Set difference ``t - xs``; ``t`` itself is left untouched."""
    xs = _checked(xs)
    if not xs or t.size == 0:
        return t
    P = t.params
    root = t.root
    cut = len(xs) if root is None else bisect_left(xs, root.lo)
    xpre, xrest = xs[:cut], xs[cut:]
    orphans: list[int] = []
    if xrest and root is not None:
        orphans, root = _del(root, xrest, P)
    pre_changed = False
    pre = None
    if xpre and t.prefix_n and xpre[0] <= t.prefix_last and xpre[-1] >= t.prefix_first:
        pre = _difference(_dec(t.prefix, t.prefix_n, P), xpre)
        pre_changed = len(pre) != t.prefix_n
    if orphans:
        if pre is None:
            pre = _dec(t.prefix, t.prefix_n, P)
        pre = pre + orphans
        pre_changed = True
    if not pre_changed:
        if root is t.root:
            return t
        return CTree(P, root, t.prefix, t.prefix_n, t.prefix_first, t.prefix_last)
    return _with_prefix(P, pre, root)


def _append_max(t: _Chunk, vals: list[int], P: ChunkParams) -> _Chunk:
    """Append ``vals`` (all greater than the subtree) to its last chunk."""
    if t.right is not None:
        return _Chunk(t.left, t.head, t.tail, t.tail_n, t.last, _append_max(t.right, vals, P))
    tail = _dec(t.tail, t.tail_n, P) + vals
    return _Chunk(t.left, t.head, _enc(tail, P), len(tail), tail[-1], None)


def _del(node: _Chunk, xs: list[int], P: ChunkParams):
    """Return ``(orphans, subtree)``.

    Orphans are surviving tail elements of a deleted minimum head that have
    no chunk left in this subtree to join; the caller attaches them to the
    chunk immediately preceding the subtree.
    """
    i = bisect_left(xs, node.head)
    xl = xs[:i]
    rest = xs[i:]
    hit = bool(rest) and rest[0] == node.head
    if hit:
        rest = rest[1:]
    r = node.right
    if r is not None:
        j = bisect_left(rest, r.lo)
        xin, xr = rest[:j], rest[j:]
    else:
        xin, xr = rest, []
    orph_l, L = _del(node.left, xl, P) if xl and node.left is not None else ([], node.left)
    orph_r, R = _del(r, xr, P) if xr and r is not None else ([], r)

    tail = None
    if xin and node.tail_n and xin[0] <= node.last:
        tail = _difference(_dec(node.tail, node.tail_n, P), xin)
        if len(tail) == node.tail_n:
            tail = None
    if orph_r:
        tail = (tail if tail is not None else _dec(node.tail, node.tail_n, P)) + orph_r

    if hit:
        if tail is None:
            tail = _dec(node.tail, node.tail_n, P)
        if L is None:
            return orph_l + tail, R
        if tail:
            L = _append_max(L, tail, P)
        return orph_l, pftree.concat(L, R, _mk)
    if tail is not None:
        return orph_l, pftree.join(L, _leaf(node.head, tail, P), R, _mk)
    if L is node.left and R is node.right:
        return orph_l, node
    return orph_l, pftree.join(L, node, R, _mk)


# -- reads ------------------------------------------------------------------


@dataclass
class ScanStats:
    """Instrumentation for range scans."""

    decoded: int = 0
    chunks: int = 0


def _iter_all(t: CTree) -> Iterator[int]:
    P = t.params
    yield from _dec(t.prefix, t.prefix_n, P)
    for node in pftree.in_order(t.root):
        yield node.head
        yield from _dec(node.tail, node.tail_n, P)


def range_scan(t: CTree, lb: int, ub: int, stats: Optional[ScanStats] = None) -> Iterator[int]:
    """Yield elements in ``[lb, ub]`` in order, skipping chunks that cannot overlap."""
    st = stats if stats is not None else ScanStats()
    if lb > ub:
        return
    P = t.params
    if t.prefix_n and t.prefix_last >= lb:
        if t.prefix_first > ub:
            return
        st.chunks += 1
        st.decoded += t.prefix_n
        for x in _dec(t.prefix, t.prefix_n, P):
            if x > ub:
                return
            if x >= lb:
                yield x
    stack: list[_Chunk] = []
    node = t.root
    while True:
        while node is not None:
            if node.hi < lb:
                break
            if node.lo > ub:
                return
            stack.append(node)
            node = node.left
        if not stack:
            return
        node = stack.pop()
        if node.head > ub:
            return
        if node.last >= lb:
            st.chunks += 1
            st.decoded += 1 + node.tail_n
            if node.head >= lb:
                yield node.head
            for x in _dec(node.tail, node.tail_n, P):
                if x > ub:
                    return
                if x >= lb:
                    yield x
        node = node.right


def range_iterate(t: CTree, lb: int, ub: int, visit: Optional[Callable[[int], object]] = None,
                  stats: Optional[ScanStats] = None) -> int:
    """Visit elements of ``[lb, ub]``; a visitor returning ``True`` stops the scan.

    Returns the number of elements decoded, which includes elements read
    from overlapping chunks that fall outside the range.
    """
    st = stats if stats is not None else ScanStats()
    for x in range_scan(t, lb, ub, st):
        if visit is not None and visit(x) is True:
            break
    return st.decoded


def iterate(t: CTree, visit: Callable[[int], object]) -> None:
    for x in _iter_all(t):
        visit(x)


def contains(t: CTree, x: int) -> bool:
    x = int(x)
    node = t.root
    best = None
    while node is not None:
        if node.head <= x:
            best = node
            node = node.right
        else:
            node = node.left
    if best is None:
        if t.prefix_n == 0 or x < t.prefix_first or x > t.prefix_last:
            return False
        return x in _dec(t.prefix, t.prefix_n, t.params)
    if best.head == x:
        return True
    if x > best.last:
        return False
    return x in _dec(best.tail, best.tail_n, t.params)


def head_count(t: CTree) -> int:
    return pftree.weight(t.root)


def max_chunk_size(t: CTree) -> int:
    return max(t.prefix_n, t.root.mc if t.root is not None else 0)


def payload_bytes(t: CTree) -> int:
    """Stored bytes: 8 per head, 8 per cached chunk end, plus chunk bytes."""
    nb = t.root.nb if t.root is not None else 0
    if t.prefix_n:
        nb += len(t.prefix) + 16
    return nb


# -- bulk paths -------------------------------------------------------------


def _build_range(heads, lasts, pcount, blo, bhi, data, lo, hi):
    if lo >= hi:
        return None
    mid = (lo + hi) // 2
    return _Chunk(
        _build_range(heads, lasts, pcount, blo, bhi, data, lo, mid),
        heads[mid],
        data[blo[mid]:bhi[mid]],
        pcount[mid],
        lasts[mid],
        _build_range(heads, lasts, pcount, blo, bhi, data, mid + 1, hi),
    )


def build_many(values: np.ndarray, offsets: np.ndarray, params: ChunkParams = ChunkParams()) -> list[CTree]:
    """Build one tree per segment ``values[offsets[i]:offsets[i+1]]``.

    Produces exactly the trees ``build`` would, with the hashing, delta and
    varint work done in bulk.
    """
    P = params
    v = np.ascontiguousarray(values, dtype=np.uint64)
    off = np.asarray(offsets, dtype=np.int64)
    k = len(off) - 1
    N = len(v)
    if k < 0 or (k >= 0 and (off[0] != 0 or off[-1] != N)) or np.any(np.diff(off) < 0):
        raise ContractViolation("offsets must run from 0 to len(values) and be nondecreasing")
    if N == 0:
        return [CTree(P) for _ in range(k)]
    seg_start = np.zeros(N, dtype=bool)
    nonempty = off[:-1][off[:-1] < off[1:]]
    seg_start[nonempty] = True
    if N > 1 and np.any((v[1:] <= v[:-1]) & ~seg_start[1:]):
        raise ContractViolation("each segment must be strictly increasing")

    ish = P.head_mask(v)
    cstart = ish | seg_start
    cidx = np.flatnonzero(cstart)
    clen = np.diff(np.append(cidx, N))
    chead = ish[cidx]
    clast = v[cidx + clen - 1]

    pay = ~ish
    pcount = clen - chead.astype(np.int64)
    pstart = np.cumsum(pcount) - pcount
    if P.compress:
        prev_head = np.zeros(N, dtype=bool)
        prev_head[1:] = ish[:-1]
        first = pay & (cstart | prev_head)
        d = np.empty_like(v)
        d[0] = v[0]
        np.subtract(v[1:], v[:-1], out=d[1:])
        d[first] = v[first]
        buf, bstarts = encode_varints(d[pay])
        boff = np.append(bstarts, len(buf))
    else:
        raw = v[pay]
        buf = raw.astype("<u8").view(np.uint8)
        boff = np.arange(len(raw) + 1, dtype=np.int64) * 8
    blo = boff[pstart].tolist()
    bhi = boff[pstart + pcount].tolist()
    data = buf.tobytes()

    first_vals = v[cidx].tolist()
    lasts = clast.tolist()
    pc = pcount.tolist()
    hd = chead.tolist()
    bounds = np.searchsorted(cidx, off).tolist()

    trees = []
    for s in range(k):
        a, b = bounds[s], bounds[s + 1]
        if a == b:
            trees.append(CTree(P))
            continue
        prefix, pn, pf, pl = b"", 0, 0, 0
        if not hd[a]:
            prefix, pn, pf, pl = data[blo[a]:bhi[a]], pc[a], first_vals[a], lasts[a]
            a += 1
        root = _build_range(first_vals, lasts, pc, blo, bhi, data, a, b)
        trees.append(CTree(P, root, prefix, pn, pf, pl))
    return trees


def _nodes_in_order(root) -> list[_Chunk]:
    out: list[_Chunk] = []
    push = out.append

    # recursion depth is the tree height, O(log n)
    def walk(n):
        if n.left is not None:
            walk(n.left)
        push(n)
        if n.right is not None:
            walk(n.right)

    if root is not None:
        walk(root)
    return out


def arrays_many(trees: Sequence[CTree]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated contents of ``trees`` as uint64 plus segment offsets."""
    if not trees:
        return np.empty(0, dtype=np.uint64), np.zeros(1, dtype=np.int64)
    compress = trees[0].params.compress
    # one entry per chunk; the prefix run (if any) is a chunk without a head
    has_head: list[bool] = []
    heads: list[int] = []
    blobs: list[bytes] = []
    counts: list[int] = []
    sizes: list[int] = []
    for t in trees:
        if t.params.compress != compress:
            raise ContractViolation("arrays_many needs a single chunk encoding")
        nodes = _nodes_in_order(t.root)
        if t.prefix_n:
            has_head.append(False)
            heads.append(0)
            blobs.append(t.prefix)
            counts.append(t.prefix_n)
        has_head.extend([True] * len(nodes))
        heads.extend([n.head for n in nodes])
        blobs.extend([n.tail for n in nodes])
        counts.extend([n.tail_n for n in nodes])
        sizes.append(t.size)
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    total = int(offsets[-1])
    out = np.empty(total, dtype=np.uint64)
    if total == 0:
        return out, offsets
    hh = np.asarray(has_head, dtype=bool)
    pc = np.asarray(counts, dtype=np.int64)
    cl = pc + hh
    hpos = (np.cumsum(cl) - cl)[hh]
    mask = np.zeros(total, dtype=bool)
    mask[hpos] = True
    out[hpos] = np.asarray(heads, dtype=np.uint64)[hh]
    blob = b"".join(blobs)
    if compress:
        payload = segmented_prefix_sum(decode_varints(blob), pc[pc > 0])
    else:
        payload = np.frombuffer(blob, dtype="<u8").astype(np.uint64)
    out[~mask] = payload
    return out, offsets


def to_array(t: CTree) -> np.ndarray:
    return arrays_many([t])[0]


# -- snapshot serialization -------------------------------------------------


def dumps(t: CTree) -> bytes:
    """Header, pre-order ``(head, left count, tail)`` records, then the prefix."""
    out = bytearray()
    P = t.params
    put_varint(out, t.size)
    put_varint(out, P.b)
    out += struct.pack("<Q", P.hash_seed)
    out.append(1 if P.compress else 0)
    put_varint(out, head_count(t))
    stack = [t.root] if t.root is not None else []
    while stack:
        node = stack.pop()
        put_varint(out, node.head)
        put_varint(out, pftree.weight(node.left))
        put_varint(out, node.tail_n)
        put_varint(out, len(node.tail))
        out += node.tail
        if node.right is not None:
            stack.append(node.right)
        if node.left is not None:
            stack.append(node.left)
    put_varint(out, t.prefix_n)
    put_varint(out, len(t.prefix))
    out += t.prefix
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.i = 0

    def varint(self) -> int:
        x = 0
        shift = 0
        data = self.data
        while True:
            if self.i >= len(data):
                raise CorruptChunk("truncated snapshot")
            b = data[self.i]
            self.i += 1
            x |= (b & 0x7F) << shift
            if b < 0x80:
                return x
            shift += 7

    def take(self, n: int) -> bytes:
        if self.i + n > len(self.data):
            raise CorruptChunk("truncated snapshot")
        out = self.data[self.i:self.i + n]
        self.i += n
        return out


def loads(data: bytes) -> CTree:
    rd = _Reader(bytes(data))
    size = rd.varint()
    b = rd.varint()
    (seed,) = struct.unpack("<Q", rd.take(8))
    flag = rd.take(1)[0]
    if flag > 1:
        raise CorruptChunk("bad compression flag")
    P = ChunkParams(b=b, hash_seed=seed, compress=bool(flag))
    nheads = rd.varint()

    def node(count):
        if count == 0:
            return None
        head = rd.varint()
        lc = rd.varint()
        if lc >= count:
            raise CorruptChunk("bad subtree count")
        tail_n = rd.varint()
        tail = rd.take(rd.varint())
        vals = _dec(tail, tail_n, P)
        if vals and vals[0] <= head:
            raise CorruptChunk("tail element not above its head")
        left = node(lc)
        right = node(count - 1 - lc)
        return _Chunk(left, head, tail, tail_n, vals[-1] if vals else head, right)

    root = node(nheads)
    pn = rd.varint()
    prefix = rd.take(rd.varint())
    if rd.i != len(rd.data):
        raise CorruptChunk("trailing bytes after snapshot")
    pre = _dec(prefix, pn, P)
    t = CTree(P, root, prefix, pn, pre[0] if pre else 0, pre[-1] if pre else 0)
    if t.size != size:
        raise CorruptChunk(f"snapshot declares {size} elements, holds {t.size}")
    return t
