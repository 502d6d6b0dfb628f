"""Join-based weight-balanced trees (Adams-style, delta=3 / gamma=2).

Nodes are immutable.  Every function here takes ``mk(left, carrier, right)``
which builds a new node holding the payload of ``carrier`` with the given
children, so the same balancing code serves any node layout as long as the
node exposes ``left``, ``right`` and ``w`` (node count of the subtree).
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Any, Callable, Iterator, Optional, Sequence

Node = Any
Maker = Callable[[Optional[Node], Node, Optional[Node]], Node]

_DELTA = 3
_GAMMA = 2


def weight(t: Optional[Node]) -> int:
    return t.w if t is not None else 0


def _balance(l, n, r, mk: Maker):
    lw = weight(l) + 1
    rw = weight(r) + 1
    if rw > _DELTA * lw:
        rl, rr = r.left, r.right
        if weight(rl) + 1 < _GAMMA * (weight(rr) + 1):
            return mk(mk(l, n, rl), r, rr)
        return mk(mk(l, n, rl.left), rl, mk(rl.right, r, rr))
    if lw > _DELTA * rw:
        ll, lr = l.left, l.right
        if weight(lr) + 1 < _GAMMA * (weight(ll) + 1):
            return mk(ll, l, mk(lr, n, r))
        return mk(mk(ll, l, lr.left), lr, mk(lr.right, n, r))
    return mk(l, n, r)


def _insert_min(n, t, mk: Maker):
    if t is None:
        return mk(None, n, None)
    return _balance(_insert_min(n, t.left, mk), t, t.right, mk)


def _insert_max(n, t, mk: Maker):
    if t is None:
        return mk(None, n, None)
    return _balance(t.left, t, _insert_max(n, t.right, mk), mk)


def join(l, n, r, mk: Maker):
    """Tree with all of ``l``, then ``n``'s payload, then all of ``r``."""
    if l is None:
        return _insert_min(n, r, mk)
    if r is None:
        return _insert_max(n, l, mk)
    lw = l.w + 1
    rw = r.w + 1
    if _DELTA * lw < rw:
        return _balance(join(l, n, r.left, mk), r, r.right, mk)
    if _DELTA * rw < lw:
        return _balance(l.left, l, join(l.right, n, r, mk), mk)
    return mk(l, n, r)


def pop_min(t, mk: Maker):
    """Return ``(min_node, rest)``."""
    if t.left is None:
        return t, t.right
    m, rest = pop_min(t.left, mk)
    return m, _balance(rest, t, t.right, mk)


def pop_max(t, mk: Maker):
    if t.right is None:
        return t, t.left
    m, rest = pop_max(t.right, mk)
    return m, _balance(t.left, t, rest, mk)


def concat(l, r, mk: Maker):
    """Join two trees where every key of ``l`` precedes every key of ``r``."""
    if l is None:
        return r
    if r is None:
        return l
    m, rest = pop_min(r, mk)
    return join(l, m, rest, mk)


def build(carriers: Sequence[Node], mk: Maker, lo: int = 0, hi: Optional[int] = None):
    """Perfectly balanced tree over already-sorted carriers."""
    if hi is None:
        hi = len(carriers)
    if lo >= hi:
        return None
    mid = (lo + hi) // 2
    return mk(build(carriers, mk, lo, mid), carriers[mid], build(carriers, mk, mid + 1, hi))


def in_order(t) -> Iterator[Node]:
    stack = []
    while stack or t is not None:
        while t is not None:
            stack.append(t)
            t = t.left
        t = stack.pop()
        yield t
        t = t.right


def height(t) -> int:
    if t is None:
        return 0
    return 1 + max(height(t.left), height(t.right))


def is_balanced(t) -> bool:
    if t is None:
        return True
    lw = weight(t.left) + 1
    rw = weight(t.right) + 1
    if lw > _DELTA * rw or rw > _DELTA * lw:
        return False
    return is_balanced(t.left) and is_balanced(t.right)


# -- keyed map (vertex-tree) ------------------------------------------------


class MapNode:
    __slots__ = ("left", "right", "w", "key", "value")

    def __init__(self, left, key, value, right):
        self.left = left
        self.right = right
        self.key = key
        self.value = value
        self.w = weight(left) + weight(right) + 1


def _mk_map(l, n, r):
    return MapNode(l, n.key, n.value, r)


def map_get(t: Optional[MapNode], key):
    while t is not None:
        if key < t.key:
            t = t.left
        elif t.key < key:
            t = t.right
        else:
            return t.value
    return None


def map_build(items: Sequence[tuple]) -> Optional[MapNode]:
    carriers = [MapNode(None, k, v, None) for k, v in items]
    return build(carriers, _mk_map)


def map_update(t: Optional[MapNode], items: Sequence[tuple]) -> Optional[MapNode]:
    """Apply sorted ``(key, value)`` items; a ``None`` value deletes the key."""
    keys = [k for k, _ in items]
    return _map_update(t, items, keys, 0, len(items))


def _map_update(t, items, keys, lo, hi):
    if lo >= hi:
        return t
    if t is None:
        live = [MapNode(None, k, v, None) for k, v in items[lo:hi] if v is not None]
        return build(live, _mk_map)
    i = bisect_left(keys, t.key, lo, hi)
    hit = i < hi and keys[i] == t.key
    left = _map_update(t.left, items, keys, lo, i)
    right = _map_update(t.right, items, keys, i + 1 if hit else i, hi)
    if hit:
        value = items[i][1]
        if value is None:
            return concat(left, right, _mk_map)
        return join(left, MapNode(None, t.key, value, None), right, _mk_map)
    if left is t.left and right is t.right:
        return t
    return join(left, t, right, _mk_map)


def map_items(t: Optional[MapNode]) -> Iterator[tuple]:
    for n in in_order(t):
        yield n.key, n.value
