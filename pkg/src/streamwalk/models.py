"""Walk transition models and their samplers.

Randomness is counter based: every draw is a pure function of
``(seed, walk, epoch, position, stream)``, so a walk step gives the same
result whether it is sampled alone, in a vectorized batch, or replayed
under another merge schedule.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ctree
from .hashing import GOLDEN, MASK64, mix64, mix64_array
from .hybrid import Adjacency, GraphSnapshot

STOP = -1

_U = np.uint64
_INV53 = 1.0 / (1 << 53)


class DeadEnd(LookupError):
    """The current vertex has no neighbors."""


@dataclass(frozen=True)
class WalkModel:
    kind: str = "deepwalk"
    p: float = 1.0
    q: float = 1.0
    alpha: float = 0.2

    def __post_init__(self):
        if self.kind not in ("deepwalk", "node2vec", "ppr"):
            raise ValueError(f"unknown walk model {self.kind!r}")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("node2vec p and q must be positive")
        if self.kind == "ppr" and not 0 < self.alpha < 1:
            raise ValueError("ppr alpha must lie in (0, 1)")

    @classmethod
    def deepwalk(cls) -> "WalkModel":
        return cls("deepwalk")

    @classmethod
    def node2vec(cls, p: float, q: float) -> "WalkModel":
        return cls("node2vec", p=float(p), q=float(q))

    @classmethod
    def ppr(cls, alpha: float = 0.2) -> "WalkModel":
        return cls("ppr", alpha=float(alpha))

    @property
    def order(self) -> int:
        return 2 if self.kind == "node2vec" else 1

    @property
    def bound(self) -> float:
        """Largest unnormalized node2vec weight, the rejection envelope."""
        return max(1.0 / self.p, 1.0, 1.0 / self.q)


@dataclass(frozen=True)
class SamplerState:
    current: int
    previous: Optional[int] = None
    walk: int = 0
    epoch: int = 0
    position: int = 0
    seed: int = 0


# -- counter-based randomness ----------------------------------------------


def _key(seed: int, walk: int, epoch: int, position: int) -> int:
    z = mix64((seed + GOLDEN) & MASK64)
    z = mix64(z ^ (walk & MASK64))
    z = mix64(z ^ (((epoch << 32) | position) & MASK64))
    return z


def draw(seed: int, walk: int, epoch: int, position: int, stream: int) -> float:
    """Uniform double in [0, 1)."""
    z = mix64((_key(seed, walk, epoch, position) + (stream + 1) * GOLDEN) & MASK64)
    return (z >> 11) * _INV53


def _keys(seed: int, walks: np.ndarray, epoch: int, position) -> np.ndarray:
    z = mix64((seed + GOLDEN) & MASK64)
    k = mix64_array(_U(z) ^ np.asarray(walks, dtype=np.int64).astype(_U))
    pos = np.asarray(position, dtype=np.int64).astype(_U)
    ep = _U(epoch & MASK64)
    return mix64_array(k ^ ((ep << _U(32)) | pos))


def draws(keys: np.ndarray, stream: int) -> np.ndarray:
    z = mix64_array(keys + _U(((stream + 1) * GOLDEN) & MASK64))
    return (z >> _U(11)).astype(np.float64) * _INV53


def _pick(u: float, deg: int) -> int:
    return min(int(u * deg), deg - 1)


# -- scalar sampler (reads edge-trees directly) ------------------------------


def _node2vec_weight(m: WalkModel, s: GraphSnapshot, prev: int, cand: int) -> float:
    if cand == prev:
        return 1.0 / m.p
    e = s.get(prev)
    if e is not None and ctree.contains(e.edges, cand):
        return 1.0
    return 1.0 / m.q


def sample_next(state: SamplerState, s: GraphSnapshot, m: WalkModel) -> int:
    """Next vertex for one walk step, or ``STOP`` when a PPR walk terminates."""
    e = s.get(state.current)
    if e is None or e.edges.size == 0:
        raise DeadEnd(state.current)
    nbrs = e.edges.to_list()
    deg = len(nbrs)
    k = (state.seed, state.walk, state.epoch, state.position)
    if m.kind == "deepwalk":
        return nbrs[_pick(draw(*k, 0), deg)]
    if m.kind == "ppr":
        if draw(*k, 0) < m.alpha:
            return STOP
        return nbrs[_pick(draw(*k, 1), deg)]
    if state.previous is None or state.previous < 0:
        return nbrs[_pick(draw(*k, 0), deg)]
    M = m.bound
    a = 0
    while True:
        cand = nbrs[_pick(draw(*k, 2 + 2 * a), deg)]
        if draw(*k, 3 + 2 * a) * M < _node2vec_weight(m, s, state.previous, cand):
            return cand
        a += 1


def transition_probs(s: GraphSnapshot, m: WalkModel, current: int, previous: Optional[int] = None) -> dict[int, float]:
    """Exact next-vertex distribution; key ``STOP`` carries PPR termination mass."""
    nbrs = s.entry(current).edges.to_list()
    if not nbrs:
        return {}
    if m.kind == "node2vec" and previous is not None and previous >= 0:
        w = [_node2vec_weight(m, s, previous, c) for c in nbrs]
        tot = sum(w)
        return {c: x / tot for c, x in zip(nbrs, w)}
    share = 1.0 / len(nbrs)
    if m.kind == "ppr":
        out = {c: (1 - m.alpha) * share for c in nbrs}
        out[STOP] = m.alpha
        return out
    return {c: share for c in nbrs}


# -- vectorized kernel ------------------------------------------------------


def step_many(adj: Adjacency, m: WalkModel, seed: int, epoch: int, walks: np.ndarray,
              position, cur: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """One step for many walks at once; ``STOP`` marks termination or a dead end."""
    walks = np.asarray(walks, dtype=np.int64)
    cur = np.asarray(cur, dtype=np.int64)
    out = np.full(cur.shape, STOP, dtype=np.int64)
    rows = adj.rows(cur)
    safe = np.maximum(rows, 0)
    base = adj.indptr[safe]
    deg = np.where(rows >= 0, adj.indptr[safe + 1] - base, 0)
    live = deg > 0
    keys = _keys(seed, walks, epoch, position)

    def pick(sel, stream):
        u = draws(keys[sel], stream)
        d = deg[sel]
        j = np.minimum((u * d).astype(np.int64), d - 1)
        return adj.nbrs[base[sel] + j]

    if m.kind == "deepwalk":
        idx = np.flatnonzero(live)
        out[idx] = pick(idx, 0)
        return out
    if m.kind == "ppr":
        idx = np.flatnonzero(live)
        go = draws(keys[idx], 0) >= m.alpha
        idx = idx[go]
        out[idx] = pick(idx, 1)
        return out
    prev = np.asarray(prev, dtype=np.int64)
    first = np.flatnonzero(live & (prev < 0))
    out[first] = pick(first, 0)
    pending = np.flatnonzero(live & (prev >= 0))
    M = m.bound
    wp, wq = 1.0 / m.p, 1.0 / m.q
    a = 0
    while pending.size:
        cand = pick(pending, 2 + 2 * a)
        pv = prev[pending]
        w = np.where(cand == pv, wp, np.where(adj.has_edges(pv, cand), 1.0, wq))
        ok = draws(keys[pending], 3 + 2 * a) * M < w
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
        a += 1
    return out


@dataclass
class KernelResult:
    seq: np.ndarray
    truncated: np.ndarray


def walk_kernel(adj: Adjacency, m: WalkModel, seed: int, epoch: int, walks: np.ndarray,
                starts: np.ndarray, prevs: np.ndarray, p0: np.ndarray, l: int) -> KernelResult:
    """Sample walk suffixes.

    Walk ``i`` sits on ``starts[i]`` at position ``p0[i]`` having come from
    ``prevs[i]`` (-1 if none).  ``seq[i, p]`` is filled for ``p >= p0[i]``
    and is -1 before.  A walk that stops stays on its last vertex for every
    remaining position; ``truncated[i]`` records that.
    """
    walks = np.asarray(walks, dtype=np.int64)
    k = len(walks)
    p0 = np.broadcast_to(np.asarray(p0, dtype=np.int64), (k,)).copy()
    seq = np.full((k, l), -1, dtype=np.int64)
    truncated = np.zeros(k, dtype=bool)
    if k == 0:
        return KernelResult(seq, truncated)
    seq[np.arange(k), p0] = starts
    prev = np.asarray(prevs, dtype=np.int64).copy()
    running = np.zeros(k, dtype=bool)
    for pos in range(int(p0.min()), l - 1):
        running |= p0 == pos
        idx = np.flatnonzero(running)
        if idx.size == 0:
            continue
        cur = seq[idx, pos]
        nxt = step_many(adj, m, seed, epoch, walks[idx], pos, cur, prev[idx])
        stop = nxt == STOP
        seq[idx, pos + 1] = np.where(stop, cur, nxt)
        prev[idx] = cur
        if stop.any():
            gone = idx[stop]
            seq[gone, pos + 1:] = cur[stop][:, None]
            running[gone] = False
            truncated[gone] = True
    return KernelResult(seq, truncated)


def sample_walk(s: GraphSnapshot, m: WalkModel, seed: int, epoch: int, walk: int,
                start: int, l: int, previous: Optional[int] = None, p0: int = 0) -> list[int]:
    """Scalar reference walk from position ``p0``; mirrors ``walk_kernel`` exactly."""
    seq = [start]
    prev = previous
    cur = start
    for pos in range(p0, l - 1):
        st = SamplerState(cur, prev, walk, epoch, pos, seed)
        try:
            nxt = sample_next(st, s, m)
        except DeadEnd:
            nxt = STOP
        if nxt == STOP:
            seq.extend([cur] * (l - 1 - pos))
            break
        seq.append(nxt)
        prev, cur = cur, nxt
    return seq


def empirical_distribution(s: GraphSnapshot, m: WalkModel, state: SamplerState, trials: int) -> Counter:
    """Monte-Carlo next-vertex frequencies, one independent draw per trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    adj = s.adjacency()
    walks = state.walk + np.arange(trials, dtype=np.int64)
    cur = np.full(trials, state.current, dtype=np.int64)
    prev = np.full(trials, -1 if state.previous is None else state.previous, dtype=np.int64)
    out = step_many(adj, m, state.seed, state.epoch, walks, state.position, cur, prev)
    vals, counts = np.unique(out, return_counts=True)
    return Counter(dict(zip(vals.tolist(), counts.tolist())))
