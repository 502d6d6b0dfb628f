"""R-MAT edge sampling for synthetic graphs and update streams."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .hybrid import DELETE, INSERT, EdgeBatch


@dataclass(frozen=True)
class RmatParams:
    a: float = 0.25
    b: float = 0.25
    c: float = 0.25
    d: float = 0.25
    scale: int = 10
    edges: int = 1024
    seed: int = 0

    def __post_init__(self):
        if abs(self.a + self.b + self.c + self.d - 1.0) > 1e-9:
            raise ValueError("R-MAT quadrant probabilities must sum to 1")
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("R-MAT quadrant probabilities must be non-negative")
        if not 1 <= self.scale <= 32:
            raise ValueError("scale must lie in [1, 32]")
        if self.edges < 0:
            raise ValueError("edge count must be non-negative")

    @classmethod
    def er(cls, scale: int, edges: int, seed: int = 0) -> "RmatParams":
        return cls(0.25, 0.25, 0.25, 0.25, scale, edges, seed)

    @classmethod
    def skewed(cls, s: float, scale: int, edges: int, seed: int = 0) -> "RmatParams":
        """Bottom-right quadrant about ``s`` times as dense as the top-left; ``s=1`` is uniform."""
        return cls(0.5 / (1 + s), 0.25, 0.25, 0.5 * s / (1 + s), scale, edges, seed)

    @classmethod
    def updates(cls, scale: int, edges: int, seed: int = 0) -> "RmatParams":
        return cls(0.5, 0.1, 0.1, 0.3, scale, edges, seed)


def _draw(p: RmatParams, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    ab, abc = p.a + p.b, p.a + p.b + p.c
    for level in range(p.scale):
        u = rng.random(m)
        bit = np.int64(1) << np.int64(p.scale - 1 - level)
        src += np.where(u >= ab, bit, 0)
        dst += np.where(((u >= p.a) & (u < ab)) | (u >= abc), bit, 0)
    return src, dst


def rmat_edges(p: RmatParams, exclude: Optional[np.ndarray] = None,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Exactly ``p.edges`` distinct undirected edges ``(u, v)`` with ``u < v``.

    Self-loops, repeats and keys listed in ``exclude`` (``u << 32 | v``) are
    dropped and re-drawn.
    """
    rng = np.random.default_rng(p.seed) if rng is None else rng
    n = 1 << p.scale
    capacity = n * (n - 1) // 2 - (0 if exclude is None else len(exclude))
    if p.edges > capacity:
        raise ValueError(f"cannot place {p.edges} distinct edges on {n} vertices")
    taken = np.empty(0, dtype=np.int64) if exclude is None else np.unique(np.asarray(exclude, dtype=np.int64))
    out = np.empty(0, dtype=np.int64)
    rounds = 0
    while len(out) < p.edges:
        need = p.edges - len(out)
        src, dst = _draw(p, int(need * 1.25) + 16, rng)
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        keys = (lo << 32) | hi
        keys = keys[lo != hi]
        keys = keys[~np.isin(keys, taken)]
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)][:need]
        out = np.concatenate([out, keys])
        taken = np.union1d(taken, keys)
        rounds += 1
        if rounds > 10_000:
            raise RuntimeError("R-MAT sampler is not making progress; parameters too skewed")
    return np.stack([out >> 32, out & 0xFFFFFFFF], axis=1)


def existing_keys(edges: np.ndarray) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    return np.unique((lo << 32) | hi)


def update_stream(edges: np.ndarray, scale: int, batch_size: int, batches: int, seed: int = 0,
                  delete_frac: float = 0.0, params: Optional[RmatParams] = None) -> list[EdgeBatch]:
    """Batches of R-MAT insertions of absent edges, optionally mixed with deletions of present ones.

    Tracks the evolving edge set so every batch is valid against the graph
    produced by all earlier batches.
    """
    if not 0.0 <= delete_frac <= 1.0:
        raise ValueError("delete_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    base = params or RmatParams.updates(scale, 0, seed)
    present = existing_keys(edges)
    out = []
    for _ in range(batches):
        n_del = min(int(round(batch_size * delete_frac)), len(present))
        n_ins = batch_size - n_del
        dels = rng.choice(present, size=n_del, replace=False) if n_del else np.empty(0, dtype=np.int64)
        ins = rmat_edges(replace(base, scale=scale, edges=n_ins), exclude=present, rng=rng)
        ins_keys = (ins[:, 0] << 32) | ins[:, 1]
        present = np.union1d(np.setdiff1d(present, dels), ins_keys)
        ops = [(INSERT, int(a), int(b)) for a, b in ins.tolist()]
        ops += [(DELETE, int(k >> 32), int(k & 0xFFFFFFFF)) for k in dels.tolist()]
        out.append(EdgeBatch(tuple(ops)))
    return out


def degrees(edges: np.ndarray, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.bincount(e.ravel(), minlength=n)


def apply_keys(present: np.ndarray, batches: Iterable[EdgeBatch]) -> np.ndarray:
    """Edge keys after replaying ``batches`` on ``present``."""
    cur = set(np.asarray(present, dtype=np.int64).tolist())
    for b in batches:
        for op, a, c in b.ops:
            k = (min(a, c) << 32) | max(a, c)
            if op == INSERT:
                cur.add(k)
            else:
                cur.discard(k)
    return np.array(sorted(cur), dtype=np.int64)
