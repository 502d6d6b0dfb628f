"""Workload drivers: file formats, engine adapters, statistical verification, PPR and benchmarks."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from . import rmat
from .baseline import IIEngine
from .corpus import CorpusConfig, generate_corpus, walk_matrix
from .ctree import ChunkParams
from .hybrid import (
    EdgeBatch,
    ParseError,
    TreeConfig,
    from_edges,
    graph_bytes,
    parse_batch,
    walk_store_bytes,
)
from .models import WalkModel
from .updater import MergePolicy, UpdateReport, WalkEngine, apply_batch, merge

ENGINES = ("wharf", "ii", "tree")


# -- files ------------------------------------------------------------------


def parse_edge_list(text: str, source: str = "<input>") -> np.ndarray:
    """``src dst`` per line; blank lines and ``#`` comments are ignored."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2 or not parts[0].isdigit() or not parts[1].isdigit():
            raise ParseError(lineno, f"expected 'src dst', got {raw.strip()!r}", source)
        rows.append((int(parts[0]), int(parts[1])))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def read_edge_list(path: str | Path) -> np.ndarray:
    return parse_edge_list(Path(path).read_text(), str(path))


def write_edge_list(edges: np.ndarray, fh: IO[str]) -> None:
    for a, b in np.asarray(edges).tolist():
        fh.write(f"{a} {b}\n")


def read_batch(path: str | Path) -> EdgeBatch:
    return parse_batch(Path(path).read_text(), str(path))


def simple_edges(edges: np.ndarray) -> np.ndarray:
    """Drop self-loops and repeated undirected edges (edge lists in the wild carry both)."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    keys = np.unique((np.minimum(e[:, 0], e[:, 1]) << 32) | np.maximum(e[:, 0], e[:, 1]))
    return np.stack([keys >> 32, keys & 0xFFFFFFFF], axis=1)


# -- engines ----------------------------------------------------------------


def tree_config(engine: str, chunk_b: int = 32) -> TreeConfig:
    if engine == "tree":
        flat = ChunkParams(b=1, compress=False)
        return TreeConfig(flat, flat)
    p = ChunkParams(b=chunk_b)
    return TreeConfig(p, p)


class Runner:
    """Uniform driver over the tree engines and the inverted-index baseline."""

    def __init__(self, engine: str, edges: np.ndarray, cfg: CorpusConfig,
                 policy: MergePolicy = MergePolicy(), chunk_b: int = 32):
        if engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        self.engine = engine
        self.cfg = cfg
        s = from_edges(edges, tree_config(engine, chunk_b))
        t0 = time.perf_counter()
        if engine == "ii":
            self.ii: Optional[IIEngine] = IIEngine.generate(s, cfg)
            self.live: Optional[WalkEngine] = None
        else:
            self.ii = None
            self.live = WalkEngine(generate_corpus(s, cfg), policy)
        self.generate_time = time.perf_counter() - t0

    @property
    def walk_count(self) -> int:
        return len(self.ii.roster) if self.ii is not None else len(self.live.acquire().roster)

    def step(self, batch: EdgeBatch):
        if self.ii is not None:
            return self.ii.step(batch)
        return self.live.apply(batch)

    def finish(self) -> None:
        if self.live is not None:
            self.live.merge()

    def memory(self) -> dict:
        if self.ii is not None:
            wb, ib = self.ii.memory_bytes()
            return {"walks_bytes": wb, "index_bytes": ib, "walk_store_bytes": wb + ib,
                    "graph_bytes": graph_bytes(self.ii.snapshot)}
        s = self.live.acquire().snapshot
        ws = walk_store_bytes(s)
        return {"walks_bytes": ws, "index_bytes": 0, "walk_store_bytes": ws, "graph_bytes": graph_bytes(s)}

    def walks(self) -> tuple[np.ndarray, np.ndarray]:
        if self.ii is not None:
            return self.ii.walks()
        return walk_matrix(self.live.acquire())

    def dump(self, fh: IO[str]) -> None:
        ids, seq = self.walks()
        for w, row in zip(ids.tolist(), seq.tolist()):
            fh.write(f"{w}: {' '.join(map(str, row))}\n")


# -- statistical verification ----------------------------------------------


@dataclass
class VerifyConfig:
    vertices: int = 50
    avg_degree: float = 6.0
    n_w: int = 10
    l: int = 20
    batches: int = 10
    batch_ops: int = 25
    seeds: int = 200
    graph_seed: int = 2024
    tvd_tol: float = 0.05
    alpha: float = 0.01
    cell_frac: float = 0.95


@dataclass
class VerifyResult:
    model: str
    tvd_updated: float
    tvd_scratch: float
    chi2_pass_frac: float
    cells: int
    passed: bool
    elapsed: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.model}: max TVD updated={self.tvd_updated:.4f} scratch={self.tvd_scratch:.4f}, "
                f"chi-square indistinguishable in {self.chi2_pass_frac:.1%} of {self.cells} cells "
                f"({self.elapsed:.1f}s)")


def small_graph(n: int, avg_degree: float, seed: int) -> np.ndarray:
    """Random simple graph on ``0..n-1`` where every vertex has at least one edge."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    edges = {(min(a, b), max(a, b)) for a, b in zip(perm[:-1].tolist(), perm[1:].tolist())}
    target = int(round(n * avg_degree / 2))
    while len(edges) < target:
        a, b = rng.integers(0, n, 2).tolist()
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return np.array(sorted(edges), dtype=np.int64)


def small_stream(edges: np.ndarray, n: int, batches: int, ops: int, seed: int) -> list[EdgeBatch]:
    """Half insertions, half deletions; deletions never isolate a vertex."""
    rng = np.random.default_rng(seed)
    cur = {tuple(e) for e in np.asarray(edges).tolist()}
    deg = np.zeros(n, dtype=np.int64)
    for a, b in cur:
        deg[a] += 1
        deg[b] += 1
    out = []
    for _ in range(batches):
        ins, dels = [], []
        n_del = ops // 2
        cands = sorted(cur)
        rng.shuffle(cands)
        for a, b in cands:
            if len(dels) == n_del:
                break
            if deg[a] > 1 and deg[b] > 1:
                dels.append((a, b))
                deg[a] -= 1
                deg[b] -= 1
        for e in dels:
            cur.discard(e)
        while len(ins) < ops - len(dels):
            a, b = rng.integers(0, n, 2).tolist()
            e = (min(a, b), max(a, b))
            if a != b and e not in cur and (e not in dels):
                cur.add(e)
                ins.append(e)
                deg[a] += 1
                deg[b] += 1
        out.append(EdgeBatch.of(ins, dels))
    return out


def successor_counts(seq: np.ndarray, n: int) -> np.ndarray:
    """``counts[v, x]`` = transitions v -> x before each walk's effective end."""
    a = seq[:, :-1].ravel()
    b = seq[:, 1:].ravel()
    moving = a != b
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (a[moving], b[moving]), 1)
    return counts


def expected_successors(adj_sets: list[set], m: WalkModel, l: int) -> np.ndarray:
    """Exact expected transition counts per walk for walks started uniformly at every vertex.

    Propagates the distribution over (previous, current) states step by
    step, so second-order models get the right mixture over predecessors.
    """
    n = len(adj_sets)
    nbrs = [sorted(s) for s in adj_sets]
    out = np.zeros((n, n))
    # position 0: no predecessor
    state: dict[tuple[int, int], float] = {}
    for v in range(n):
        if not nbrs[v]:
            continue
        for x, pr in _step_probs(adj_sets, nbrs, m, v, -1).items():
            out[v, x] += pr / n
            state[(v, x)] = state.get((v, x), 0.0) + pr / n
    for _ in range(l - 2):
        nxt: dict[tuple[int, int], float] = {}
        for (u, v), mass in state.items():
            for x, pr in _step_probs(adj_sets, nbrs, m, v, u).items():
                out[v, x] += mass * pr
                nxt[(v, x)] = nxt.get((v, x), 0.0) + mass * pr
        state = nxt
    return out


def _step_probs(adj_sets, nbrs, m: WalkModel, v: int, prev: int) -> dict[int, float]:
    cand = nbrs[v]
    if m.kind == "node2vec" and prev >= 0:
        w = [1.0 / m.p if c == prev else (1.0 if c in adj_sets[prev] else 1.0 / m.q) for c in cand]
        tot = sum(w)
        return {c: x / tot for c, x in zip(cand, w)}
    return {c: 1.0 / len(cand) for c in cand}


def _adj_sets(edges: np.ndarray, n: int) -> list[set]:
    sets = [set() for _ in range(n)]
    for a, b in np.asarray(edges).tolist():
        sets[a].add(b)
        sets[b].add(a)
    return sets


def _tvd(counts: np.ndarray, expect: np.ndarray) -> float:
    worst = 0.0
    for v in range(counts.shape[0]):
        tot = counts[v].sum()
        if tot == 0:
            continue
        ev = expect[v] / expect[v].sum()
        worst = max(worst, 0.5 * float(np.abs(counts[v] / tot - ev).sum()))
    return worst


def verify_model(m: WalkModel, vc: VerifyConfig = VerifyConfig(), policy: MergePolicy = MergePolicy(),
                 chunk_b: int = 32) -> VerifyResult:
    """Updated corpora vs. from-scratch corpora vs. the exact model, pooled over seeds."""
    t0 = time.perf_counter()
    n = vc.vertices
    g0 = small_graph(n, vc.avg_degree, vc.graph_seed)
    stream = small_stream(g0, n, vc.batches, vc.batch_ops, vc.graph_seed + 1)
    final = rmat.apply_keys(rmat.existing_keys(g0), stream)
    final_edges = np.stack([final >> 32, final & 0xFFFFFFFF], axis=1)
    tc = tree_config("wharf", chunk_b)
    s0 = from_edges(g0, tc)
    s_final = from_edges(final_edges, tc)
    upd = np.zeros((n, n), dtype=np.int64)
    scr = np.zeros((n, n), dtype=np.int64)
    for seed in range(vc.seeds):
        cfg = CorpusConfig(vc.n_w, vc.l, m, seed)
        c = generate_corpus(s0, cfg)
        pending = 0
        for b in stream:
            c, _, rep = apply_batch(c, b, policy, pending)
            pending = 0 if rep.merged else pending + 1
        c = merge(c)
        upd += successor_counts(walk_matrix(c)[1], n)
        fresh = generate_corpus(s_final, replace(cfg, seed=seed + 1_000_003))
        scr += successor_counts(walk_matrix(fresh)[1], n)
    expect = expected_successors(_adj_sets(final_edges, n), m, vc.l)
    passes = 0
    cells = 0
    for v in range(n):
        cols = (upd[v] + scr[v]) > 0
        if cols.sum() < 2:
            continue
        cells += 1
        _, p, _, _ = sps.chi2_contingency(np.vstack([upd[v, cols], scr[v, cols]]))
        passes += p >= vc.alpha
    frac = passes / cells if cells else 1.0
    tu, ts = _tvd(upd, expect), _tvd(scr, expect)
    ok = tu <= vc.tvd_tol and ts <= vc.tvd_tol and frac >= vc.cell_frac
    name = m.kind if m.kind != "node2vec" else f"node2vec(p={m.p:g},q={m.q:g})"
    return VerifyResult(name, tu, ts, frac, cells, ok, time.perf_counter() - t0)


# -- PageRank from restart walks --------------------------------------------


def pagerank_oracle(edges: np.ndarray, n: int, alpha: float, horizon: Optional[int] = None,
                    tol: float = 1e-13) -> np.ndarray:
    """Power iteration for visit frequencies of restart walks started uniformly.

    With ``horizon=None`` this is PageRank with teleport ``alpha``; with a
    horizon it is the exact expectation for walks cut after that many
    positions, which is what finite walks estimate.
    """
    sets = _adj_sets(edges, n)
    live = np.array([len(s) > 0 for s in sets])
    rows, cols, vals = [], [], []
    for v, s in enumerate(sets):
        for x in s:
            rows.append(v)
            cols.append(x)
            vals.append(1.0 / len(s))
    P = np.zeros((n, n))
    P[rows, cols] = vals
    x = live / live.sum()
    total = np.zeros(n)
    t = 0
    while True:
        total += x
        t += 1
        if horizon is not None and t >= horizon:
            break
        x = (1 - alpha) * (x @ P)
        if horizon is None and x.sum() < tol:
            break
    return total / total.sum()


def visit_frequencies(seq: np.ndarray, n: int) -> np.ndarray:
    """Visits per vertex up to each walk's effective end (padding repeats are not visits)."""
    counted = np.ones(seq.shape, dtype=bool)
    counted[:, 1:] = seq[:, 1:] != seq[:, :-1]
    hits = np.bincount(seq[counted], minlength=n).astype(np.float64)
    return hits / hits.sum()


def smape(est: np.ndarray, ref: np.ndarray) -> float:
    den = np.abs(est) + np.abs(ref)
    ok = den > 0
    return float(np.mean(2 * np.abs(est[ok] - ref[ok]) / den[ok]))


@dataclass
class PPRResult:
    top_vertices: list[int]
    max_top_error: float
    smape_static: float
    smape_updating: float
    estimate: np.ndarray
    oracle: np.ndarray


def ppr_experiment(edges: np.ndarray, n: int, alpha: float = 0.2, n_w: int = 100, l: int = 10,
                   batches: Sequence[EdgeBatch] = (), seed: int = 0, chunk_b: int = 32,
                   horizon: Optional[int] = -1) -> PPRResult:
    """Static corpus vs. maintained corpus, both scored against the final graph's oracle.

    ``horizon=-1`` truncates the oracle at the walk length, matching what
    length-``l`` walks estimate; ``None`` scores against untruncated PageRank.
    """
    horizon = l if horizon == -1 else horizon
    m = WalkModel.ppr(alpha)
    cfg = CorpusConfig(n_w, l, m, seed)
    s = from_edges(edges, tree_config("wharf", chunk_b))
    c0 = generate_corpus(s, cfg)
    static = visit_frequencies(walk_matrix(c0)[1], n)
    c = c0
    for b in batches:
        c, _, _ = apply_batch(c, b)
    c = merge(c)
    est = visit_frequencies(walk_matrix(c)[1], n)
    final = rmat.apply_keys(rmat.existing_keys(edges), batches)
    oracle = pagerank_oracle(np.stack([final >> 32, final & 0xFFFFFFFF], axis=1), n, alpha, horizon)
    top = np.argsort(-oracle, kind="stable")[:10]
    return PPRResult(
        top.tolist(), float(np.max(np.abs(est[top] - oracle[top]))),
        smape(static, oracle), smape(est, oracle), est, oracle,
    )


# -- benchmarks -------------------------------------------------------------


@dataclass
class BenchSummary:
    engine: str
    walks: int
    generate_time: float
    regen_throughput: float
    batches: list[UpdateReport] = field(default_factory=list)
    memory: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for r in self.batches:
            thr = r.rewalked / r.wall_time if r.wall_time > 0 else 0.0
            lat = r.wall_time / r.rewalked if r.rewalked else 0.0
            out.append({
                "engine": self.engine, "epoch": r.epoch, "affected": r.affected, "rewalked": r.rewalked,
                "inserted": r.inserted, "wall_time": round(r.wall_time, 6),
                "throughput_walks_per_s": round(thr, 3), "latency_s_per_walk": lat,
                "regen_floor_walks_per_s": round(self.regen_throughput, 3),
                "walk_store_bytes": r.walk_store_bytes,
            })
        return out


def run_bench(engine: str, edges: np.ndarray, cfg: CorpusConfig, batches: Sequence[EdgeBatch],
              policy: MergePolicy = MergePolicy(), chunk_b: int = 32,
              stats: Optional[IO[str]] = None) -> BenchSummary:
    r = Runner(engine, edges, cfg, policy, chunk_b)
    walks = r.walk_count
    summary = BenchSummary(engine, walks, r.generate_time, walks / r.generate_time if r.generate_time else 0.0)
    for b in batches:
        _, rep = r.step(b)
        summary.batches.append(rep)
        if stats is not None:
            stats.write(rep.to_json() + "\n")
    r.finish()
    summary.memory = r.memory()
    return summary


def write_bench_csv(summaries: Iterable[BenchSummary], fh: IO[str]) -> None:
    rows = [row for s in summaries for row in s.rows()]
    fields = ["engine", "epoch", "affected", "rewalked", "inserted", "wall_time", "throughput_walks_per_s",
              "latency_s_per_walk", "regen_floor_walks_per_s", "walk_store_bytes"]
    w = csv.DictWriter(fh, fieldnames=fields)
    w.writeheader()
    for row in rows:
        w.writerow(row)
