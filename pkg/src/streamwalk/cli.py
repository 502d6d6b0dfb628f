"""Command-line entry point: ``streamwalk {generate,stream,bench,verify,ppr}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rmat
from .corpus import CorpusConfig
from .harness import (
    ENGINES,
    Runner,
    VerifyConfig,
    read_batch,
    read_edge_list,
    run_bench,
    simple_edges,
    small_graph,
    small_stream,
    ppr_experiment,
    verify_model,
    write_bench_csv,
    write_edge_list,
)
from .hybrid import ParseError
from .models import WalkModel
from .updater import MergePolicy


def _model(a: argparse.Namespace) -> WalkModel:
    if a.model == "deepwalk":
        return WalkModel.deepwalk()
    if a.model == "node2vec":
        return WalkModel.node2vec(a.p, a.q)
    return WalkModel.ppr(a.alpha)


def _cfg(a: argparse.Namespace) -> CorpusConfig:
    return CorpusConfig(a.nw, a.len, _model(a), a.seed)


def _graph(a: argparse.Namespace) -> np.ndarray:
    if a.graph:
        return simple_edges(read_edge_list(a.graph))
    if a.skew is not None:
        p = rmat.RmatParams.skewed(a.skew, a.scale, a.edges, a.seed)
    else:
        p = rmat.RmatParams.er(a.scale, a.edges, a.seed)
    return rmat.rmat_edges(p)


def _stream(a: argparse.Namespace, edges: np.ndarray):
    if a.batch_files:
        return [read_batch(f) for f in a.batch_files]
    scale = max(a.scale, int(edges.max()).bit_length() if edges.size else 1)
    return rmat.update_stream(edges, scale, a.batch_size, a.batches, a.seed + 1, a.delete_frac)


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("walks")
    g.add_argument("--model", choices=("deepwalk", "node2vec", "ppr"), default="deepwalk")
    g.add_argument("--p", type=float, default=0.5, help="node2vec return parameter")
    g.add_argument("--q", type=float, default=2.0, help="node2vec in-out parameter")
    g.add_argument("--alpha", type=float, default=0.2, help="PPR restart probability")
    g.add_argument("--nw", type=int, default=10, help="walks per vertex")
    g.add_argument("--len", type=int, default=80, help="walk length")
    g.add_argument("--chunk-b", type=int, default=32, help="expected chunk size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1, help="accepted for compatibility; execution is single-threaded")
    src = p.add_argument_group("graph")
    src.add_argument("--graph", type=Path, help="edge list, one 'src dst' per line (default: synthetic R-MAT)")
    src.add_argument("--scale", type=int, default=10, help="log2 vertices of the synthetic graph")
    src.add_argument("--edges", type=int, default=10_000, help="edges of the synthetic graph")
    src.add_argument("--skew", type=float, help="sg-style skew s (omit for er-style)")


def _updates(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("updates")
    g.add_argument("--batch-size", type=int, default=1000)
    g.add_argument("--batches", type=int, default=5)
    g.add_argument("--delete-frac", type=float, default=0.0, help="share of each synthetic batch that deletes edges")
    g.add_argument("--batch-files", type=Path, nargs="*", help="'+ src dst' / '- src dst' batch files, applied in order")
    g.add_argument("--policy", type=MergePolicy.parse, default=MergePolicy(), help="on-demand | eager | every:K")
    g.add_argument("--engine", choices=ENGINES, default="wharf")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamwalk", description="Random-walk corpora over streaming graphs.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="build a corpus and dump its walks")
    _common(g)
    g.add_argument("--engine", choices=ENGINES, default="wharf")
    g.add_argument("--out", type=Path, help="corpus dump path (default stdout)")
    g.add_argument("--edges-out", type=Path, help="also write the graph's edge list")

    s = sub.add_parser("stream", help="apply update batches and dump the final corpus")
    _common(s)
    _updates(s)
    s.add_argument("--out", type=Path, help="corpus dump path (default stdout)")
    s.add_argument("--stats", type=Path, help="per-batch JSON lines")

    b = sub.add_parser("bench", help="time updates against from-scratch regeneration")
    _common(b)
    _updates(b)
    b.add_argument("--stats", type=Path, help="per-batch JSON lines")
    b.add_argument("--csv", type=Path, help="per-batch CSV summary (default stdout)")

    v = sub.add_parser("verify", help="statistical check of updated vs. regenerated corpora")
    v.add_argument("--model", choices=("deepwalk", "node2vec", "all"), default="all")
    v.add_argument("--p", type=float, default=0.5)
    v.add_argument("--q", type=float, default=2.0)
    v.add_argument("--seeds", type=int, default=200)
    v.add_argument("--vertices", type=int, default=50)
    v.add_argument("--nw", type=int, default=10)
    v.add_argument("--len", type=int, default=20)
    v.add_argument("--batches", type=int, default=10)
    v.add_argument("--batch-size", type=int, default=25)
    v.add_argument("--policy", type=MergePolicy.parse, default=MergePolicy())
    v.add_argument("--chunk-b", type=int, default=32)
    v.add_argument("--threads", type=int, default=1)

    r = sub.add_parser("ppr", help="PageRank from restart walks, static vs. maintained")
    r.add_argument("--graph", type=Path, help="edge list (default: random 100-vertex graph)")
    r.add_argument("--vertices", type=int, default=100)
    r.add_argument("--alpha", type=float, default=0.2)
    r.add_argument("--nw", type=int, default=100)
    r.add_argument("--len", type=int, default=10)
    r.add_argument("--batches", type=int, default=5)
    r.add_argument("--batch-size", type=int, default=50)
    r.add_argument("--batch-files", type=Path, nargs="*")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--chunk-b", type=int, default=32)
    r.add_argument("--untruncated", action="store_true", help="score against plain PageRank instead of the length-l oracle")
    r.add_argument("--top", type=int, default=10)
    r.add_argument("--threads", type=int, default=1)
    return ap


def _open(path: Optional[Path]):
    return open(path, "w") if path else None


def cmd_generate(a) -> int:
    edges = _graph(a)
    if a.edges_out:
        with open(a.edges_out, "w") as fh:
            write_edge_list(edges, fh)
    r = Runner(a.engine, edges, _cfg(a), chunk_b=a.chunk_b)
    fh = _open(a.out)
    r.dump(fh or sys.stdout)
    if fh:
        fh.close()
    print(json.dumps({"walks": r.walk_count, "generate_time": round(r.generate_time, 4), **r.memory()}),
          file=sys.stderr)
    return 0


def cmd_stream(a) -> int:
    edges = _graph(a)
    batches = _stream(a, edges)
    r = Runner(a.engine, edges, _cfg(a), a.policy, a.chunk_b)
    stats = _open(a.stats)
    for b in batches:
        _, rep = r.step(b)
        if stats:
            stats.write(rep.to_json() + "\n")
    if stats:
        stats.close()
    r.finish()
    fh = _open(a.out)
    r.dump(fh or sys.stdout)
    if fh:
        fh.close()
    return 0


def cmd_bench(a) -> int:
    edges = _graph(a)
    batches = _stream(a, edges)
    stats = _open(a.stats)
    summary = run_bench(a.engine, edges, _cfg(a), batches, a.policy, a.chunk_b, stats)
    if stats:
        stats.close()
    fh = _open(a.csv)
    write_bench_csv([summary], fh or sys.stdout)
    if fh:
        fh.close()
    print(f"regen floor: {summary.regen_throughput:.1f} walks/s "
          f"({summary.walks} walks in {summary.generate_time:.3f}s)", file=sys.stderr)
    print("memory: " + json.dumps(summary.memory), file=sys.stderr)
    return 0


def cmd_verify(a) -> int:
    vc = VerifyConfig(vertices=a.vertices, n_w=a.nw, l=a.len, batches=a.batches, batch_ops=a.batch_size,
                      seeds=a.seeds)
    models = []
    if a.model in ("deepwalk", "all"):
        models.append(WalkModel.deepwalk())
    if a.model in ("node2vec", "all"):
        models.append(WalkModel.node2vec(a.p, a.q))
    ok = True
    for m in models:
        res = verify_model(m, vc, a.policy, a.chunk_b)
        print(res.line())
        ok &= res.passed
    return 0 if ok else 1


def cmd_ppr(a) -> int:
    if a.graph:
        edges = simple_edges(read_edge_list(a.graph))
        n = int(edges.max()) + 1
    else:
        n = a.vertices
        edges = small_graph(n, 6.0, a.seed)
    if a.batch_files:
        batches = [read_batch(f) for f in a.batch_files]
    else:
        batches = small_stream(edges, n, a.batches, a.batch_size, a.seed + 1)
    res = ppr_experiment(edges, n, a.alpha, a.nw, a.len, batches, a.seed, a.chunk_b,
                         None if a.untruncated else -1)
    order = np.argsort(-res.oracle, kind="stable")[: a.top]
    print("vertex,estimate,oracle")
    for v in order.tolist():
        print(f"{v},{res.estimate[v]:.6f},{res.oracle[v]:.6f}")
    print(f"max top-10 error {res.max_top_error:.5f}; SMAPE static {res.smape_static:.4f} "
          f"updating {res.smape_updating:.4f}", file=sys.stderr)
    return 0


COMMANDS = {"generate": cmd_generate, "stream": cmd_stream, "bench": cmd_bench, "verify": cmd_verify, "ppr": cmd_ppr}


def main(argv: Optional[Sequence[str]] = None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return COMMANDS[a.cmd](a)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
