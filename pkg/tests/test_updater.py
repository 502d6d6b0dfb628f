import io
import json
import logging

import numpy as np
import pytest
from scipy import stats

from streamwalk import ctree
from streamwalk.codec import WalkTriplet, encode_triplet
from streamwalk.corpus import Corpus, CorpusConfig, RewriteLog, WalkRoster, find_next, generate_corpus, walk_matrix
from streamwalk.hybrid import MAV, EdgeBatch, decode_vertices, from_edges, has_edge, push_walk_version
from streamwalk.models import WalkModel
from streamwalk.rmat import update_stream
from streamwalk.updater import (
    MergePolicy,
    WalkEngine,
    acquire_snapshot,
    apply_batch,
    batch_walk_update,
    corpus_stats,
    merge,
    previous_vertices,
)

from conftest import random_edges

MODELS = [WalkModel.deepwalk(), WalkModel.node2vec(0.5, 2), WalkModel.ppr(0.3)]


def state_bytes(c: Corpus):
    """Everything reachable from the snapshot, serialized."""
    out = []
    for e in c.snapshot.entries():
        out.append((e.vertex, ctree.dumps(e.edges), tuple((ep, ctree.dumps(t)) for ep, t in e.versions), e.bounds))
    return out, c.roster.starts.tolist(), c.roster.live.tolist()


def path_corpus(seed=0, model=WalkModel.deepwalk()):
    l = 3
    s = from_edges([(1, 2), (2, 3)]).replace(walk_length=l)
    for p, (v, nxt) in enumerate([(1, 2), (2, 3), (3, 3)]):
        s = push_walk_version(s, v, 0, [encode_triplet(WalkTriplet(0, p, nxt), l)])
    return Corpus(s, WalkRoster(np.array([1]), np.array([True])), RewriteLog(), CorpusConfig(1, l, model, seed))


def mixed_stream(c, rng, n, batches, size):
    out = []
    s = c.snapshot
    keys = {tuple(k) for k in np.stack([s.adjacency().keys >> 32, s.adjacency().keys & 0xFFFFFFFF], 1).tolist() if k[0] < k[1]}
    for _ in range(batches):
        dels = [tuple(x) for x in rng.permutation(sorted(keys))[: size // 2].tolist()]
        ins = set()
        while len(ins) < size - len(dels):
            a, b = rng.integers(0, n, 2).tolist()
            k = (min(a, b), max(a, b))
            if a != b and k not in keys:
                ins.add(k)
        keys = (keys - set(dels)) | ins
        out.append(EdgeBatch.of(sorted(ins), dels))
    return out


def test_policy_parse():
    assert MergePolicy.parse("on-demand") == MergePolicy()
    assert MergePolicy.parse("eager").kind == "eager"
    assert MergePolicy.parse("every:3") == MergePolicy("every_k", 3)
    assert str(MergePolicy.parse("every:3")) == "every:3"
    for bad in ("never", "every:0", "every:x"):
        with pytest.raises(ValueError):
            MergePolicy.parse(bad)
    assert not MergePolicy().fires(100)
    assert MergePolicy.parse("eager").fires(1)
    assert MergePolicy.parse("every:3").fires(3) and not MergePolicy.parse("every:3").fires(2)


def test_accumulator_size_formula():
    mav = MAV(np.array([0, 1, 2]), np.array([4, 5, 6]), np.array([0, 2, 2]))
    st = corpus_stats(mav, 5)
    assert st["inserted"] == 11
    assert st["pmin_hist"] == [1, 0, 2, 0, 0]
    assert corpus_stats(MAV(), 5) == {"affected": 0, "inserted": 0, "pmin_hist": [0] * 5}


def test_empty_mav_only_moves_epoch():
    c = path_corpus()
    out, rep = batch_walk_update(c, MAV())
    assert out.epoch == 1 and rep.rewalked == 0 and rep.inserted == 0
    assert state_bytes(out) == state_bytes(c)


def test_path_rewalk_distribution():
    counts = {1: 0, 3: 0, 4: 0}
    for seed in range(10_000):
        c, mav, rep = apply_batch(path_corpus(seed), EdgeBatch.of([(2, 4)]))
        assert mav.as_dict() == {0: (2, 1)}
        nxt = find_next(c.snapshot, 2, 0, 1, c.log)
        counts[nxt] += 1
    assert stats.chisquare(list(counts.values())).pvalue >= 0.01


def test_rewritten_suffix_invalid_immediately():
    c, mav, _ = apply_batch(path_corpus(5), EdgeBatch.of([(2, 4)]))
    own, w, p, nxt = decode_vertices(c.snapshot, c.snapshot.vertices(), c.log)
    # the old position-1 and position-2 triplets remain stored but are no longer valid
    stored = sum(t.size for e in c.snapshot.entries() for _, t in e.versions)
    assert stored > len(w)
    valid = sorted(zip(w.tolist(), p.tolist()))
    assert [x for x in valid if x[0] == 0] == [(0, 0), (0, 1), (0, 2)]
    m = merge(c)
    assert sum(t.size for e in m.snapshot.entries() for _, t in e.versions) == len(walk_matrix(m)[0]) * 3


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
@pytest.mark.parametrize("policy", ["on-demand", "eager", "every:3"])
def test_stream_invariants(model, policy, rng):
    n = 40
    s = from_edges(random_edges(rng, n, 120))
    c = generate_corpus(s, CorpusConfig(3, 10, model, seed=11))
    pol = MergePolicy.parse(policy)
    pending = 0
    for b in mixed_stream(c, rng, n + 8, 8, 12):
        before_ids, before = walk_matrix(c)
        c2, mav, rep = apply_batch(c, b, pol, pending)
        pending = 0 if rep.merged else pending + 1
        ids, seq = walk_matrix(c2)
        adj = c2.snapshot.adjacency()
        for row in seq.tolist():
            for a, nx in zip(row, row[1:]):
                if a == nx:
                    break
                assert adj.has_edges(np.array([a]), np.array([nx]))[0]
        old = dict(zip(before_ids.tolist(), before.tolist()))
        new = dict(zip(ids.tolist(), seq.tolist()))
        aff = mav.as_dict()
        for w, row in old.items():
            if w in new and w not in aff:
                assert new[w] == row
        for w, (v, p) in aff.items():
            if w in new:
                assert new[w][: p + 1] == old[w][: p + 1]
                assert old[w][p] == v
                assert v not in old[w][:p]
        assert rep.inserted == rep.inserted_affected + rep.spawned * 10
        assert rep.inserted_affected == sum(10 - p for w, (_, p) in aff.items() if c2.roster.live[w])
        assert len(c2.roster) == c2.snapshot.n * 3
        m = merge(c2)
        assert np.array_equal(walk_matrix(m)[1], seq)
        assert all(len(e.versions) <= 1 for e in m.snapshot.entries())
        assert merge(m).snapshot.root is m.snapshot.root
        c = c2


def test_merge_matches_rebuilt_oracle(rng):
    n = 50
    c = generate_corpus(from_edges(random_edges(rng, n, 150)), CorpusConfig(2, 8, seed=3))
    for b in mixed_stream(c, rng, n, 5, 10):
        c, _, _ = apply_batch(c, b)
    ids, seq = walk_matrix(c)
    m = merge(c)
    l = 8
    expect = {}
    for w, row in zip(ids.tolist(), seq.tolist()):
        for p, v in enumerate(row):
            expect.setdefault(v, set()).add(encode_triplet(WalkTriplet(w, p, row[min(p + 1, l - 1)]), l))
    got = {e.vertex: set(e.versions[0][1].to_list()) for e in m.snapshot.entries() if e.versions}
    assert got == expect
    for e in m.snapshot.entries():
        if e.versions:
            _, _, _, nx = decode_vertices(m.snapshot, [e.vertex])
            assert e.bounds == (int(nx.min()), int(nx.max()))


def test_single_version_untouched_by_merge(rng):
    c = generate_corpus(from_edges(random_edges(rng, 30, 60)), CorpusConfig(2, 6))
    m = merge(c)
    assert m is c or m.snapshot.root is c.snapshot.root


@pytest.mark.parametrize("model", MODELS[:2], ids=lambda m: m.kind)
def test_policy_equivalence(model, rng):
    n = 50
    base = generate_corpus(from_edges(random_edges(rng, n, 160)), CorpusConfig(4, 12, model, seed=21))
    batches = mixed_stream(base, rng, n + 5, 6, 14)
    finals = []
    for pol in ("on-demand", "eager", "every:2"):
        c, pending = base, 0
        for b in batches:
            c, _, rep = apply_batch(c, b, MergePolicy.parse(pol), pending)
            pending = 0 if rep.merged else pending + 1
        finals.append(state_bytes(merge(c)))
    assert finals[0] == finals[1] == finals[2]


def test_previous_vertex_paths_agree(rng):
    c = generate_corpus(from_edges(random_edges(rng, 40, 100)), CorpusConfig(3, 10, WalkModel.node2vec(1, 2)))
    ids, seq = walk_matrix(c)
    walks = ids[:30]
    pos = np.arange(30) % 10
    got = previous_vertices(c, walks, pos)
    expect = np.where(pos > 0, seq[walks, np.maximum(pos - 1, 0)], -1)
    assert np.array_equal(got, expect)


def test_vertex_removal_retires_walks(rng, caplog):
    s = from_edges([(0, 1), (1, 2), (2, 3), (3, 0), (2, 4)])
    c = generate_corpus(s, CorpusConfig(2, 6, seed=1))
    c2, mav, rep = apply_batch(c, EdgeBatch.of(deletes=[(2, 4)]))
    assert mav.removed_vertices.tolist() == [4]
    assert rep.retired == 2
    assert not c2.roster.live[c.roster.rooted_at(np.array([4]))].any()
    ids, seq = walk_matrix(c2)
    assert 4 not in seq
    # batch that re-adds 4 spawns fresh walks with new ids
    c3, mav3, rep3 = apply_batch(c2, EdgeBatch.of([(4, 0)]))
    assert rep3.spawned == 2 and mav3.added_vertices.tolist() == [4]
    assert c3.roster.next_id == c.roster.next_id + 2
    # stale MAV entries for retired walks are skipped with a warning
    retired = np.flatnonzero(~c3.roster.live)
    with caplog.at_level(logging.WARNING):
        _, rep4 = batch_walk_update(c3, MAV(retired, np.full(len(retired), 2), np.zeros(len(retired), dtype=np.int64)))
    assert rep4.skipped == len(retired) and rep4.rewalked == 0
    assert "retired" in caplog.text


def test_dead_end_is_truncated():
    # deleting the only edge out of the walk's next vertex leaves it isolated, so it is removed
    s = from_edges([(0, 1), (1, 2), (2, 3), (3, 1)])
    c = generate_corpus(s, CorpusConfig(3, 8, seed=4))
    c2, _, rep = apply_batch(c, EdgeBatch.of(deletes=[(0, 1)]))
    ids, seq = walk_matrix(c2)
    assert 0 not in seq and rep.retired == 3


def test_larger_batches_shift_pmin_down(rng):
    s = from_edges(random_edges(rng, 2000, 10_000))
    c = generate_corpus(s, CorpusConfig(2, 20, seed=1))
    means = []
    for size in (100, 1000):
        b = update_stream(np.array(random_edges(rng, 2000, 10_000)), 11, size, 1, seed=size)[0]
        ops = [(a, x) for _, a, x in b.ops if a < 2000 and x < 2000 and not has_edge(c.snapshot, a, x)]
        _, mav, _ = apply_batch(c, EdgeBatch.of(ops))
        means.append(float(np.mean(mav.positions)))
    assert means[1] < means[0]


def test_engine_handle(rng):
    c = generate_corpus(from_edges(random_edges(rng, 30, 80)), CorpusConfig(2, 8))
    sink = io.StringIO()
    h = WalkEngine(c, MergePolicy.parse("every:2"), sink)
    snap0 = acquire_snapshot(h)
    assert acquire_snapshot(h) is snap0
    for b in mixed_stream(c, rng, 35, 3, 6):
        h.apply(b)
    assert acquire_snapshot(h) is not snap0 and snap0.epoch == 0
    lines = [json.loads(x) for x in sink.getvalue().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2, 3]
    assert [r["merged"] for r in lines] == [False, True, False]
    assert {"affected", "inserted", "pmin_hist", "wall_time", "walk_store_bytes"} <= set(lines[0])
    h.merge()
    assert all(len(e.versions) <= 1 for e in h.acquire().snapshot.entries())
