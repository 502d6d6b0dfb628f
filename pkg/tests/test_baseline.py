import numpy as np
import pytest

from streamwalk.baseline import IIEngine, ii_apply_batch, ii_generate, ii_memory_bytes, ii_update_walks
from streamwalk.corpus import CorpusConfig, WalkRoster, generate_corpus, walk_matrix
from streamwalk.hybrid import EdgeBatch, from_edges
from streamwalk.models import WalkModel
from streamwalk.updater import apply_batch

from conftest import random_edges
from test_updater import mixed_stream


def path_engine():
    s = from_edges([(1, 2), (2, 3)])
    table = np.array([[1, 2, 3]])
    return IIEngine(s, CorpusConfig(1, 3), table, WalkRoster(np.array([1]), np.array([True])),
                    {1: np.array([0]), 2: np.array([0]), 3: np.array([0])})


def test_path_graph_mav():
    e = path_engine()
    assert e.check_index()
    mav = ii_apply_batch(e, EdgeBatch.of([(2, 4)]))
    assert mav.as_dict() == {0: (2, 1)}
    assert mav.added_vertices.tolist() == [4]


def test_empty_batch_noop():
    e = path_engine()
    before = e.table.copy()
    mav = e.apply_batch(EdgeBatch())
    assert len(mav) == 0
    rep = ii_update_walks(e, mav)
    assert rep.rewalked == 0 and np.array_equal(e.table, before)


def test_memory_accounting(rng):
    assert ii_memory_bytes(None) == (0, 0)
    s = from_edges(random_edges(rng, 200, 800))
    e = ii_generate(s, CorpusConfig(3, 10))
    wb, ib = e.memory_bytes()
    assert wb == 3 * s.n * 10 * 8
    assert ib >= wb


@pytest.mark.parametrize("model", [WalkModel.deepwalk(), WalkModel.node2vec(0.5, 2), WalkModel.ppr(0.3)],
                         ids=lambda m: m.kind)
def test_engines_agree(model, rng):
    n = 60
    s = from_edges(random_edges(rng, n, 200))
    cfg = CorpusConfig(3, 12, model, seed=8)
    c = generate_corpus(s, cfg)
    ii = IIEngine.generate(s, cfg)
    assert np.array_equal(ii.walks()[1], walk_matrix(c)[1])
    for b in mixed_stream(c, rng, n + 6, 10, 16):
        c, mav, rep = apply_batch(c, b)
        imav, irep = ii.step(b)
        assert mav.same_entries(imav)
        assert np.array_equal(mav.added_vertices, imav.added_vertices)
        assert np.array_equal(mav.removed_vertices, imav.removed_vertices)
        ids, seq = walk_matrix(c)
        iids, iseq = ii.walks()
        assert np.array_equal(ids, iids) and np.array_equal(seq, iseq)
        assert ii.check_index()
        assert (rep.rewalked, rep.inserted, rep.spawned, rep.retired) == \
            (irep.rewalked, irep.inserted, irep.spawned, irep.retired)
