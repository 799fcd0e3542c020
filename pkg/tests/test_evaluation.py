import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neptune_kg import kernels
from neptune_kg.data import build_graph, filter_csr
from neptune_kg.evaluation import RankingReport, evaluate, rank_triple, score_queries
from neptune_kg.model import init_params, score_all_tails
from oracles import eval_scores, sort_rank


def test_report_from_ranks():
    rep = RankingReport.from_ranks(np.zeros((3, 3), dtype=int), [1, 2, 4])
    assert rep.mrr == pytest.approx(7 / 12)
    assert rep.hits == {1: pytest.approx(1 / 3), 3: pytest.approx(2 / 3), 10: 1.0}
    assert rep.triple_count == 3
    line = rep.format_line("test")
    assert line.startswith("split=test mrr=0.583333 hits1=0.333333")
    assert line.endswith("n=3")


def test_report_invariants():
    ranks = np.random.default_rng(0).integers(1, 30, size=200)
    rep = RankingReport.from_ranks(np.zeros((200, 3), dtype=int), ranks)
    assert rep.mrr == pytest.approx(np.mean(1.0 / ranks))
    assert rep.hits[1] <= rep.hits[3] <= rep.hits[10]
    assert 0 <= rep.mrr <= 1


def _graph_and_params(seed, n_ent=8):
    r = np.random.default_rng(seed)
    labels = [f"e{i}" for i in range(n_ent)]
    triples = {(labels[r.integers(n_ent)], f"r{r.integers(2)}", labels[r.integers(n_ent)])
               for _ in range(20)}
    triples = sorted(triples)
    g = build_graph(triples[:-4], triples[-4:-2], triples[-2:])
    p = init_params(g.n_entities, g.n_relations, 3, 2, r)
    return g, p


def test_unique_max_ranks_first():
    g, p = _graph_and_params(0)
    h, r, t = g.test[0]
    scores = score_all_tails(p, h, r, "relu")
    best = int(np.argmax(scores))
    # filtering only ever removes competitors, so the argmax stays first
    assert rank_triple(p, g, (h, r, best)) == 1


def test_all_equal_scores_rank_last():
    g, p = _graph_and_params(1)
    p.core[:] = 0.0
    p.bn_hidden.shift[:] = 0.0
    # nothing filtered: rank against a graph that only knows this one triple
    lone = build_graph([(g.entities.label(0), "r0", g.entities.label(1))], [], [])
    lone_p = init_params(lone.n_entities, lone.n_relations, 3, 2, 0)
    lone_p.core[:] = 0.0
    assert rank_triple(lone_p, lone, (0, 0, 1)) == lone.n_entities
    h, r, t = g.test[0]
    excluded = len(g.filter_index[(h, r)] - {t})
    assert rank_triple(p, g, (h, r, t)) == g.n_entities - excluded


@pytest.mark.parametrize("seed", range(4))
def test_rank_triple_vs_sort_oracle(seed):
    g, p = _graph_and_params(seed)
    for h, r, t in g.test.tolist() + g.valid.tolist():
        scores = eval_scores(p, h, r, "relu")
        assert rank_triple(p, g, (h, r, t)) == sort_rank(scores, t, g.filter_index[(h, r)])


def test_evaluate_covers_both_directions():
    g, p = _graph_and_params(2)
    rep = evaluate(p, g, "test", "relu")
    assert rep.triple_count == len(g.test) == 4
    n_raw = g.n_raw_relations
    assert sum(r >= n_raw for r in rep.triples[:, 1]) == 2


def test_score_queries_matches_single_query():
    g, p = _graph_and_params(3)
    p.bn_input.running_mean[:] = [0.1, 0.2, -0.3]
    p.bn_hidden.running_var[:] = [2.0, 0.5, 1.5]
    heads, rels = np.array([0, 1, 2, 0]), np.array([1, 1, 0, 3])
    batch = score_queries(p, heads, rels, "tanh")
    for b in range(4):
        np.testing.assert_allclose(batch[b], score_all_tails(p, heads[b], rels[b], "tanh"),
                                   atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_evaluate_rejects_diverged_model():
    g, p = _graph_and_params(0)
    p.entity_emb[:] = np.inf
    with pytest.raises(FloatingPointError):
        evaluate(p, g, "test")


def test_rank_dump(tmp_path):
    g, p = _graph_and_params(0)
    rep = evaluate(p, g, "valid", "relu")
    path = tmp_path / "ranks.tsv"
    rep.write_ranks(path, g)
    lines = path.read_text().splitlines()
    assert len(lines) == rep.triple_count
    h, r, t, rank = lines[0].split("\t")
    assert h in g.entities and r in g.relations and int(rank) == rep.ranks[0]


def _rank(scores, t, excluded):
    excluded = sorted(set(excluded) - {t})
    return kernels.filtered_ranks(np.array([scores], dtype=float), np.array([t]),
                                  np.array([0, len(excluded)], dtype=np.int64),
                                  np.array(excluded, dtype=np.int64))[0]


scores_st = st.lists(st.integers(-5, 5), min_size=2, max_size=30)


@settings(max_examples=150, deadline=None)
@given(scores_st, st.data())
def test_filter_soundness(scores, data):
    n = len(scores)
    t = data.draw(st.integers(0, n - 1))
    excluded = data.draw(st.sets(st.integers(0, n - 1)))
    extra = data.draw(st.integers(0, n - 1))
    assert _rank(scores, t, excluded | {extra}) <= _rank(scores, t, excluded)


@settings(max_examples=150, deadline=None)
@given(scores_st, st.data(), st.sampled_from(["affine", "cube", "shift"]))
def test_monotone_transform_keeps_rank(scores, data, fn):
    n = len(scores)
    t = data.draw(st.integers(0, n - 1))
    excluded = data.draw(st.sets(st.integers(0, n - 1)))
    f = {"affine": lambda x: 3 * x + 1, "cube": lambda x: x ** 3, "shift": lambda x: x - 100}[fn]
    assert _rank([f(s) for s in scores], t, excluded) == _rank(scores, t, excluded)
    assert _rank(scores, t, excluded) == sort_rank(scores, t, excluded)


def test_filter_csr_excludes_true_tail(tiny_graph):
    a, r = tiny_graph.entities["a"], tiny_graph.relations["r"]
    b, c, d = (tiny_graph.entities[x] for x in "bcd")
    indptr, indices = filter_csr(tiny_graph, [(a, r, b), (a, r, d)])
    assert indices[indptr[0]:indptr[1]].tolist() == sorted([c, d])
    assert indices[indptr[1]:indptr[2]].tolist() == sorted([b, c])
