"""Filtered ranking metrics: MRR and Hits@1/3/10."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import filter_csr
from .model import apply_activation, batch_norm_forward, relation_matrix, score_all_tails

HITS_AT = (1, 3, 10)


@dataclass
class RankingReport:
    triples: np.ndarray
    ranks: np.ndarray
    mrr: float
    hits: dict
    triple_count: int

    @classmethod
    def from_ranks(cls, triples, ranks):
        ranks = np.asarray(ranks, dtype=np.int64)
        n = len(ranks)
        if n == 0:
            return cls(np.asarray(triples).reshape(0, 3), ranks, 0.0,
                       {k: 0.0 for k in HITS_AT}, 0)
        mrr = math.fsum(1.0 / ranks) / n
        hits = {k: float(np.count_nonzero(ranks <= k)) / n for k in HITS_AT}
        return cls(np.asarray(triples), ranks, mrr, hits, n)

    def format_line(self, split):
        return (f"split={split} mrr={self.mrr:.6f} hits1={self.hits[1]:.6f} "
                f"hits3={self.hits[3]:.6f} hits10={self.hits[10]:.6f} n={self.triple_count}")

    def write_ranks(self, path, graph=None):
        with open(path, "w", encoding="utf-8") as fh:
            for (h, r, t), rank in zip(self.triples.tolist(), self.ranks.tolist()):
                if graph is not None:
                    h, r, t = (graph.entities.label(h), graph.relations.label(r),
                               graph.entities.label(t))
                fh.write(f"{h}\t{r}\t{t}\t{rank}\n")


def score_queries(p, heads, rels, act="relu", use_bn=True):
    """Eval-mode scores for a batch of ``(h, r)`` queries, shape (B, |E|).

    The (d, d) relation matrix is built once per distinct relation in the
    batch and shared by every query using it.
    """
    heads = np.asarray(heads)
    rels = np.asarray(rels)
    x = p.entity_emb[heads]
    if use_bn:
        x, _ = batch_norm_forward(p.bn_input, x, "eval")
    z = np.empty_like(x)
    for r in np.unique(rels):
        rows = np.flatnonzero(rels == r)
        z[rows] = x[rows] @ relation_matrix(p.core, p.relation_emb[r])
    if use_bn:
        z, _ = batch_norm_forward(p.bn_hidden, z, "eval")
    return apply_activation(act, z) @ p.entity_emb.T


def rank_triple(p, g, triple, act="relu", use_bn=True):
    """Filtered rank of the true tail of one triple (ties count against it)."""
    h, r, t = (int(x) for x in triple)
    if not 0 <= t < g.n_entities:
        raise IndexError(f"tail id {t} out of range [0, {g.n_entities})")
    scores = score_all_tails(p, h, r, act, mode="eval", use_bn=use_bn)
    indptr, indices = filter_csr(g, [(h, r, t)])
    return int(ranks_from_scores(scores[None, :], [t], indptr, indices)[0])


def ranks_from_scores(scores, true_idx, indptr, indices):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite scores; the model has diverged")
    return kernels.filtered_ranks(scores, np.ascontiguousarray(true_idx, dtype=np.int64),
                                  indptr, indices)


def evaluate(p, g, split="test", act="relu", use_bn=True, batch_size=256, triples=None):
    """Rank every reciprocal-augmented triple of ``split`` as a tail query.

    Because each raw triple appears in both directions this covers head and
    tail prediction. Pass ``triples`` to rank an explicit id array instead.
    """
    if triples is None:
        triples = g.split(split)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ranks = np.empty(len(triples), dtype=np.int64)
    for start in range(0, len(triples), batch_size):
        chunk = triples[start:start + batch_size]
        scores = score_queries(p, chunk[:, 0], chunk[:, 1], act, use_bn)
        indptr, indices = filter_csr(g, chunk)
        ranks[start:start + len(chunk)] = ranks_from_scores(scores, chunk[:, 2], indptr, indices)
    return RankingReport.from_ranks(triples, ranks)
