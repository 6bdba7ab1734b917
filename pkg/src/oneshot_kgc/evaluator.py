"""Ranking evaluation: candidate ranking per query, MRR / Hits@K aggregates,
per-relation decomposition and k-shot score fusion.

Ranks use pessimistic tie-breaking: candidates scoring equal to the truth
count against it. Hits@K boundaries are inclusive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError


@dataclass
class QueryResult:
    relation: str
    head: str
    truth: str
    rank: int
    n_candidates: int


@dataclass
class RankingReport:
    results: list = field(default_factory=list)

    def add(self, result):
        self.results.append(result)

    @property
    def ranks(self):
        return [r.rank for r in self.results]

    def metrics(self):
        return compute_metrics(self.ranks)

    def per_relation(self):
        by_rel = {}
        for r in self.results:
            by_rel.setdefault(r.relation, []).append(r)
        out = {}
        for rel, rows in sorted(by_rel.items()):
            m = compute_metrics([r.rank for r in rows])
            m["n_queries"] = len(rows)
            m["n_candidates"] = max(r.n_candidates for r in rows)
            out[rel] = m
        return out

    def to_json(self):
        return json.dumps({
            "overall": self.metrics(),
            "per_relation": self.per_relation(),
            "queries": [vars(r) for r in self.results],
        }, indent=1, sort_keys=True)

    def to_text(self):
        header = "%-42s %12s %8s %8s %8s %8s" % (
            "Relation", "# Candidates", "MRR", "Hits@10", "Hits@5", "Hits@1")
        lines = [header, "-" * len(header)]
        for rel, m in self.per_relation().items():
            lines.append("%-42s %12d %8.3f %8.3f %8.3f %8.3f" % (
                rel, m["n_candidates"], m["mrr"], m["hits10"], m["hits5"], m["hits1"]))
        m = self.metrics()
        lines.append("-" * len(header))
        lines.append("%-42s %12s %8.3f %8.3f %8.3f %8.3f" % (
            "overall (micro)", "", m["mrr"], m["hits10"], m["hits5"], m["hits1"]))
        return "\n".join(lines)


def rank_from_scores(scores, truth_index):
    """Pessimistic rank of the truth inside a score vector (1-based)."""
    scores = np.asarray(scores, dtype=np.float64)
    s_true = scores[truth_index]
    others = np.delete(scores, truth_index)
    return 1 + int(np.sum(others >= s_true))


def compute_metrics(ranks):
    """Micro-averaged MRR and inclusive Hits@{1,5,10}."""
    if len(ranks) == 0:
        raise DataError("cannot compute metrics over zero queries")
    ranks = np.asarray(ranks, dtype=np.float64)
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "hits1": float(np.mean(ranks <= 1)),
        "hits5": float(np.mean(ranks <= 5)),
        "hits10": float(np.mean(ranks <= 10)),
    }


def aggregate_kshot(score_vectors):
    """Fuse per-reference candidate scores by elementwise maximum."""
    if not score_vectors:
        raise DataError("need at least one reference score vector")
    first = np.asarray(score_vectors[0], dtype=np.float64)
    fused = first.copy()
    for vec in score_vectors[1:]:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != first.shape:
            raise DataError("k-shot score vectors differ in length: %s vs %s"
                            % (vec.shape, first.shape))
        np.maximum(fused, vec, out=fused)
    return fused


def evaluate_tasks(tasks, score_fn, vocab, filter_known=False):
    """Rank every query of every task with ``score_fn`` and build a report.

    ``score_fn(task, head, candidates) -> score array`` must return one score
    per candidate (k-shot fusion happens inside the score function). With
    ``filter_known``, candidates that are true tails of the same (head,
    relation) in the task's triple set, other than the query's own truth, are
    removed before ranking.
    """
    report = RankingReport()
    for task in tasks:
        known = {}
        if filter_known:
            for h, r, t in task.all_triples():
                known.setdefault(h, set()).add(t)
        for head, truth, candidates in task.queries:
            if truth not in candidates:
                raise DataError("truth entity missing from its candidate set")
            cands = candidates
            if filter_known:
                drop = known.get(head, set()) - {truth}
                cands = [c for c in candidates if c not in drop]
            scores = score_fn(task, head, cands)
            rank = rank_from_scores(scores, cands.index(truth))
            report.add(QueryResult(vocab.id2rel[task.relation], vocab.id2ent[head],
                                   vocab.id2ent[truth], rank, len(cands)))
    return report


def matcher_score_fn(matcher, graph, references_by_task=None):
    """Score candidates with the matching model under the one-shot reference.

    ``references_by_task`` maps relation-id -> list of (head, tail) reference
    pairs for k-shot evaluation; by default each task's own single frozen
    reference is used.
    """
    def score_fn(task, head, candidates):
        refs = (references_by_task or {}).get(
            task.relation, [(task.reference.head, task.reference.tail)])
        with ad.no_grad():
            per_ref = []
            for ref in refs:
                heads = np.full(len(candidates), head, dtype=np.intp)
                scores = matcher.score_pairs(ref, heads, np.asarray(candidates, dtype=np.intp),
                                             graph, train=False)
                per_ref.append(scores.data)
        return aggregate_kshot(per_ref)
    return score_fn


def embedding_score_fn(table):
    """Score candidates directly with a baseline embedding model."""
    from .embeddings import score_candidates

    def score_fn(task, head, candidates):
        return score_candidates(table, head, task.relation, candidates)
    return score_fn
