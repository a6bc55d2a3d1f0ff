"""Ranking-based evaluation: filtered MRR/HIT@K plus view identification.

Each ground-truth answer is ranked among all entities with other answers
removed from above it (filtered ranking). MRR averages reciprocal ranks over
answers; HIT@K is the fraction of queries with any answer in the top K. View
identification ranks views by the view score against each view's singleton
encoding and counts a hit when any witnessing view lands in the top K.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .kg import MultiViewKG
from .model import QueryModel
from .oracle import answer_views
from .queries import Query


def mrr(ranks: list[int]) -> float:
    """Mean reciprocal rank."""
    if not ranks:
        raise ValueError("rank list must be non-empty")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks start at 1")
    return float(np.mean([1.0 / r for r in ranks]))


def hit_at_k(ranks: list[int], k: int) -> float:
    """Fraction of ranks at or above the cutoff."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not ranks:
        return 0.0
    return float(np.mean([r <= k for r in ranks]))


@dataclass
class MetricsReport:
    step: int
    num_queries: int
    mrr: float
    hit_at_k: dict[int, float]
    view_hit_at_k: float | None
    per_structure: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "num_queries": self.num_queries,
            "mrr": self.mrr,
            "hit_at_k": {str(k): v for k, v in self.hit_at_k.items()},
            "view_hit_at_k": self.view_hit_at_k,
            "per_structure": self.per_structure,
        }


def filtered_ranks(scores: np.ndarray, answers: set[int]) -> list[int]:
    """Rank of each answer with the other answers filtered out of the count."""
    is_answer = np.zeros(scores.shape[0], dtype=bool)
    idx = sorted(answers)
    is_answer[idx] = True
    ranks = []
    for a in idx:
        above = (scores > scores[a]) & ~is_answer
        ranks.append(1 + int(above.sum()))
    return ranks


def query_view_truth(kg: MultiViewKG, queries: list[Query]) -> list[set[int]]:
    """Per query, the union of views witnessing any of its answers."""
    truth = []
    for q in queries:
        av = answer_views(kg, q)
        truth.append(set().union(*av.values()) if av else set())
    return truth


def evaluate(
    model: QueryModel,
    kg_full: MultiViewKG,
    queries: list[Query],
    ks: tuple[int, ...] = (1, 3, 5, 10),
    step: int = 0,
    view_k: int = 5,
    view_truth: list[set[int]] | None = None,
) -> MetricsReport:
    """Score every entity for every query and aggregate ranking metrics.

    Queries must already carry oracle answers (computed on kg_full). Pass a
    precomputed view_truth to skip the per-call oracle traversals.
    """
    if not queries:
        raise ValueError("query set must be non-empty")
    if any(q.answers is None or not q.answers for q in queries):
        raise ValueError("every query must carry non-empty oracle answers")
    with torch.no_grad():
        _, _, sims = model.score_all_entities(queries)
        view_sims = model.view_scores(queries)
    S = sims.numpy()
    all_ranks: list[int] = []
    best_ranks: list[int] = []
    by_structure: dict[str, tuple[list[int], list[int]]] = {}
    for i, q in enumerate(queries):
        ranks = filtered_ranks(S[i], q.answers)
        all_ranks.extend(ranks)
        best = min(ranks)
        best_ranks.append(best)
        bucket = by_structure.setdefault(q.structure, ([], []))
        bucket[0].extend(ranks)
        bucket[1].append(best)
    view_hit = None
    if view_sims is not None:
        if view_truth is None:
            view_truth = query_view_truth(kg_full, queries)
        VS = view_sims.numpy()
        hits = []
        for i in range(len(queries)):
            top = np.argsort(-VS[i], kind="stable")[:view_k]
            hits.append(bool(view_truth[i] & set(top.tolist())))
        view_hit = float(np.mean(hits))
    per_structure = {
        tag: {
            "num_queries": len(best),
            "mrr": mrr(ranks),
            "hit_at_k": {str(k): hit_at_k(best, k) for k in ks},
        }
        for tag, (ranks, best) in sorted(by_structure.items())
    }
    return MetricsReport(
        step=step,
        num_queries=len(queries),
        mrr=mrr(all_ranks),
        hit_at_k={k: hit_at_k(best_ranks, k) for k in ks},
        view_hit_at_k=view_hit,
        per_structure=per_structure,
    )
