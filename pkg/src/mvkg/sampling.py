"""Query instantiation and train/test sampling.

Queries are built satisfiable-by-construction: pick an answer entity, then
walk the KG backward along the template's edges so that at least one full
derivation exists. Rejection sampling over random anchor/relation choices
would be waste-dominated on sparse multi-view KGs.
"""
from __future__ import annotations

import random

from .kg import MultiViewKG
from .oracle import answer_query
from .queries import (
    EQUAL,
    EXACT,
    TRAIN_STRUCTURES,
    WILDCARD,
    Query,
    QueryEdge,
    TrainingSample,
    ViewConstraint,
    equal,
    exact,
    template_layout,
    wildcard,
)

CROSS_VIEW = "cross_view"
POLICIES = (EXACT, WILDCARD, EQUAL, CROSS_VIEW)

# Default per-structure policy: equal match on projection chains, wildcard on
# structures with intersections.
DEFAULT_POLICY = {
    "1p": EQUAL,
    "2p": EQUAL,
    "3p": EQUAL,
    "2i": WILDCARD,
    "3i": WILDCARD,
    "2ip": WILDCARD,
    "2pi": WILDCARD,
}

_MAX_RETRIES = 500


class SamplingError(RuntimeError):
    """Backward-walk instantiation failed within the retry budget."""


def _reverse_edge_order(structure: str) -> list[int]:
    """Edge indices ordered so each edge's target is bound before the edge.

    Every non-answer template node has out-degree one, so processing edges by
    descending target binds each source exactly once.
    """
    _, _, edge_pairs = template_layout(structure)
    return sorted(range(len(edge_pairs)), key=lambda i: edge_pairs[i][1], reverse=True)


def _backward_walk(
    kg: MultiViewKG,
    structure: str,
    policy: str,
    rng: random.Random,
    forced_view: int | None = None,
) -> tuple[dict[int, int], list[int], list[int]] | None:
    """One backward-walk attempt.

    Returns (node bindings, per-edge relations, per-edge witness views) or
    None when the walk dead-ends. With forced_view set, only facts in that
    view are eligible.
    """
    num_nodes, _, edge_pairs = template_layout(structure)
    answer = rng.randrange(kg.num_entities)
    if not kg.in_facts(answer):
        return None
    bindings = {num_nodes - 1: answer}
    relations = [-1] * len(edge_pairs)
    views = [-1] * len(edge_pairs)
    pinned_view = forced_view  # equal policy: whole walk stays in one view
    for i in _reverse_edge_order(structure):
        src, dst = edge_pairs[i]
        candidates = kg.in_facts(bindings[dst])
        if pinned_view is not None:
            candidates = [f for f in candidates if f.view == pinned_view]
        if not candidates:
            return None
        fact = rng.choice(candidates)
        bindings[src] = fact.head
        relations[i] = fact.relation
        views[i] = fact.view
        if policy == EQUAL and pinned_view is None:
            pinned_view = fact.view
    return bindings, relations, views


def instantiate_template(
    kg: MultiViewKG, structure: str, policy: str, rng: random.Random
) -> Query:
    """Sample a satisfiable query of the given shape under a constraint policy.

    EXACT pins each edge to its witnessing fact's view; WILDCARD leaves every
    edge unconstrained; EQUAL places all edges in one group and keeps the walk
    inside a single view; CROSS_VIEW pins edges exactly but requires at least
    two distinct witnessing views (impossible for 1p).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown constraint policy {policy!r}")
    if policy == CROSS_VIEW and structure == "1p":
        raise ValueError("cross_view needs at least two edges; 1p has one")
    num_nodes, anchor_nodes, edge_pairs = template_layout(structure)
    for _ in range(_MAX_RETRIES):
        walk = _backward_walk(kg, structure, policy, rng)
        if walk is None:
            continue
        bindings, relations, views = walk
        if policy == CROSS_VIEW and len(set(views)) < 2:
            continue
        if policy == EXACT or policy == CROSS_VIEW:
            constraints = [exact(v) for v in views]
        elif policy == EQUAL:
            constraints = [equal(0)] * len(edge_pairs)
        else:
            constraints = [wildcard()] * len(edge_pairs)
        edges = [
            QueryEdge(src, dst, relations[i], constraints[i])
            for i, (src, dst) in enumerate(edge_pairs)
        ]
        anchors = {n: bindings[n] for n in anchor_nodes}
        q = Query(structure, num_nodes, anchors, edges)
        q.answers = answer_query(kg, q)
        if q.answers:
            return q
    raise SamplingError(
        f"failed to instantiate a satisfiable {structure} query "
        f"under policy {policy} after {_MAX_RETRIES} attempts"
    )


def instantiate_pinned(
    kg: MultiViewKG, structure: str, view: int, rng: random.Random
) -> Query:
    """Sample a query whose every edge is pinned exactly to one given view.

    Used by the unobserved-view protocol: queries must be witnessed entirely
    inside the target view.
    """
    if not 0 <= view < kg.num_views:
        raise ValueError(f"view {view} outside the KG's {kg.num_views} views")
    num_nodes, anchor_nodes, edge_pairs = template_layout(structure)
    for _ in range(_MAX_RETRIES):
        walk = _backward_walk(kg, structure, EXACT, rng, forced_view=view)
        if walk is None:
            continue
        bindings, relations, _ = walk
        edges = [
            QueryEdge(src, dst, relations[i], exact(view))
            for i, (src, dst) in enumerate(edge_pairs)
        ]
        anchors = {n: bindings[n] for n in anchor_nodes}
        q = Query(structure, num_nodes, anchors, edges)
        q.answers = answer_query(kg, q)
        if q.answers:
            return q
    raise SamplingError(
        f"failed to instantiate a {structure} query pinned to view {view} "
        f"after {_MAX_RETRIES} attempts"
    )


def sample_negatives(
    kg: MultiViewKG, answers: set[int], k: int, rng: random.Random
) -> list[int]:
    """k distinct uniform non-answers; errors when the KG is too small."""
    pool = [e for e in range(kg.num_entities) if e not in answers]
    if k >= len(pool):
        raise ValueError(
            f"cannot draw k={k} negatives from {len(pool)} non-answer entities"
        )
    return rng.sample(pool, k)


def sample_training_set(
    kg: MultiViewKG,
    counts: dict[str, int],
    k: int,
    rng: random.Random,
) -> list[TrainingSample]:
    """Draw training samples: per sample a uniform constraint kind, a query
    under it, one positive answer, and k uniform negatives.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    bad = set(counts) - set(TRAIN_STRUCTURES)
    if bad:
        raise ValueError(f"training structures must be within {TRAIN_STRUCTURES}, got {sorted(bad)}")
    samples: list[TrainingSample] = []
    for structure in TRAIN_STRUCTURES:
        for _ in range(counts.get(structure, 0)):
            kind = rng.choice([EXACT, WILDCARD, EQUAL])
            q = instantiate_template(kg, structure, kind, rng)
            answers = sorted(q.answers)
            positive = rng.choice(answers)
            negatives = sample_negatives(kg, set(q.answers), k, rng)
            samples.append(TrainingSample(q, positive, negatives))
    return samples


def sample_eval_set(
    kg: MultiViewKG,
    counts: dict[str, int],
    rng: random.Random,
    policy_by_structure: dict[str, str] | None = None,
) -> list[Query]:
    """Draw evaluation queries with per-structure constraint policies."""
    policies = dict(DEFAULT_POLICY)
    if policy_by_structure:
        policies.update(policy_by_structure)
    queries: list[Query] = []
    for structure, n in counts.items():
        for _ in range(n):
            queries.append(instantiate_template(kg, structure, policies[structure], rng))
    return queries


def holdout_split(
    kg: MultiViewKG, removal_fraction: float, rng: random.Random
) -> tuple[MultiViewKG, MultiViewKG]:
    """Uniformly drop a fraction of facts; returns (train_kg, full_kg).

    Training queries should be sampled from train_kg and evaluation queries
    from full_kg, so test-time queries exercise facts unseen in training. At
    least one fact is always removed. Retries until every entity keeps an
    incident fact and every view stays non-empty.
    """
    if not 0 < removal_fraction < 1:
        raise ValueError("removal_fraction must be in (0, 1)")
    facts = kg.facts
    n_remove = max(1, round(removal_fraction * len(facts)))
    if n_remove >= len(facts):
        raise ValueError("removal fraction would delete every fact")
    for _ in range(_MAX_RETRIES):
        keep_idx = sorted(rng.sample(range(len(facts)), len(facts) - n_remove))
        kept = [facts[i] for i in keep_idx]
        touched = {f.head for f in kept} | {f.tail for f in kept}
        views = {f.view for f in kept}
        if len(touched) == kg.num_entities and len(views) == kg.num_views:
            train = MultiViewKG(
                list(kg.entity_labels), list(kg.relation_labels), list(kg.view_labels), kept
            )
            return train, kg
    raise SamplingError(
        "holdout removal kept disconnecting an entity or emptying a view; "
        "lower removal_fraction or densify the KG"
    )
