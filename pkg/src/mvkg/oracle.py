"""Exact symbolic query answering by KG traversal.

Answers a conjunctive query with full view-constraint semantics: exact edges
use only facts in the named view, wildcard edges use any view, and equal-group
edges must all be witnessed within one consistent view per group. Equal
assignments are tracked as records attached to frontier entities; intersection
nodes merge records by compatible union and drop incompatible combinations.

Each group binds one view per answer derivation, but different answers (or
different derivations of the same answer) may bind different views.
"""
from __future__ import annotations

from itertools import product

from .kg import MultiViewKG
from .queries import EQUAL, EXACT, Query

# A record: frozen set of (equal_group, view) pairs, one view per group.
Record = frozenset

DEFAULT_MAX_BINDINGS = 10**6


class OracleLimitError(RuntimeError):
    """Traversal frontier exceeded the configured binding budget."""


def _merge_records(records: tuple[Record, ...]) -> Record | None:
    """Compatible union of group->view records; None when two disagree."""
    merged: dict[int, int] = {}
    for record in records:
        for group, view in record:
            if merged.setdefault(group, view) != view:
                return None
    return frozenset(merged.items())


def _propagate(kg: MultiViewKG, frontier: dict[int, set[Record]], edge) -> dict[int, set[tuple[Record, int]]]:
    """Push one edge's frontier through the KG.

    Returns target entity -> set of (record, witness view) pairs, where the
    witness view is the view of the fact that crossed this edge.
    """
    con = edge.constraint
    out: dict[int, set[tuple[Record, int]]] = {}
    for entity, records in frontier.items():
        for tail, view in kg.out_edges(entity, edge.relation):
            if con.kind == EXACT and view != con.view:
                continue
            for record in records:
                if con.kind == EQUAL:
                    merged = _merge_records((record, frozenset([(con.group, view)])))
                    if merged is None:
                        continue
                    record = merged
                out.setdefault(tail, set()).add((record, view))
    return out


def _traverse(kg: MultiViewKG, q: Query, max_bindings: int) -> dict[int, set[tuple[Record, Record]]]:
    """Map each entity reachable at the answer node to its derivations.

    Each derivation is a (record, witness_views) pair: the equal-group view
    assignment, and the frozen set of views witnessing the final-hop facts
    into the answer node.
    """
    frontiers: dict[int, dict[int, set[Record]]] = {}
    total = 0
    answer_node = q.answer_node
    result: dict[int, set[tuple[Record, Record]]] = {}
    for node in q.topological_order():
        if node in q.anchors:
            frontiers[node] = {q.anchors[node]: {frozenset()}}
            total += 1
            continue
        in_edges = q.in_edges(node)
        per_edge = [_propagate(kg, frontiers[e.source], e) for e in in_edges]
        candidates = set(per_edge[0])
        for m in per_edge[1:]:
            candidates &= set(m)
        node_frontier: dict[int, set[Record]] = {}
        for entity in candidates:
            # Cross product over the incoming edges' derivations; records
            # that disagree on a group's view are discarded, not errors.
            for combo in product(*(m[entity] for m in per_edge)):
                merged = _merge_records(tuple(rec for rec, _ in combo))
                if merged is None:
                    continue
                node_frontier.setdefault(entity, set()).add(merged)
                if node == answer_node:
                    views = frozenset(view for _, view in combo)
                    result.setdefault(entity, set()).add((merged, views))
        frontiers[node] = node_frontier
        total += sum(len(recs) for recs in node_frontier.values())
        if total > max_bindings:
            raise OracleLimitError(
                f"traversal exceeded {max_bindings} bindings; "
                "raise max_bindings or simplify the query"
            )
    return result


def answer_query(kg: MultiViewKG, q: Query, max_bindings: int = DEFAULT_MAX_BINDINGS) -> set[int]:
    """Entities reachable at the answer node under all constraints."""
    return set(_traverse(kg, q, max_bindings))


def answer_views(
    kg: MultiViewKG, q: Query, max_bindings: int = DEFAULT_MAX_BINDINGS
) -> dict[int, set[int]]:
    """Per answer entity, the views witnessing the final-hop facts.

    Serves as view-level ground truth when evaluating the view score.
    """
    derivations = _traverse(kg, q, max_bindings)
    return {
        entity: {view for _, views in pairs for view in views}
        for entity, pairs in derivations.items()
    }


def annotate_answers(kg: MultiViewKG, q: Query, max_bindings: int = DEFAULT_MAX_BINDINGS) -> Query:
    """Fill ``q.answers`` from the oracle (in place) and return ``q``."""
    q.answers = answer_query(kg, q, max_bindings)
    return q
