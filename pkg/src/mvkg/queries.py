"""Conjunctive queries as computation DAGs with per-edge view constraints.

A query is a DAG from anchor nodes (bound to known entities) through variable
nodes to a single answer node. Each edge carries a relation and a view
constraint: exact (one named view), wildcard (any view), or equal (all edges
sharing a group tag must be witnessed within one common view).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

EXACT = "exact"
WILDCARD = "wildcard"
EQUAL = "equal"

CONSTRAINT_KINDS = (EXACT, WILDCARD, EQUAL)

# Supported DAG shapes; nP = n-hop projection chain, nI = n-way intersection,
# 2ip = intersection then projection, 2pi = two projections then intersection.
STRUCTURES = ("1p", "2p", "3p", "2i", "3i", "2ip", "2pi")
TRAIN_STRUCTURES = ("1p", "2p", "2i", "3i")


@dataclass(frozen=True)
class ViewConstraint:
    kind: str
    view: int | None = None    # exact only
    group: int | None = None   # equal only

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == EXACT and self.view is None:
            raise ValueError("exact constraint requires a view")
        if self.kind == EQUAL and self.group is None:
            raise ValueError("equal constraint requires a group tag")

    def to_json(self) -> dict:
        if self.kind == EXACT:
            return {"kind": "exact", "view": self.view}
        if self.kind == EQUAL:
            return {"kind": "equal", "group": self.group}
        return {"kind": "wildcard"}

    @staticmethod
    def from_json(obj: dict) -> "ViewConstraint":
        kind = obj["kind"]
        if kind == EXACT:
            return ViewConstraint(EXACT, view=int(obj["view"]))
        if kind == EQUAL:
            return ViewConstraint(EQUAL, group=int(obj["group"]))
        return ViewConstraint(WILDCARD)


def wildcard() -> ViewConstraint:
    return ViewConstraint(WILDCARD)


def exact(view: int) -> ViewConstraint:
    return ViewConstraint(EXACT, view=view)


def equal(group: int) -> ViewConstraint:
    return ViewConstraint(EQUAL, group=group)


@dataclass(frozen=True)
class QueryEdge:
    source: int
    target: int
    relation: int
    constraint: ViewConstraint

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("query edge endpoints must differ")


# Canonical node layouts: anchors first, variables next, answer node last.
# Each entry maps a structure tag to its (num_nodes, anchor_nodes, edge list
# of (source, target)).
_TEMPLATES: dict[str, tuple[int, tuple[int, ...], tuple[tuple[int, int], ...]]] = {
    "1p": (2, (0,), ((0, 1),)),
    "2p": (3, (0,), ((0, 1), (1, 2))),
    "3p": (4, (0,), ((0, 1), (1, 2), (2, 3))),
    "2i": (3, (0, 1), ((0, 2), (1, 2))),
    "3i": (4, (0, 1, 2), ((0, 3), (1, 3), (2, 3))),
    "2ip": (4, (0, 1), ((0, 2), (1, 2), (2, 3))),
    "2pi": (4, (0, 2), ((0, 1), (1, 3), (2, 3))),
}


def template_layout(structure: str) -> tuple[int, tuple[int, ...], tuple[tuple[int, int], ...]]:
    if structure not in _TEMPLATES:
        raise ValueError(f"unknown query structure {structure!r}")
    return _TEMPLATES[structure]


@dataclass
class Query:
    """Computation DAG: anchors -> variables -> one answer node (the sink)."""

    structure: str
    num_nodes: int
    anchors: dict[int, int]  # node index -> entity id
    edges: list[QueryEdge]
    answers: set[int] | None = None

    def __post_init__(self):
        self.validate()

    @property
    def answer_node(self) -> int:
        return self.num_nodes - 1

    @property
    def variable_nodes(self) -> list[int]:
        return [n for n in range(self.num_nodes) if n not in self.anchors and n != self.answer_node]

    def validate(self) -> None:
        in_deg = [0] * self.num_nodes
        out_deg = [0] * self.num_nodes
        for e in self.edges:
            if not (0 <= e.source < self.num_nodes and 0 <= e.target < self.num_nodes):
                raise ValueError("edge references a node outside the DAG")
            in_deg[e.target] += 1
            out_deg[e.source] += 1
        sinks = [n for n in range(self.num_nodes) if out_deg[n] == 0]
        if sinks != [self.answer_node]:
            raise ValueError("query must have exactly one sink, the answer node")
        for a in self.anchors:
            if in_deg[a] != 0:
                raise ValueError("anchor nodes must have in-degree 0")
        for n in range(self.num_nodes):
            if n not in self.anchors and in_deg[n] == 0:
                raise ValueError(f"non-anchor node {n} is unreachable")
        self.topological_order()  # raises on cycles

    def topological_order(self) -> list[int]:
        in_deg = [0] * self.num_nodes
        succ: dict[int, list[int]] = {n: [] for n in range(self.num_nodes)}
        for e in self.edges:
            in_deg[e.target] += 1
            succ[e.source].append(e.target)
        ready = [n for n in range(self.num_nodes) if in_deg[n] == 0]
        order: list[int] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for m in succ[n]:
                in_deg[m] -= 1
                if in_deg[m] == 0:
                    ready.append(m)
        if len(order) != self.num_nodes:
            raise ValueError("query graph contains a cycle")
        return order

    def in_edges(self, node: int) -> list[QueryEdge]:
        return [e for e in self.edges if e.target == node]

    def to_json(self) -> dict:
        obj = {
            "structure": self.structure,
            "anchors": [[n, e] for n, e in sorted(self.anchors.items())],
            "edges": [
                {
                    "src": e.source,
                    "dst": e.target,
                    "relation": e.relation,
                    "constraint": e.constraint.to_json(),
                }
                for e in self.edges
            ],
            "answers": sorted(self.answers) if self.answers is not None else None,
        }
        return obj

    @staticmethod
    def from_json(obj: dict) -> "Query":
        structure = obj["structure"]
        num_nodes, _, _ = template_layout(structure)
        edges = [
            QueryEdge(
                int(e["src"]),
                int(e["dst"]),
                int(e["relation"]),
                ViewConstraint.from_json(e["constraint"]),
            )
            for e in obj["edges"]
        ]
        anchors = {int(n): int(e) for n, e in obj["anchors"]}
        answers = set(obj["answers"]) if obj.get("answers") is not None else None
        return Query(structure, num_nodes, anchors, edges, answers)


def build_query(
    structure: str,
    anchor_entities: Iterable[int],
    relations: Iterable[int],
    constraints: Iterable[ViewConstraint],
) -> Query:
    """Assemble a query from a template layout plus per-edge payloads.

    ``relations`` and ``constraints`` follow the template's edge order;
    ``anchor_entities`` follows the template's anchor node order.
    """
    num_nodes, anchor_nodes, edge_pairs = template_layout(structure)
    anchor_entities = list(anchor_entities)
    relations = list(relations)
    constraints = list(constraints)
    if len(anchor_entities) != len(anchor_nodes):
        raise ValueError(f"{structure} expects {len(anchor_nodes)} anchors")
    if len(relations) != len(edge_pairs) or len(constraints) != len(edge_pairs):
        raise ValueError(f"{structure} expects {len(edge_pairs)} relations and constraints")
    edges = [
        QueryEdge(src, dst, rel, con)
        for (src, dst), rel, con in zip(edge_pairs, relations, constraints)
    ]
    anchors = dict(zip(anchor_nodes, anchor_entities))
    return Query(structure, num_nodes, anchors, edges)


def strip_view_constraints(q: Query) -> Query:
    """Replace every view constraint with a wildcard (answers preserved).

    Used to pose queries to a view-agnostic model that cannot observe views.
    """
    edges = [QueryEdge(e.source, e.target, e.relation, wildcard()) for e in q.edges]
    return Query(q.structure, q.num_nodes, dict(q.anchors), edges, q.answers)


@dataclass
class TrainingSample:
    query: Query
    positive: int
    negatives: list[int]

    def __post_init__(self):
        answers = self.query.answers or set()
        if self.positive not in answers:
            raise ValueError("positive must be a ground-truth answer")
        if set(self.negatives) & answers:
            raise ValueError("negatives must be disjoint from the answer set")


def write_queries_jsonl(queries: Iterable[Query], fh: IO[str]) -> None:
    for q in queries:
        fh.write(json.dumps(q.to_json(), separators=(",", ":")) + "\n")


def read_queries_jsonl(fh: IO[str]) -> list[Query]:
    out = []
    for line in fh:
        line = line.strip()
        if line:
            out.append(Query.from_json(json.loads(line)))
    return out
