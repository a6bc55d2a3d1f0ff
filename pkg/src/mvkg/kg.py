"""In-memory multi-view knowledge graph with per-view adjacency indexes.

A multi-view KG is a set of overlaying sub-KGs that share one entity set;
each sub-KG ("view") holds its own facts. Facts are (head, relation, tail,
view) quadruples over dense integer ids.
"""
from __future__ import annotations

import random
from typing import IO, Iterable, NamedTuple

import numpy as np

# Wildcard marker for "any view" in neighbor lookups.
WILDCARD = None


class IngestError(ValueError):
    """Raised when a quadruple stream cannot be parsed."""


class Fact(NamedTuple):
    head: int
    relation: int
    tail: int
    view: int


class MultiViewKG:
    """Immutable multi-view KG: vocabulary, facts, and traversal indexes.

    Construction is single-threaded; afterwards the object is read-only and
    safe to share across workers.
    """

    def __init__(
        self,
        entity_labels: list[str],
        relation_labels: list[str],
        view_labels: list[str],
        facts: Iterable[Fact],
    ):
        self.entity_labels = list(entity_labels)
        self.relation_labels = list(relation_labels)
        self.view_labels = list(view_labels)
        self.entity_index = {lbl: i for i, lbl in enumerate(self.entity_labels)}
        self.relation_index = {lbl: i for i, lbl in enumerate(self.relation_labels)}
        self.view_index = {lbl: i for i, lbl in enumerate(self.view_labels)}
        if len(self.entity_index) != len(self.entity_labels):
            raise ValueError("duplicate entity labels")
        if len(self.view_index) != len(self.view_labels):
            raise ValueError("duplicate view labels")

        self.facts: list[Fact] = []
        seen: set[Fact] = set()
        for f in facts:
            f = Fact(*f)
            if not (0 <= f.head < self.num_entities and 0 <= f.tail < self.num_entities):
                raise ValueError(f"fact {f} references unknown entity")
            if not 0 <= f.relation < self.num_relations:
                raise ValueError(f"fact {f} references unknown relation")
            if not 0 <= f.view < self.num_views:
                raise ValueError(f"fact {f} references unknown view")
            if f in seen:
                continue
            seen.add(f)
            self.facts.append(f)
        self.fact_set = seen

        # out index: (head, relation) -> [(tail, view)], insertion order
        self._out: dict[tuple[int, int], list[tuple[int, int]]] = {}
        # in index: tail -> [facts], used by backward query sampling
        self._in_facts: dict[int, list[Fact]] = {}
        self.view_sets: list[set[int]] = [set() for _ in range(self.num_entities)]
        for f in self.facts:
            self._out.setdefault((f.head, f.relation), []).append((f.tail, f.view))
            self._in_facts.setdefault(f.tail, []).append(f)
            self.view_sets[f.head].add(f.view)
            self.view_sets[f.tail].add(f.view)
        self._adjacency: np.ndarray | None = None

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def num_views(self) -> int:
        return len(self.view_labels)

    def neighbors(self, head: int, relation: int, view: int | None = WILDCARD) -> set[int]:
        """Tails of facts (head, relation, tail, v); all views when wildcard."""
        out = self._out.get((head, relation), [])
        if view is WILDCARD:
            return {t for t, _ in out}
        return {t for t, v in out if v == view}

    def out_edges(self, head: int, relation: int) -> list[tuple[int, int]]:
        """(tail, view) pairs for the given head and relation."""
        return self._out.get((head, relation), [])

    def in_facts(self, tail: int) -> list[Fact]:
        """Facts whose tail is the given entity."""
        return self._in_facts.get(tail, [])

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean entity-pair matrix, unioned over views.

        Edges are treated as undirected and self-loops are set, so the matrix
        is usable directly as an attention mask (no all-false rows).
        """
        if self._adjacency is None:
            a = np.eye(self.num_entities, dtype=bool)
            for f in self.facts:
                a[f.head, f.tail] = True
                a[f.tail, f.head] = True
            self._adjacency = a
        return self._adjacency

    def to_tsv_lines(self) -> list[str]:
        """Label-based quadruple lines; parsing them back round-trips."""
        return [
            "\t".join(
                (
                    self.entity_labels[f.head],
                    self.relation_labels[f.relation],
                    self.entity_labels[f.tail],
                    self.view_labels[f.view],
                )
            )
            for f in self.facts
        ]

    def write_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_tsv_lines():
                fh.write(line + "\n")

    def label_quadruples(self) -> set[tuple[str, str, str, str]]:
        return {tuple(line.split("\t")) for line in self.to_tsv_lines()}

    def __eq__(self, other: object) -> bool:
        """Content equality at the label level (id assignment may differ)."""
        if not isinstance(other, MultiViewKG):
            return NotImplemented
        return (
            set(self.entity_labels) == set(other.entity_labels)
            and set(self.relation_labels) == set(other.relation_labels)
            and self.view_labels == other.view_labels
            and self.label_quadruples() == other.label_quadruples()
        )

    def __repr__(self) -> str:
        return (
            f"MultiViewKG(|V|={self.num_entities}, |R|={self.num_relations}, "
            f"|facts|={len(self.facts)}, |views|={self.num_views})"
        )


def ingest_quadruples(source: Iterable[str] | IO[str]) -> MultiViewKG:
    """Parse a line-oriented quadruple stream into a MultiViewKG.

    Each non-empty, non-comment line must be ``head<TAB>relation<TAB>tail<TAB>view``.
    Entity and relation ids are assigned in first-seen order. View ids follow
    first-seen order unless every view label parses as an integer, in which
    case views are sorted numerically (meaningful for positional encoding of
    ordered views such as time periods).
    """
    rows: list[tuple[str, str, str, str]] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise IngestError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        rows.append((parts[0], parts[1], parts[2], parts[3]))
    if not rows:
        raise IngestError("empty quadruple stream")

    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    view_seen: list[str] = []
    for h, r, t, v in rows:
        entities.setdefault(h, len(entities))
        relations.setdefault(r, len(relations))
        entities.setdefault(t, len(entities))
        if v not in view_seen:
            view_seen.append(v)

    def _as_int(label: str) -> int | None:
        try:
            return int(label)
        except ValueError:
            return None

    if all(_as_int(v) is not None for v in view_seen):
        view_labels = sorted(view_seen, key=int)
    else:
        view_labels = view_seen
    views = {lbl: i for i, lbl in enumerate(view_labels)}

    facts = [Fact(entities[h], relations[r], entities[t], views[v]) for h, r, t, v in rows]
    return MultiViewKG(list(entities), list(relations), view_labels, facts)


def load_kg(path: str) -> MultiViewKG:
    with open(path, "r", encoding="utf-8") as fh:
        return ingest_quadruples(fh)


def generate_toy_kg(
    num_entities: int,
    num_relations: int,
    num_views: int,
    facts_per_view: int,
    seed: int,
) -> MultiViewKG:
    """Deterministic synthetic KG with every view non-empty and every entity
    incident to at least one fact.

    Exactly ``facts_per_view`` facts per view. Coverage is established first
    by pairing shuffled entities round-robin across views; remaining slots are
    filled with random distinct quadruples.
    """
    if min(num_entities, num_relations, num_views) < 1 or facts_per_view < 1:
        raise ValueError("all generator parameters must be >= 1")
    pair_capacity = num_entities * max(num_entities - 1, 1)
    if facts_per_view > pair_capacity * num_relations:
        raise ValueError("facts_per_view exceeds the number of distinct quadruples per view")

    rng = random.Random(seed)
    ents = list(range(num_entities))
    rng.shuffle(ents)
    pairs = [(ents[i], ents[i + 1]) for i in range(0, num_entities - 1, 2)]
    if num_entities == 1:
        pairs = [(0, 0)]
    elif num_entities % 2 == 1:
        pairs.append((ents[-1], ents[0]))
    if len(pairs) > num_views * facts_per_view:
        raise ValueError("not enough fact slots to cover every entity")

    per_view_counts = [0] * num_views
    fact_set: set[Fact] = set()
    facts: list[Fact] = []
    for i, (h, t) in enumerate(pairs):
        v = i % num_views
        if per_view_counts[v] >= facts_per_view:
            raise ValueError("entity coverage does not fit into facts_per_view")
        f = Fact(h, rng.randrange(num_relations), t, v)
        if f not in fact_set:
            fact_set.add(f)
            facts.append(f)
            per_view_counts[v] += 1

    for v in range(num_views):
        while per_view_counts[v] < facts_per_view:
            h = rng.randrange(num_entities)
            t = rng.randrange(num_entities)
            if num_entities > 1 and t == h:
                continue
            f = Fact(h, rng.randrange(num_relations), t, v)
            if f in fact_set:
                continue
            fact_set.add(f)
            facts.append(f)
            per_view_counts[v] += 1

    return MultiViewKG(
        [f"e{i}" for i in range(num_entities)],
        [f"r{i}" for i in range(num_relations)],
        [str(i) for i in range(num_views)],
        facts,
    )


def collapse_views(kg: MultiViewKG) -> MultiViewKG:
    """View-agnostic collapse: every fact merged into a single view."""
    facts = [Fact(f.head, f.relation, f.tail, 0) for f in kg.facts]
    return MultiViewKG(kg.entity_labels, kg.relation_labels, ["0"], facts)


def subset_by_views(kg: MultiViewKG, keep_views: set[int]) -> MultiViewKG:
    """Sub-KG holding only the facts of the given views.

    The full entity/relation/view vocabulary is preserved so embeddings and
    ids stay aligned with the source KG.
    """
    facts = [f for f in kg.facts if f.view in keep_views]
    return MultiViewKG(kg.entity_labels, kg.relation_labels, kg.view_labels, facts)
