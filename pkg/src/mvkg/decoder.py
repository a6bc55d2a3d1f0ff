"""Dual decoder: relation-space and view-space query execution.

Executes a query DAG against learned embeddings. The relation decoder moves a
geometric region (a point or an axis-aligned box) through projection and
intersection operators; the view decoder moves a view-space vector through
constraint-specific transforms. A merger couples the two streams after every
node. Scores combine a margin-minus-distance relation similarity with an
element-wise correlation view similarity.

All intersection operators are exactly permutation invariant: reductions over
the branch dimension sort values per coordinate first, so reordering inputs
cannot even flip low-order floating-point bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoding import DTYPE, pos_enc
from .queries import EQUAL, EXACT, WILDCARD, Query, template_layout

GEOMETRIES = ("vector", "box")


def perm_sum(x: torch.Tensor, dim: int = 0) -> torch.Tensor:
    """Order-canonical sum: sorts along dim before reducing, so the result is
    bit-identical under any permutation of that dimension."""
    return torch.sort(x, dim=dim).values.sum(dim=dim)


def perm_softmax(logits: torch.Tensor, dim: int = 0) -> torch.Tensor:
    shifted = logits - logits.max(dim=dim, keepdim=True).values
    e = torch.exp(shifted)
    return e / perm_sum(e, dim=dim).unsqueeze(dim)


@dataclass
class RelationState:
    """Query region in relation space: a point center, plus a non-negative
    box offset under box geometry (None under vector geometry)."""

    center: torch.Tensor
    offset: torch.Tensor | None = None


@dataclass
class ViewState:
    """Query embedding in view space."""

    w: torch.Tensor


class CenterIntersection(nn.Module):
    """Attention-weighted combination of n stacked d-vectors, (n, ..., d)."""

    def __init__(self, d: int):
        super().__init__()
        self.layer1 = nn.Linear(d, d, dtype=DTYPE)
        self.layer2 = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        att = perm_softmax(self.layer2(torch.relu(self.layer1(x))), dim=0)
        return perm_sum(att * x, dim=0)


class OffsetIntersection(nn.Module):
    """Component-wise min of stacked offsets, shrunk by a gate in (0, 1)."""

    def __init__(self, d: int):
        super().__init__()
        self.layer1 = nn.Linear(d, d, dtype=DTYPE)
        self.layer2 = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, offsets: torch.Tensor) -> torch.Tensor:
        pooled = perm_sum(torch.relu(self.layer1(offsets)), dim=0) / offsets.shape[0]
        gate = torch.sigmoid(self.layer2(pooled))
        return offsets.min(dim=0).values * gate


class ExactViewProjection(nn.Module):
    """View transform conditioned on the target view's positional encoding.

    Conditioning on the closed-form encoding (instead of a per-view weight
    table) lets the transform extrapolate to view indexes never trained on.
    """

    def __init__(self, d: int):
        super().__init__()
        self.layer1 = nn.Linear(2 * d, d, dtype=DTYPE)
        self.layer2 = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, w: torch.Tensor, view_enc: torch.Tensor) -> torch.Tensor:
        return self.layer2(torch.relu(self.layer1(torch.cat([w, view_enc], dim=-1))))


class EqualViewProjection(nn.Module):
    """One shared transform applied to every equal-tagged edge."""

    def __init__(self, d: int):
        super().__init__()
        self.layer1 = nn.Linear(d, d, dtype=DTYPE)
        self.layer2 = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        return self.layer2(torch.relu(self.layer1(w)))


class Merger(nn.Module):
    """Couples the two decoder streams: m = Linear([center || w]), added back
    to both. Box offsets pass through untouched (keeps them non-negative)."""

    def __init__(self, d: int):
        super().__init__()
        self.lin = nn.Linear(2 * d, d, dtype=DTYPE)

    def forward(self, rel: RelationState, view: ViewState) -> tuple[RelationState, ViewState]:
        m = self.lin(torch.cat([rel.center, view.w], dim=-1))
        return RelationState(rel.center + m, rel.offset), ViewState(view.w + m)


def _shape_key(q: Query) -> tuple[str, tuple[str, ...]]:
    return q.structure, tuple(e.constraint.kind for e in q.edges)


@dataclass
class QueryBatch:
    """Column layout for queries sharing one (structure, constraint kinds)."""

    structure: str
    kinds: tuple[str, ...]
    size: int
    anchors: dict[int, torch.Tensor]        # node -> (B,) entity ids
    relations: list[torch.Tensor]           # per template edge, (B,)
    exact_views: list[torch.Tensor | None]  # per template edge, (B,) or None

    @staticmethod
    def from_queries(queries: list[Query]) -> "QueryBatch":
        key = _shape_key(queries[0])
        if any(_shape_key(q) != key for q in queries):
            raise ValueError("batch mixes query shapes")
        structure, kinds = key
        _, anchor_nodes, edge_pairs = template_layout(structure)
        anchors = {
            n: torch.tensor([q.anchors[n] for q in queries], dtype=torch.long)
            for n in anchor_nodes
        }
        relations = [
            torch.tensor([q.edges[i].relation for q in queries], dtype=torch.long)
            for i in range(len(edge_pairs))
        ]
        exact_views = [
            torch.tensor([q.edges[i].constraint.view for q in queries], dtype=torch.long)
            if kinds[i] == EXACT
            else None
            for i in range(len(edge_pairs))
        ]
        return QueryBatch(structure, kinds, len(queries), anchors, relations, exact_views)


def group_queries(queries: list[Query]) -> list[tuple[list[int], QueryBatch]]:
    """Split a query list into same-shape batches, keeping original indices."""
    buckets: dict[tuple, list[int]] = {}
    for i, q in enumerate(queries):
        buckets.setdefault(_shape_key(q), []).append(i)
    return [
        (idx, QueryBatch.from_queries([queries[i] for i in idx]))
        for idx in buckets.values()
    ]


class DualDecoder(nn.Module):
    def __init__(
        self,
        num_relations: int,
        d: int,
        geometry: str = "vector",
        gamma: float = 12.0,
        alpha: float = 0.2,
    ):
        super().__init__()
        if geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if gamma <= 0:
            raise ValueError("margin gamma must be positive")
        if not 0 <= alpha <= 1:
            raise ValueError("inside-weight alpha must be in [0, 1]")
        self.num_relations = num_relations
        self.d = d
        self.geometry = geometry
        self.gamma = gamma
        self.alpha = alpha
        bound = (6.0 / d) ** 0.5
        self.rel_trans = nn.Parameter(torch.empty(num_relations, d, dtype=DTYPE).uniform_(-bound, bound))
        if geometry == "box":
            self.rel_delta = nn.Parameter(torch.empty(num_relations, d, dtype=DTYPE).uniform_(0.0, bound))
            self.offset_intersect = OffsetIntersection(d)
        self.center_intersect = CenterIntersection(d)
        self.view_intersect = CenterIntersection(d)
        self.exact_proj = ExactViewProjection(d)
        self.equal_proj = EqualViewProjection(d)
        self.merger = Merger(d)
        # Instrumentation: view indexes routed through the exact transform,
        # and an optional operator call trace (enabled by setting to a list).
        self.exact_views_seen: set[int] = set()
        self.trace: list[dict] | None = None

    def _record(self, **entry) -> None:
        if self.trace is not None:
            self.trace.append(entry)

    def relation_project(self, state: RelationState, rel_ids: torch.Tensor) -> RelationState:
        if int(rel_ids.max()) >= self.num_relations or int(rel_ids.min()) < 0:
            raise ValueError("unknown relation id")
        center = state.center + self.rel_trans[rel_ids]
        if self.geometry == "box":
            offset = torch.relu(state.offset + self.rel_delta[rel_ids])
            return RelationState(center, offset)
        return RelationState(center, None)

    def relation_intersect(self, states: list[RelationState]) -> RelationState:
        if len(states) < 2:
            raise ValueError("intersection needs at least two inputs")
        centers = torch.stack([s.center for s in states], dim=0)
        center = self.center_intersect(centers)
        if self.geometry == "box":
            offsets = torch.stack([s.offset for s in states], dim=0)
            return RelationState(center, self.offset_intersect(offsets))
        return RelationState(center, None)

    def view_project(
        self,
        state: ViewState,
        kind: str,
        views: torch.Tensor | None = None,
        edge: int | None = None,
    ) -> ViewState:
        if kind == WILDCARD:
            self._record(op="view_project", kind=kind, edge=edge, module=None)
            return state
        if kind == EXACT:
            if views is None:
                raise ValueError("exact constraint requires view indexes")
            self.exact_views_seen.update(int(v) for v in views.flatten().tolist())
            self._record(op="view_project", kind=kind, edge=edge, module=id(self.exact_proj))
            return ViewState(self.exact_proj(state.w, pos_enc(views, self.d)))
        if kind == EQUAL:
            self._record(op="view_project", kind=kind, edge=edge, module=id(self.equal_proj))
            return ViewState(self.equal_proj(state.w))
        raise ValueError(f"unknown constraint kind {kind!r}")

    def view_intersect_op(self, states: list[ViewState]) -> ViewState:
        if len(states) < 2:
            raise ValueError("intersection needs at least two inputs")
        return ViewState(self.view_intersect(torch.stack([s.w for s in states], dim=0)))

    def decode_batch(
        self,
        H: torch.Tensor,
        E: torch.Tensor,
        Theta: torch.Tensor,
        batch: QueryBatch,
        no_residual: bool = False,
        no_view_decoder: bool = False,
    ) -> tuple[RelationState, ViewState | None]:
        """Run one same-shape batch through the DAG in topological order.

        Anchors start from H plus the matching initial-encoding residual
        (semantic for the relation stream, view-set for the view stream);
        no_residual drops both residuals. Every non-anchor node applies the
        per-edge projections, intersects when in-degree > 1, then merges the
        two streams; no_view_decoder skips the view stream and the merger.
        """
        num_nodes, anchor_nodes, edge_pairs = template_layout(batch.structure)
        rel_states: dict[int, RelationState] = {}
        view_states: dict[int, ViewState] = {}
        for n in anchor_nodes:
            ids = batch.anchors[n]
            center = H[ids] if no_residual else H[ids] + E[ids]
            offset = torch.zeros_like(center) if self.geometry == "box" else None
            rel_states[n] = RelationState(center, offset)
            if not no_view_decoder:
                view_states[n] = ViewState(H[ids] if no_residual else H[ids] + Theta[ids])
        in_edges: dict[int, list[int]] = {}
        for i, (_, dst) in enumerate(edge_pairs):
            in_edges.setdefault(dst, []).append(i)
        order = [n for n in _topo_order(num_nodes, edge_pairs) if n not in anchor_nodes]
        for node in order:
            rel_branches, view_branches = [], []
            for i in in_edges[node]:
                src = edge_pairs[i][0]
                rel_branches.append(self.relation_project(rel_states[src], batch.relations[i]))
                if not no_view_decoder:
                    view_branches.append(
                        self.view_project(view_states[src], batch.kinds[i], batch.exact_views[i], edge=i)
                    )
            rel = rel_branches[0] if len(rel_branches) == 1 else self.relation_intersect(rel_branches)
            if no_view_decoder:
                rel_states[node] = rel
                continue
            view = view_branches[0] if len(view_branches) == 1 else self.view_intersect_op(view_branches)
            rel, view = self.merger(rel, view)
            self._record(op="merge", node=node, module=id(self.merger))
            rel_states[node] = rel
            view_states[node] = view
        answer = num_nodes - 1
        return rel_states[answer], (None if no_view_decoder else view_states[answer])

    def decode_query(
        self,
        H: torch.Tensor,
        E: torch.Tensor,
        Theta: torch.Tensor,
        q: Query,
        no_residual: bool = False,
        no_view_decoder: bool = False,
    ) -> tuple[RelationState, ViewState | None]:
        """Single-query convenience wrapper over decode_batch (B=1)."""
        rel, view = self.decode_batch(
            H, E, Theta, QueryBatch.from_queries([q]), no_residual, no_view_decoder
        )
        rel1 = RelationState(rel.center[0], None if rel.offset is None else rel.offset[0])
        return rel1, (None if view is None else ViewState(view.w[0]))

    def score_relation(self, state: RelationState, points: torch.Tensor) -> torch.Tensor:
        """Sim_R = gamma - Dist(query region, candidate point).

        Vector geometry uses L1 distance. Box geometry splits the distance at
        the box boundary: the part outside the box counts fully, the part
        inside (boundary toward center) is down-weighted by alpha.
        """
        delta = (points - state.center).abs()
        if self.geometry == "vector":
            return self.gamma - delta.sum(dim=-1)
        outside = torch.relu(delta - state.offset)
        inside = torch.minimum(delta, state.offset)
        return self.gamma - (outside.sum(dim=-1) + self.alpha * inside.sum(dim=-1))

    @staticmethod
    def score_view(w: torch.Tensor, thetas: torch.Tensor) -> torch.Tensor:
        """Sim_Θ: element-wise correlation (1/d) Σ w ⊙ θ."""
        if w.shape[-1] != thetas.shape[-1]:
            raise ValueError("view-space dimension mismatch")
        return (w * thetas).mean(dim=-1)


def _topo_order(num_nodes: int, edge_pairs) -> list[int]:
    in_deg = [0] * num_nodes
    succ = {n: [] for n in range(num_nodes)}
    for src, dst in edge_pairs:
        in_deg[dst] += 1
        succ[src].append(dst)
    ready = [n for n in range(num_nodes) if in_deg[n] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in succ[n]:
            in_deg[m] -= 1
            if in_deg[m] == 0:
                ready.append(m)
    return order
