"""Initial per-entity encodings.

Each entity gets a trainable semantic vector plus a view-membership summary:
the set of views the entity appears in, encoded by fixed trigonometric
positional vectors and aggregated by a permutation-invariant set network.
The two parts combine by element-wise addition.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import torch
from torch import nn

DTYPE = torch.float64


def pos_enc(position: int | torch.Tensor, d: int) -> torch.Tensor:
    """Fixed trigonometric encoding of a view index.

    Component 2i is sin(pos / 10000^(2i/d)), component 2i+1 the matching cos.
    Closed-form, so indexes never seen during training still get encodings.
    """
    if d % 2 != 0:
        raise ValueError("positional encoding dimension must be even")
    if isinstance(position, int):
        if position < 0:
            raise ValueError("view index must be non-negative")
        pos = torch.tensor([position], dtype=DTYPE)
        return pos_enc(pos, d)[0]
    pos = position.to(DTYPE)
    if (pos < 0).any():
        raise ValueError("view index must be non-negative")
    pair = torch.arange(d // 2, dtype=DTYPE)
    denom = torch.pow(torch.tensor(10000.0, dtype=DTYPE), 2.0 * pair / d)
    angle = pos.unsqueeze(-1) / denom  # (..., d/2)
    out = torch.empty(*pos.shape, d, dtype=DTYPE)
    out[..., 0::2] = torch.sin(angle)
    out[..., 1::2] = torch.cos(angle)
    return out


class SetAggregator(nn.Module):
    """Permutation-invariant multiset encoder.

    Per-element transform with a nonlinearity, sum pooling over the set
    dimension, then an output transform. Sum pooling makes the map invariant
    to input order; callers pass elements in a canonical order so the
    invariance is exact in floating point, not just up to reassociation.
    """

    def __init__(self, d: int):
        super().__init__()
        self.elem = nn.Linear(d, d, dtype=DTYPE)
        self.out = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: (..., set, d); mask: (..., set) with 1 for real elements
        h = torch.relu(self.elem(x))
        if mask is not None:
            h = h * mask.unsqueeze(-1)
        return self.out(h.sum(dim=-2))


class InitialEncodings(nn.Module):
    """Trainable semantic table + fixed view positions + set aggregation.

    z_v = e_v + SetEnc({PosEnc(view) for view in views(v)}), where e_v is the
    semantic row and the positional table is an untrainable buffer.
    """

    def __init__(self, num_entities: int, num_views: int, d: int, view_sets: Sequence[set[int]]):
        super().__init__()
        if len(view_sets) != num_entities:
            raise ValueError("one view set per entity required")
        self.num_entities = num_entities
        self.num_views = num_views
        self.d = d
        bound = math.sqrt(6.0 / d)
        table = torch.empty(num_entities, d, dtype=DTYPE).uniform_(-bound, bound)
        self.semantic = nn.Parameter(table)
        self.agg = SetAggregator(d)
        self.register_buffer("pos_table", pos_enc(torch.arange(num_views), d))
        # Incidence pairs in canonical (entity, ascending view) order.
        ent_idx, view_idx = [], []
        for ent, views in enumerate(view_sets):
            if not views:
                raise ValueError(f"entity {ent} appears in no view")
            for v in sorted(views):
                ent_idx.append(ent)
                view_idx.append(v)
        self.register_buffer("ent_idx", torch.tensor(ent_idx, dtype=torch.long))
        self.register_buffer("view_idx", torch.tensor(view_idx, dtype=torch.long))

    def view_set_encoding(self, views: Iterable[int]) -> torch.Tensor:
        """θ for one multiset of views; exactly order-invariant (sorts first)."""
        idx = sorted(set(int(v) for v in views))
        if not idx:
            raise ValueError("view set must be non-empty")
        rows = pos_enc(torch.tensor(idx, dtype=DTYPE), self.d)
        return self.agg(rows)

    def all_view_encodings(self) -> torch.Tensor:
        """θ for every entity at once, (|V|, d)."""
        phi = torch.relu(self.agg.elem(self.pos_table))  # (|Θ|, d)
        pooled = torch.zeros(self.num_entities, self.d, dtype=DTYPE)
        pooled = pooled.index_add(0, self.ent_idx, phi[self.view_idx])
        return self.agg.out(pooled)

    def singleton_view_encodings(self, num_views: int | None = None) -> torch.Tensor:
        """θ of {view} for each view index, (|Θ|, d); used to rank views."""
        n = self.num_views if num_views is None else num_views
        rows = pos_enc(torch.arange(n), self.d)  # (n, d)
        return self.agg(rows.unsqueeze(-2))

    def initial(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(Z, E, Θ) with Z = E + Θ element-wise."""
        theta = self.all_view_encodings()
        return self.semantic + theta, self.semantic, theta


def combine(e_v: torch.Tensor, theta_v: torch.Tensor) -> torch.Tensor:
    """Element-wise combination z_v = e_v + θ_v."""
    if e_v.shape != theta_v.shape:
        raise ValueError(f"dimension mismatch: {tuple(e_v.shape)} vs {tuple(theta_v.shape)}")
    return e_v + theta_v
