"""Masked self-attention encoder over the entity set.

Maps initial encodings Z to latent embeddings H. Attention coefficients are
restricted to KG neighbors (plus self-loops) by a boolean adjacency mask, so
information propagates only along graph edges; L layers reach L-hop context.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .encoding import DTYPE

MASK_MODES = ("pre", "post")


def masked_attention(
    Z: torch.Tensor,
    A: torch.Tensor,
    w_q: torch.Tensor,
    w_k: torch.Tensor,
    mask_mode: str = "pre",
) -> torch.Tensor:
    """Pairwise coefficients C = softmax(QK^T / sqrt(d)) masked by A.

    Default masks logits before the softmax (masked entries get -inf), which
    keeps every row summing to 1. mask_mode="post" zeroes coefficients after
    the softmax instead; rows then sum to less than 1 wherever the mask bites.
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"mask_mode must be one of {MASK_MODES}")
    if A.dtype != torch.bool:
        A = A.bool()
    if not A.any(dim=1).all():
        raise ValueError("adjacency mask has an all-false row; self-loops required")
    q = Z @ w_q
    k = Z @ w_k
    logits = (q @ k.T) / math.sqrt(Z.shape[-1])
    if mask_mode == "pre":
        logits = logits.masked_fill(~A, float("-inf"))
        return torch.softmax(logits, dim=-1)
    return torch.softmax(logits, dim=-1) * A


def masked_attention_sparse(
    Z: torch.Tensor,
    neighbors: list[list[int]],
    w_q: torch.Tensor,
    w_k: torch.Tensor,
) -> torch.Tensor:
    """Neighbor-list variant of masked_attention (mask_mode="pre" only).

    Computes each row's softmax over its neighbor list instead of the dense
    |V| x |V| score matrix; returns the same dense C for comparison.
    """
    q = Z @ w_q
    k = Z @ w_k
    scale = math.sqrt(Z.shape[-1])
    C = torch.zeros(Z.shape[0], Z.shape[0], dtype=Z.dtype)
    for i, nbrs in enumerate(neighbors):
        if not nbrs:
            raise ValueError(f"entity {i} has no neighbors; self-loops required")
        idx = torch.tensor(nbrs, dtype=torch.long)
        logits = (k[idx] @ q[i]) / scale
        C[i, idx] = torch.softmax(logits, dim=0)
    return C


def attention_update(C: torch.Tensor, Z: torch.Tensor, w_v: torch.Tensor) -> torch.Tensor:
    """One head's update: H = C (Z W_V)."""
    if C.shape[1] != Z.shape[0]:
        raise ValueError("coefficient and encoding shapes do not conform")
    return C @ (Z @ w_v)


class AttentionLayer(nn.Module):
    """Multi-head masked attention: per-head update, concat, merge, residual."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ValueError("head count must divide the model dimension")
        self.d = d
        self.n_heads = n_heads
        d_head = d // n_heads
        def mat(*shape):
            scale = 1.0 / math.sqrt(d)
            return nn.Parameter(torch.empty(*shape, dtype=DTYPE).uniform_(-scale, scale))
        self.w_q = mat(n_heads, d, d_head)
        self.w_k = mat(n_heads, d, d_head)
        self.w_v = mat(n_heads, d, d_head)
        self.merge = mat(d, d)

    def forward(
        self,
        Z: torch.Tensor,
        A: torch.Tensor,
        mask_mode: str = "pre",
        neighbors: list[list[int]] | None = None,
    ) -> torch.Tensor:
        heads = []
        for h in range(self.n_heads):
            if neighbors is None:
                C = masked_attention(Z, A, self.w_q[h], self.w_k[h], mask_mode)
            else:
                C = masked_attention_sparse(Z, neighbors, self.w_q[h], self.w_k[h])
            heads.append(attention_update(C, Z, self.w_v[h]))
        merged = torch.cat(heads, dim=-1) @ self.merge
        return Z + merged


class AttentionEncoder(nn.Module):
    """L stacked attention layers; L=0 is the identity (no-encoder ablation)."""

    def __init__(self, d: int, num_layers: int, n_heads: int, mask_mode: str = "pre"):
        super().__init__()
        if mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        self.mask_mode = mask_mode
        self.layers = nn.ModuleList(AttentionLayer(d, n_heads) for _ in range(num_layers))

    def forward(
        self,
        Z: torch.Tensor,
        A: torch.Tensor,
        neighbors: list[list[int]] | None = None,
    ) -> torch.Tensor:
        H = Z
        for layer in self.layers:
            H = layer(H, A, self.mask_mode, neighbors)
        return H


def neighbor_lists(A: torch.Tensor) -> list[list[int]]:
    """Adjacency mask rows as index lists, for the sparse attention path."""
    return [torch.nonzero(row, as_tuple=False).flatten().tolist() for row in A.bool()]
