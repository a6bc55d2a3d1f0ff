"""Full query-answering model: initial encodings, attention encoder, dual
decoder, entity/view scoring, and checkpoint round-trip.

Ablations: "no-encoder" uses zero attention layers (H = Z), "no-residual"
starts decoding from H rows without the initial-encoding residuals, and
"no-view-decoder" scores with the relation stream only.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .decoder import DualDecoder, QueryBatch, RelationState, ViewState, group_queries
from .encoder import AttentionEncoder, neighbor_lists
from .encoding import DTYPE, InitialEncodings
from .kg import MultiViewKG
from .queries import Query

ABLATIONS = ("none", "no-encoder", "no-residual", "no-view-decoder")


@dataclass
class ModelConfig:
    d: int = 64
    num_layers: int = 2
    n_heads: int = 2
    geometry: str = "vector"
    gamma: float = 12.0
    alpha: float = 0.2
    ablation: str = "none"
    mask_mode: str = "pre"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.d <= 0 or self.d % 2 != 0:
            raise ValueError("d must be a positive even integer")


@dataclass
class DecodedStates:
    """Per-query final states, aligned with the input query order."""

    centers: torch.Tensor            # (N, d)
    offsets: torch.Tensor | None     # (N, d) under box geometry
    ws: torch.Tensor | None          # (N, d) unless the view decoder is off


class QueryModel(nn.Module):
    def __init__(self, kg: MultiViewKG, config: ModelConfig):
        super().__init__()
        self.config = config
        self.kg = kg
        layers = 0 if config.ablation == "no-encoder" else config.num_layers
        self.init_enc = InitialEncodings(kg.num_entities, kg.num_views, config.d, kg.view_sets)
        self.encoder = AttentionEncoder(config.d, layers, config.n_heads, config.mask_mode)
        self.decoder = DualDecoder(
            kg.num_relations, config.d, config.geometry, config.gamma, config.alpha
        )
        self.adjacency = torch.from_numpy(kg.adjacency_matrix())

    @property
    def no_residual(self) -> bool:
        return self.config.ablation == "no-residual"

    @property
    def no_view_decoder(self) -> bool:
        return self.config.ablation == "no-view-decoder"

    def embeddings(self, sparse: bool = False) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(H, E, Θ): latent, semantic, and view-set encodings per entity."""
        Z, E, theta = self.init_enc.initial()
        nbrs = neighbor_lists(self.adjacency) if sparse else None
        H = self.encoder(Z, self.adjacency, nbrs)
        return H, E, theta

    def decode_states(self, queries: list[Query], embeddings=None) -> DecodedStates:
        """Decode a mixed list of queries, batching same-shape groups."""
        if embeddings is None:
            embeddings = self.embeddings()
        H, E, theta = embeddings
        n, d = len(queries), self.config.d
        centers = torch.zeros(n, d, dtype=DTYPE)
        offsets = torch.zeros(n, d, dtype=DTYPE) if self.config.geometry == "box" else None
        ws = None if self.no_view_decoder else torch.zeros(n, d, dtype=DTYPE)
        for idx, batch in group_queries(queries):
            rel, view = self.decoder.decode_batch(
                H, E, theta, batch, self.no_residual, self.no_view_decoder
            )
            at = torch.tensor(idx, dtype=torch.long)
            centers[at] = rel.center
            if offsets is not None:
                offsets[at] = rel.offset
            if ws is not None:
                ws[at] = view.w
        return DecodedStates(centers, offsets, ws)

    def _joint(self, sim_r: torch.Tensor, sim_t: torch.Tensor | None) -> torch.Tensor:
        return sim_r if sim_t is None else sim_r * sim_t

    def score_candidates(
        self,
        states: DecodedStates,
        candidate_ids: torch.Tensor,
        embeddings,
    ) -> torch.Tensor:
        """Joint similarity for per-query candidate lists, (N, k).

        Candidate relation points are always H + semantic residual; candidate
        view vectors are the static view-set encodings θ.
        """
        H, E, theta = embeddings
        points = (H + E)[candidate_ids]  # (N, k, d)
        rel = RelationState(
            states.centers.unsqueeze(1),
            None if states.offsets is None else states.offsets.unsqueeze(1),
        )
        sim_r = self.decoder.score_relation(rel, points)
        if states.ws is None:
            return self._joint(sim_r, None)
        sim_t = self.decoder.score_view(states.ws.unsqueeze(1), theta[candidate_ids])
        return self._joint(sim_r, sim_t)

    def score_all_entities(
        self, queries: list[Query], embeddings=None
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor]:
        """(sim_r, sim_theta, joint), each (N, |V|); sim_theta None when the
        view decoder is ablated."""
        if embeddings is None:
            embeddings = self.embeddings()
        H, E, theta = embeddings
        states = self.decode_states(queries, embeddings)
        points = (H + E).unsqueeze(0)  # (1, V, d)
        rel = RelationState(
            states.centers.unsqueeze(1),
            None if states.offsets is None else states.offsets.unsqueeze(1),
        )
        sim_r = self.decoder.score_relation(rel, points)
        if states.ws is None:
            return sim_r, None, sim_r
        sim_t = self.decoder.score_view(states.ws.unsqueeze(1), theta.unsqueeze(0))
        return sim_r, sim_t, sim_r * sim_t

    def view_scores(self, queries: list[Query], embeddings=None) -> torch.Tensor | None:
        """Per-query similarity against each view's singleton encoding, (N, |Θ|).

        None when the view decoder is ablated (no view stream to score with).
        """
        if self.no_view_decoder:
            return None
        if embeddings is None:
            embeddings = self.embeddings()
        states = self.decode_states(queries, embeddings)
        singles = self.init_enc.singleton_view_encodings()  # (|Θ|, d)
        return self.decoder.score_view(states.ws.unsqueeze(1), singles.unsqueeze(0))

    def rank_answers(self, q: Query, n: int) -> list[tuple[int, float, float, float]]:
        """Top-n entities by joint score: (entity, sim_r, sim_theta, sim).

        sim_theta is reported as 1.0 when the view decoder is ablated so the
        product identity sim = sim_r * sim_theta still holds row-wise.
        """
        if n < 1:
            raise ValueError("n must be at least 1")
        n = min(n, self.kg.num_entities)
        with torch.no_grad():
            sim_r, sim_t, sim = self.score_all_entities([q])
        order = torch.argsort(-sim[0], stable=True)[:n]
        rows = []
        for e in order.tolist():
            r = float(sim_r[0, e])
            t = 1.0 if sim_t is None else float(sim_t[0, e])
            rows.append((e, r, t, float(sim[0, e])))
        return rows


_SKIP_KEYS = ("init_enc.pos_table", "init_enc.ent_idx", "init_enc.view_idx")


def _archive_name(state_key: str) -> str | None:
    if state_key in _SKIP_KEYS:
        return None
    if state_key == "init_enc.semantic":
        return "semantic_table"
    if state_key.startswith("init_enc.agg."):
        return "setenc_params/" + state_key.removeprefix("init_enc.agg.")
    if state_key.startswith("encoder."):
        return "encoder_params/" + state_key.removeprefix("encoder.")
    if state_key.startswith("decoder."):
        return "decoder_params/" + state_key.removeprefix("decoder.")
    raise ValueError(f"unmapped state key {state_key}")


def save_checkpoint(model: QueryModel, path: str, seed: int) -> None:
    """Write a single .npz archive: named parameter arrays plus a JSON manifest."""
    kg = model.kg
    manifest = {
        "num_entities": kg.num_entities,
        "num_relations": kg.num_relations,
        "num_views": kg.num_views,
        "seed": seed,
        **asdict(model.config),
    }
    arrays = {}
    for key, tensor in model.state_dict().items():
        name = _archive_name(key)
        if name is not None:
            arrays[name] = tensor.detach().cpu().numpy()
    np.savez(path, manifest=np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str, kg: MultiViewKG) -> tuple[QueryModel, dict]:
    """Rebuild a model from an archive; the KG vocabulary must match."""
    with np.load(path) as archive:
        manifest = json.loads(bytes(archive["manifest"]))
        arrays = {k: archive[k] for k in archive.files if k != "manifest"}
    for field, actual in (
        ("num_entities", kg.num_entities),
        ("num_relations", kg.num_relations),
        ("num_views", kg.num_views),
    ):
        if manifest[field] != actual:
            raise ValueError(
                f"checkpoint/KG vocabulary mismatch: {field} is {manifest[field]} "
                f"in the checkpoint but {actual} in the KG"
            )
    cfg_fields = {f for f in ModelConfig.__dataclass_fields__}
    config = ModelConfig(**{k: v for k, v in manifest.items() if k in cfg_fields})
    model = QueryModel(kg, config)
    state = dict(model.state_dict())
    loaded = set()
    for key in state:
        name = _archive_name(key)
        if name is None:
            continue
        if name not in arrays:
            raise ValueError(f"checkpoint is missing array {name}")
        state[key] = torch.from_numpy(arrays[name])
        loaded.add(name)
    extra = set(arrays) - loaded
    if extra:
        raise ValueError(f"checkpoint has unexpected arrays: {sorted(extra)}")
    model.load_state_dict(state)
    return model, manifest
