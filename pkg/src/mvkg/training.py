"""End-to-end optimization over sampled query batches.

Training draws batches from a pre-sampled query pool, pairs each query with
one positive answer and k uniform negatives drawn fresh per step, and
minimizes the negative-sampling logistic loss on the joint similarity. All
components train together: decoder, encoder, semantic encodings, and the
view-set aggregator. Runs are fully deterministic given the seed.
"""
from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .evaluation import MetricsReport, evaluate, query_view_truth
from .kg import MultiViewKG, subset_by_views
from .model import ModelConfig, QueryModel
from .queries import EQUAL, EXACT, TRAIN_STRUCTURES, WILDCARD, Query, TrainingSample
from .sampling import SamplingError, instantiate_pinned, instantiate_template

_POOL_RETRIES = 50


@dataclass
class TrainingConfig:
    # Model shape.
    d: int = 64
    num_layers: int = 2
    n_heads: int = 2
    geometry: str = "vector"
    gamma: float = 12.0
    alpha: float = 0.2
    ablation: str = "none"
    mask_mode: str = "pre"
    # Optimization. Desk-scale defaults; full-scale runs use steps=1000000
    # and batch_size=1024.
    learning_rate: float = 1e-3
    steps: int = 20000
    batch_size: int = 128
    k: int = 64
    seed: int = 0
    eval_interval: int = 500
    # Query pools.
    train_queries_per_structure: int = 300
    eval_queries: int = 200

    def __post_init__(self):
        for name in ("d", "n_heads", "learning_rate", "steps", "batch_size", "k", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be non-negative")
        if self.d % 2:
            raise ValueError("embedding dimension d must be even")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d,
            num_layers=self.num_layers,
            n_heads=self.n_heads,
            geometry=self.geometry,
            gamma=self.gamma,
            alpha=self.alpha,
            ablation=self.ablation,
            mask_mode=self.mask_mode,
        )

    @staticmethod
    def from_dict(values: dict) -> "TrainingConfig":
        fields = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
        unknown = set(values) - set(fields)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        defaults = TrainingConfig()
        for key, raw in values.items():
            current = getattr(defaults, key)
            coerced[key] = type(current)(raw) if not isinstance(raw, type(current)) else raw
        return TrainingConfig(**coerced)


def parse_config_file(path: str) -> dict:
    """Flat key = value lines; # starts a comment; values stay as strings."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def loss_from_sims(pos_sim: torch.Tensor, neg_sim: torch.Tensor) -> torch.Tensor:
    """-log sigmoid(Sim(a)) - (1/k) sum log sigmoid(-Sim(neg)).

    Computed in softplus form (-log sigmoid(x) = softplus(-x)) so saturated
    similarities stay finite. pos_sim: (B,); neg_sim: (B, k). Returns the
    batch mean.
    """
    return (F.softplus(-pos_sim) + F.softplus(neg_sim).mean(dim=-1)).mean()


def sample_loss(sample: TrainingSample, model: QueryModel) -> torch.Tensor:
    """Loss of a single training sample."""
    embeddings = model.embeddings()
    states = model.decode_states([sample.query], embeddings)
    ids = torch.tensor([[sample.positive, *sample.negatives]], dtype=torch.long)
    sims = model.score_candidates(states, ids, embeddings)
    return loss_from_sims(sims[:, 0], sims[:, 1:])


@dataclass
class TrainResult:
    model: QueryModel
    config: TrainingConfig
    pool: list[Query]
    loss_history: list[float]
    reports: list[MetricsReport] = field(default_factory=list)


def build_training_pool(
    kg: MultiViewKG, config: TrainingConfig, rng: random.Random
) -> list[Query]:
    """Sample the training query pool: per query a uniform constraint kind,
    restricted to the trainable structures.

    Queries whose answer sets leave fewer than k non-answers are resampled so
    negative draws stay well defined.
    """
    pool: list[Query] = []
    for structure in TRAIN_STRUCTURES:
        for _ in range(config.train_queries_per_structure):
            for _attempt in range(_POOL_RETRIES):
                kind = rng.choice([EXACT, WILDCARD, EQUAL])
                q = instantiate_template(kg, structure, kind, rng)
                if config.k < kg.num_entities - len(q.answers):
                    pool.append(q)
                    break
            else:
                raise SamplingError(
                    f"could not sample a {structure} query leaving "
                    f"{config.k} negatives on a {kg.num_entities}-entity KG"
                )
    return pool


def train(
    kg: MultiViewKG,
    config: TrainingConfig,
    report_sink: Callable[[MetricsReport], None] | None = None,
) -> TrainResult:
    """Run the optimization loop; returns the model, pool, and metric history."""
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    np_rng = np.random.default_rng(config.seed)
    model = QueryModel(kg, config.model_config())
    pool = build_training_pool(kg, config, rng)
    answers_per_query = [sorted(q.answers) for q in pool]
    answer_mask = np.zeros((len(pool), kg.num_entities), dtype=bool)
    for i, ans in enumerate(answers_per_query):
        answer_mask[i, ans] = True

    eval_count = min(config.eval_queries, len(pool))
    eval_idx = rng.sample(range(len(pool)), eval_count)
    eval_set = [pool[i] for i in eval_idx]
    view_truth = None if model.no_view_decoder else query_view_truth(kg, eval_set)

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_history: list[float] = []
    reports: list[MetricsReport] = []
    for step in range(1, config.steps + 1):
        idx = np_rng.integers(0, len(pool), size=config.batch_size)
        queries = [pool[i] for i in idx]
        positives = np.array(
            [answers_per_query[i][np_rng.integers(len(answers_per_query[i]))] for i in idx]
        )
        # k distinct uniform non-answers per row: rank random scores with the
        # answers pushed to the bottom and keep the k best.
        noise = np_rng.random((config.batch_size, kg.num_entities))
        noise[answer_mask[idx]] = np.inf
        negatives = np.argpartition(noise, config.k, axis=1)[:, : config.k]
        candidates = torch.from_numpy(np.concatenate([positives[:, None], negatives], axis=1))

        embeddings = model.embeddings()
        states = model.decode_states(queries, embeddings)
        sims = model.score_candidates(states, candidates, embeddings)
        loss = loss_from_sims(sims[:, 0], sims[:, 1:])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise RuntimeError(
                f"training diverged at step {step}: loss is {value}; "
                "lower the learning rate or the margin"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        loss_history.append(value)

        if step % config.eval_interval == 0 or step == config.steps:
            report = evaluate(model, kg, eval_set, step=step, view_truth=view_truth)
            reports.append(report)
            if report_sink is not None:
                report_sink(report)
    return TrainResult(model, config, pool, loss_history, reports)


def unobserved_view_protocol(
    kg: MultiViewKG,
    pivot: int,
    config: TrainingConfig,
    structures: tuple[str, ...] = ("1p", "2p"),
    queries_per_view: int = 50,
) -> tuple[TrainResult, list[tuple[int, MetricsReport]]]:
    """Train on views before the pivot, evaluate each later view separately.

    Evaluation queries are pinned (every edge exact) to one post-pivot view
    and answered by the oracle on the full KG, so the model must reach view
    encodings it never trained on. Returns the train result and a per-view
    HIT series.
    """
    if not 0 < pivot < kg.num_views:
        raise ValueError(
            f"pivot must split the ordered views: need 0 < pivot < {kg.num_views}"
        )
    train_views = set(range(pivot))
    covered = set()
    for f in kg.facts:
        if f.view in train_views:
            covered.add(f.head)
            covered.add(f.tail)
    if len(covered) < kg.num_entities:
        missing = sorted(set(range(kg.num_entities)) - covered)[:5]
        raise ValueError(
            f"entities {missing}... have no facts before the pivot; "
            "their encodings would be untrained"
        )
    train_kg = subset_by_views(kg, train_views)
    result = train(train_kg, config)
    rng = random.Random(config.seed)
    series: list[tuple[int, MetricsReport]] = []
    for view in range(pivot, kg.num_views):
        queries = []
        for structure in structures:
            for _ in range(queries_per_view):
                queries.append(instantiate_pinned(kg, structure, view, rng))
        report = evaluate(result.model, kg, queries, step=view)
        series.append((view, report))
    return result, series
