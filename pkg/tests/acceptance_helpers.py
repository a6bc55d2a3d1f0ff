"""Shared procedures for the acceptance suite.

The learning-smoke run is used twice (vector and box geometry), so it lives
here rather than inline in the test module.
"""
import random
import statistics

from mvkg.evaluation import evaluate
from mvkg.kg import Fact, MultiViewKG, generate_toy_kg
from mvkg.sampling import holdout_split, instantiate_template
from mvkg.training import TrainingConfig, train


def compositional_kg(num_entities: int = 60, num_views: int = 3,
                     base_per_view: int = 120, seed: int = 0) -> MultiViewKG:
    """Toy KG where relation r2 is the per-view composition of r0 then r1.

    Composed edges are predictable from an entity's two-hop neighbourhood, so
    a model that propagates neighbourhood information can place held-out r2
    facts while a pure lookup table cannot. r3 is unstructured filler.
    """
    rng = random.Random(seed)
    ents = [f"e{i}" for i in range(num_entities)]
    rels = ["r0", "r1", "r2", "r3"]
    views = [str(v) for v in range(num_views)]
    facts = set()
    for v in range(num_views):
        while sum(1 for f in facts if f.view == v and f.relation in (0, 1)) < base_per_view:
            h, t = rng.randrange(num_entities), rng.randrange(num_entities)
            if h != t:
                facts.add(Fact(h, rng.choice((0, 1)), t, v))
        per = {}
        for f in facts:
            if f.view == v:
                per.setdefault(f.relation, []).append(f)
        for f0 in per.get(0, []):
            for f1 in per.get(1, []):
                if f0.tail == f1.head and f0.head != f1.tail:
                    facts.add(Fact(f0.head, 2, f1.tail, v))
        for _ in range(base_per_view // 3):
            h, t = rng.randrange(num_entities), rng.randrange(num_entities)
            if h != t:
                facts.add(Fact(h, 3, t, v))
    return MultiViewKG(ents, rels, views, sorted(facts))


def drop_half_composed(kg: MultiViewKG, seed: int) -> MultiViewKG:
    """Training copy of a compositional KG with half the r2 facts removed."""
    rng = random.Random(seed)
    composed = [i for i, f in enumerate(kg.facts) if f.relation == 2]
    dropped = set(rng.sample(composed, len(composed) // 2))
    kept = [f for i, f in enumerate(kg.facts) if i not in dropped]
    return MultiViewKG(list(kg.entity_labels), list(kg.relation_labels),
                       list(kg.view_labels), kept)


def window_means(values: list[float], num_windows: int = 4) -> list[float]:
    """Averages over equal consecutive chunks of the loss history."""
    size = len(values) // num_windows
    return [
        statistics.fmean(values[i * size:(i + 1) * size]) for i in range(num_windows)
    ]


def strictly_decreasing(values: list[float]) -> bool:
    return all(a > b for a, b in zip(values, values[1:]))


def run_learning_smoke(geometry: str, seed: int = 11) -> dict:
    """Train on a half-held-out 100-entity toy KG; report loss-window means,
    held-in HIT@5, and held-out HIT@5/MRR measured on full-KG queries."""
    kg_full = generate_toy_kg(
        num_entities=100, num_relations=5, num_views=3, facts_per_view=667, seed=seed
    )
    rng = random.Random(seed)
    train_kg, kg_full = holdout_split(kg_full, 0.5, rng)
    config = TrainingConfig(
        d=64, steps=20000, batch_size=128, k=64, seed=seed, geometry=geometry,
        eval_interval=2000, train_queries_per_structure=300, eval_queries=200,
    )
    result = train(train_kg, config)
    windows = window_means(result.loss_history)
    held_in_hit5 = result.reports[-1].hit_at_k[5]
    eval_rng = random.Random(seed + 1)
    held_out = [
        instantiate_template(kg_full, structure, "wildcard", eval_rng)
        for structure in ("1p", "2p", "2i", "3i")
        for _ in range(50)
    ]
    held_out_report = evaluate(result.model, kg_full, held_out)
    return {
        "geometry": geometry,
        "windows": windows,
        "windows_decreasing": strictly_decreasing(windows),
        "held_in_hit5": held_in_hit5,
        "held_out_hit5": held_out_report.hit_at_k[5],
        "held_out_mrr": held_out_report.mrr,
    }
