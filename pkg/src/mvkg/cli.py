"""Command-line surface for the full pipeline.

Commands: ingest, gen-toy, sample, train, eval, answer, protocol. Every
command is reproducible from its inputs and seed alone. Report-producing
commands write figures next to their delimited/JSON outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .evaluation import MetricsReport, evaluate
from .kg import IngestError, generate_toy_kg, load_kg
from .model import ABLATIONS, load_checkpoint, save_checkpoint
from .oracle import annotate_answers
from .queries import STRUCTURES, read_queries_jsonl, write_queries_jsonl
from .sampling import DEFAULT_POLICY, POLICIES, SamplingError, instantiate_template
from .training import (
    TrainingConfig,
    parse_config_file,
    train,
    unobserved_view_protocol,
)

_OVERRIDE_FLAGS = ("seed", "geometry", "ablation", "k", "d", "steps")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kg", help="quadruple TSV file")
    p.add_argument("--config", help="flat key = value config file; flags win")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--checkpoint", help="model checkpoint (.npz)")
    p.add_argument("--geometry", choices=("vector", "box"))
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--k", type=int, help="negatives per positive")
    p.add_argument("--d", type=int, help="embedding dimension")
    p.add_argument("--steps", type=int, help="optimizer steps")


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            raise ValueError(f"--{name.replace('_', '-')} is required for this command")


def _training_config(args: argparse.Namespace) -> TrainingConfig:
    values = parse_config_file(args.config) if args.config else {}
    cfg = TrainingConfig.from_dict(values)
    overrides = {
        name: getattr(args, name)
        for name in _OVERRIDE_FLAGS
        if getattr(args, name) is not None
    }
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _parse_counts(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        tag, _, num = part.partition("=")
        if tag not in STRUCTURES:
            raise ValueError(f"unknown query structure {tag!r}; choose from {STRUCTURES}")
        counts[tag] = int(num)
    if not counts:
        raise ValueError("empty counts; expected e.g. 1p=100,2i=50")
    return counts


def _stats_line(kg) -> str:
    header = "entities\trelations\tfacts\tviews"
    row = f"{kg.num_entities}\t{kg.num_relations}\t{len(kg.facts)}\t{kg.num_views}"
    return header + "\n" + row


def cmd_ingest(args: argparse.Namespace) -> None:
    _require(args, "kg")
    print(_stats_line(load_kg(args.kg)))


def cmd_gen_toy(args: argparse.Namespace) -> None:
    _require(args, "out")
    kg = generate_toy_kg(
        num_entities=args.entities,
        num_relations=args.relations,
        num_views=args.views,
        facts_per_view=args.facts_per_view,
        seed=args.seed if args.seed is not None else 0,
    )
    kg.write_tsv(args.out)
    print(_stats_line(kg))


def cmd_sample(args: argparse.Namespace) -> None:
    _require(args, "kg", "counts", "out")
    import random

    kg = load_kg(args.kg)
    counts = _parse_counts(args.counts)
    rng = random.Random(args.seed if args.seed is not None else 0)
    queries = []
    for tag, count in counts.items():
        policy = DEFAULT_POLICY[tag] if args.policy == "default" else args.policy
        for _ in range(count):
            queries.append(instantiate_template(kg, tag, policy, rng))
    with open(args.out, "w", encoding="utf-8") as fh:
        write_queries_jsonl(queries, fh)
    print(f"wrote {len(queries)} queries to {args.out}")


def _report_row(report: MetricsReport, hit_k: int = 5) -> dict:
    return {"mrr": report.mrr, f"hit@{hit_k}": report.hit_at_k.get(hit_k)}


def cmd_train(args: argparse.Namespace) -> None:
    _require(args, "kg", "out")
    kg = load_kg(args.kg)
    config = _training_config(args)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        def sink(report: MetricsReport) -> None:
            fh.write(json.dumps(report.to_json(), separators=(",", ":")) + "\n")
            fh.flush()

        result = train(kg, config, report_sink=sink)
    ckpt = args.checkpoint or os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(result.model, ckpt, config.seed)
    with open(os.path.join(args.out, "loss.tsv"), "w", encoding="utf-8") as fh:
        fh.write("step\tloss\n")
        for i, value in enumerate(result.loss_history, start=1):
            fh.write(f"{i}\t{value:.6f}\n")
    from .plots import plot_training_dynamics

    plot_training_dynamics(
        result.reports, result.loss_history, os.path.join(args.out, "dynamics.png")
    )
    final = result.reports[-1]
    print(f"checkpoint: {ckpt}")
    print(f"metrics: {metrics_path}")
    print(f"final held-in: {json.dumps(_report_row(final))}")


def cmd_eval(args: argparse.Namespace) -> None:
    _require(args, "kg", "checkpoint", "queries", "out")
    kg = load_kg(args.kg)
    model, _ = load_checkpoint(args.checkpoint, kg)
    with open(args.queries, encoding="utf-8") as fh:
        queries = read_queries_jsonl(fh)
    for q in queries:
        if q.answers is None:
            annotate_answers(kg, q)
    queries = [q for q in queries if q.answers]
    report = evaluate(model, kg, queries)
    os.makedirs(args.out, exist_ok=True)
    table = {tag: {"mrr": stats["mrr"], "hit@5": stats["hit_at_k"].get("5")}
             for tag, stats in report.per_structure.items()}
    table["overall"] = _report_row(report)
    if report.view_hit_at_k is not None:
        table["overall"]["view_hit@5"] = report.view_hit_at_k
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "per_structure.tsv"), "w", encoding="utf-8") as fh:
        fh.write("structure\tmrr\thit@5\tqueries\n")
        for tag, stats in report.per_structure.items():
            fh.write(
                f"{tag}\t{stats['mrr']:.4f}\t{stats['hit_at_k'].get('5'):.4f}"
                f"\t{stats['num_queries']}\n"
            )
    from .plots import plot_structure_breakdown

    plot_structure_breakdown(report, os.path.join(args.out, "structure_breakdown.png"))
    print(f"report: {report_path}")
    print(json.dumps(table["overall"]))


def cmd_answer(args: argparse.Namespace) -> None:
    _require(args, "kg", "checkpoint", "queries")
    kg = load_kg(args.kg)
    model, _ = load_checkpoint(args.checkpoint, kg)
    with open(args.queries, encoding="utf-8") as fh:
        queries = read_queries_jsonl(fh)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for q in queries:
            for entity, sim_r, sim_t, sim in model.rank_answers(q, args.n):
                row = {
                    "entity": kg.entity_labels[entity],
                    "sim_r": sim_r,
                    "sim_theta": sim_t,
                    "sim": sim,
                }
                out.write(json.dumps(row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_protocol(args: argparse.Namespace) -> None:
    _require(args, "kg", "pivot", "out")
    kg = load_kg(args.kg)
    config = _training_config(args)
    result, series = unobserved_view_protocol(kg, args.pivot, config)
    os.makedirs(args.out, exist_ok=True)
    ckpt = args.checkpoint or os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(result.model, ckpt, config.seed)
    with open(os.path.join(args.out, "protocol.jsonl"), "w", encoding="utf-8") as fh:
        for view, report in series:
            row = {"view": view, **report.to_json()}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    with open(os.path.join(args.out, "view_series.tsv"), "w", encoding="utf-8") as fh:
        fh.write("view\thit@5\tmrr\n")
        for view, report in series:
            fh.write(f"{view}\t{report.hit_at_k.get(5):.4f}\t{report.mrr:.4f}\n")
    from .plots import plot_view_series

    plot_view_series(series, os.path.join(args.out, "view_series.png"))
    for view, report in series:
        print(f"view {view}: hit@5={report.hit_at_k.get(5):.4f} mrr={report.mrr:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvkg",
        description="Logical query answering over multi-view knowledge graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a quadruple TSV and print stats")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-toy", help="generate a synthetic multi-view KG")
    _add_common(p)
    p.add_argument("--entities", type=int, default=100)
    p.add_argument("--relations", type=int, default=5)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--facts-per-view", type=int, default=600)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("sample", help="sample oracle-answered queries to JSONL")
    _add_common(p)
    p.add_argument("--counts", help="per-structure counts, e.g. 1p=100,2i=50")
    p.add_argument("--policy", default="default", choices=("default", *POLICIES))
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model; writes checkpoint + metrics")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a query file")
    _add_common(p)
    p.add_argument("--queries", help="query JSONL file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("answer", help="print top-n ranked answers per query")
    _add_common(p)
    p.add_argument("--queries", help="query JSONL file")
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("protocol", help="train before a pivot view, evaluate beyond it")
    _add_common(p)
    p.add_argument("--pivot", type=int, help="first view excluded from training")
    p.set_defaults(func=cmd_protocol)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (IngestError, SamplingError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
