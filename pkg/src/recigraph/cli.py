"""Command-line interface: corpus ingestion, question answering,
benchmark generation, training-context sampling, evaluation, and the
REST service."""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from .benchgen import (
    DEFAULT_TAGS,
    GenConfig,
    GenerationError,
    generate_dataset,
    generate_nutri_prompts,
    generate_recipe_prompts,
    read_kgqa_items,
    read_prompt_pairs,
    sample_training_context,
    write_kgqa_dataset,
    write_prompt_pairs,
    write_training_examples,
)
from .constraints import ConstraintError, QuestionParseError, load_templates
from .kg_store import CorpusError, KnowledgeGraph, ingest_corpus, write_triples
from .metrics import MetricError
from .pipeline import (
    DEFAULT_CHUNK_BUDGET,
    BackendConfig,
    BackendError,
    make_backend,
    recommend,
)
from .report import (
    evaluate_retrieval,
    score_generation_pairs,
    score_nutrition_pairs,
    write_eval_report,
    write_mae_report,
)
from .samplecorpus import write_sample_corpus
from .squeal import QueryError

__all__ = ["main", "build_parser"]


def _load_graph(corpus: str, fmt: str, lenient: bool = False) -> KnowledgeGraph:
    diagnostics: list[str] | None = [] if lenient else None
    kg = ingest_corpus(corpus, fmt=fmt, diagnostics=diagnostics)
    if diagnostics:
        for note in diagnostics:
            print(f"warning: {note}", file=sys.stderr)
    return kg


def _backend_config(args) -> BackendConfig:
    return BackendConfig(
        kind=args.backend,
        endpoint=getattr(args, "endpoint", None),
        parallelism=getattr(args, "parallelism", 1),
        want_logprobs=getattr(args, "want_logprobs", False),
    )


def _read_prediction_records(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricError(f"{path}:{number}: bad JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise MetricError(f"{path}:{number}: expected a JSON object")
            records.append(record)
    return records


def _order_by_ids(records: list[dict], ids: list[str], path: str) -> list[dict]:
    """Match prediction records to dataset items by id when every record
    has one, otherwise positionally."""
    if records and all("id" in r for r in records):
        by_id = {str(r["id"]): r for r in records}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise MetricError(
                f"{path}: no prediction for item id(s) {missing[:5]}"
            )
        return [by_id[i] for i in ids]
    if len(records) != len(ids):
        raise MetricError(
            f"{path}: {len(records)} predictions for {len(ids)} items"
        )
    return records


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_ingest(args) -> int:
    kg = _load_graph(args.corpus, args.format, lenient=args.lenient)
    print(f"recipes: {len(kg.recipes)}")
    print(f"tags: {len(kg.tags())}")
    print(f"ingredients: {len(kg.ingredient_vocabulary())}")
    print(f"triples: {len(kg.to_triples())}")
    if args.triples_out:
        write_triples(kg, args.triples_out)
        print(f"wrote triples to {args.triples_out}")
    return 0


def _cmd_make_corpus(args) -> int:
    count = write_sample_corpus(args.out)
    kg = _load_graph(args.out, "jsonl")
    print(f"wrote {count} recipes ({len(kg.tags())} tags) to {args.out}")
    return 0


def _cmd_ask(args) -> int:
    kg = _load_graph(args.corpus, args.format)
    templates = load_templates(args.templates)
    cfg = _backend_config(args)
    backend = make_backend(kg, cfg)
    try:
        result = recommend(
            kg,
            args.question,
            backend,
            cfg,
            chunk_budget=args.chunk_budget,
            templates=templates,
        )
    except QuestionParseError as exc:
        if exc.unknown_tag is not None:
            print(
                f"warning: tag {exc.unknown_tag!r} is not in the corpus; no recipes",
                file=sys.stderr,
            )
            return 0
        raise
    for index in result.failed_chunks:
        print(f"warning: chunk {index} failed after retries", file=sys.stderr)
    if args.json:
        print(
            json.dumps(
                {
                    "titles": list(result.final_titles),
                    "query": result.query.to_json_dict(),
                    "failed_chunks": list(result.failed_chunks),
                },
                indent=2,
            )
        )
    else:
        for title in result.final_titles:
            print(title)
    return 0


def _cmd_benchgen(args) -> int:
    kg = _load_graph(args.corpus, args.format)
    templates = load_templates(args.templates)
    tags = tuple(t.strip() for t in args.tags.split(",")) if args.tags else DEFAULT_TAGS
    cfg = GenConfig(
        seed=args.seed,
        tags=tags,
        n_questions_per_tag=args.questions_per_tag,
        k_train=args.k_train,
    )
    splits = generate_dataset(kg, cfg, templates)
    paths = write_kgqa_dataset(splits, args.out)
    stats = splits.stats
    print(f"questions: {stats['n_questions']}")
    print(
        "splits: train={train} val={val} test={test}".format(**stats["splits"])
    )
    for name, path in sorted(paths.items()):
        print(f"wrote {name}: {path}")
    if args.prompts:
        rng = random.Random(cfg.seed)
        diagnostics: list[str] = []
        nutri = []
        steps = []
        for recipe in kg.recipes.values():
            if recipe.nutrition:
                nutri.extend(
                    generate_nutri_prompts(
                        recipe,
                        rng=rng,
                        sample_count=args.prompt_samples,
                        diagnostics=diagnostics,
                    )
                )
            if recipe.instructions:
                steps.extend(
                    generate_recipe_prompts(
                        recipe, rng=rng, sample_count=args.prompt_samples
                    )
                )
        out_dir = Path(args.out)
        nutri_path = out_dir / "nutri_prompts.jsonl"
        steps_path = out_dir / "recipe_prompts.jsonl"
        write_prompt_pairs(nutri, nutri_path)
        write_prompt_pairs(steps, steps_path)
        for note in diagnostics:
            print(f"warning: {note}", file=sys.stderr)
        print(f"wrote nutrition prompts: {nutri_path} ({len(nutri)} pairs)")
        print(f"wrote recipe prompts: {steps_path} ({len(steps)} pairs)")
    return 0


def _cmd_sample_train(args) -> int:
    kg = _load_graph(args.corpus, args.format)
    items = read_kgqa_items(args.dataset)
    cfg = GenConfig(seed=args.seed, k_train=args.k)
    rng = random.Random(args.seed)
    examples = [sample_training_context(item, kg, cfg, rng) for item in items]
    write_training_examples(examples, args.out)
    print(f"wrote {len(examples)} training examples to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    kg = _load_graph(args.corpus, args.format)
    templates = load_templates(args.templates)
    items = read_kgqa_items(args.dataset)
    cfg = _backend_config(args)
    predictions = None
    backend = None
    if args.predictions:
        records = _order_by_ids(
            _read_prediction_records(args.predictions),
            [item.id for item in items],
            args.predictions,
        )
        predictions = []
        for number, record in enumerate(records):
            titles = record.get("titles")
            if not isinstance(titles, list):
                raise MetricError(
                    f"{args.predictions}: record {number} missing titles list"
                )
            predictions.append([str(t) for t in titles])
    else:
        backend = make_backend(kg, cfg)
    result = evaluate_retrieval(
        kg,
        items,
        backend,
        cfg=cfg,
        templates=templates,
        chunk_budget=args.chunk_budget,
        predictions=predictions,
    )
    written = write_eval_report(
        result,
        args.out,
        title="retrieval evaluation",
        metadata={
            "dataset": args.dataset,
            "backend": None if predictions is not None else cfg.to_json_dict(),
            "predictions": args.predictions,
            "chunk_budget": args.chunk_budget,
        },
    )
    print(f"items: {result.n_items}  failures: {result.failures}")
    for key, value in result.aggregates.items():
        print(f"{key}: {value:.4f}")
    for kind, path in sorted(written.items()):
        print(f"wrote {kind}: {path}")
    return 0


def _read_generation_predictions(path: str, count: int) -> tuple[list[str], list[list[float]]]:
    records = _read_prediction_records(path)
    if len(records) != count:
        raise MetricError(f"{path}: {len(records)} predictions for {count} pairs")
    texts: list[str] = []
    logprobs: list[list[float]] = []
    for number, record in enumerate(records):
        text = record.get("text")
        if not isinstance(text, str):
            raise MetricError(f"{path}: record {number} missing text")
        texts.append(text)
        raw = record.get("logprobs") or []
        values: list[float] = []
        for entry in raw:
            if isinstance(entry, (list, tuple)) and len(entry) == 2:
                values.append(float(entry[1]))
            else:
                values.append(float(entry))
        logprobs.append(values)
    return texts, logprobs


def _cmd_nutri_eval(args) -> int:
    pairs = read_prompt_pairs(args.pairs)
    bad = [p for p in pairs if p.task != "nutri_gen"]
    if bad:
        raise MetricError(
            f"{args.pairs}: {len(bad)} pairs are not nutrition tasks"
        )
    texts, _ = _read_generation_predictions(args.predictions, len(pairs))
    mae, diagnostics = score_nutrition_pairs(
        pairs, texts, percentile=args.percentile
    )
    written = write_mae_report(
        mae,
        args.out,
        diagnostics=diagnostics,
        metadata={
            "pairs": args.pairs,
            "predictions": args.predictions,
            "percentile": args.percentile,
        },
    )
    print(f"pairs: {len(pairs)}  nutrients scored: {len(mae)}")
    for name in sorted(mae):
        print(f"{name}: {mae[name]:.4f}")
    for kind, path in sorted(written.items()):
        print(f"wrote {kind}: {path}")
    return 0


def _cmd_recipe_eval(args) -> int:
    pairs = read_prompt_pairs(args.pairs)
    bad = [p for p in pairs if p.task != "recipe_gen"]
    if bad:
        raise MetricError(
            f"{args.pairs}: {len(bad)} pairs are not recipe-step tasks"
        )
    texts, logprobs = _read_generation_predictions(args.predictions, len(pairs))
    result, extras = score_generation_pairs(pairs, texts, logprobs=logprobs)
    written = write_eval_report(
        result,
        args.out,
        title="generation evaluation",
        metadata={
            "pairs": args.pairs,
            "predictions": args.predictions,
            **extras,
        },
    )
    print(f"pairs: {result.n_items}")
    for key, value in result.aggregates.items():
        print(f"{key}: {value:.4f}")
    if "perplexity_mean" in extras:
        print(f"perplexity: {extras['perplexity_mean']:.4f}")
    for kind, path in sorted(written.items()):
        print(f"wrote {kind}: {path}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    config = ServiceConfig(
        corpus_path=Path(args.corpus),
        data_dir=Path(args.data_dir),
        templates_path=Path(args.templates) if args.templates else None,
        backend=_backend_config(args),
        chunk_budget=args.chunk_budget,
        host=args.host,
        port=args.port,
        corpus_format=args.format,
    )
    print(f"serving on http://{config.host}:{config.port}", file=sys.stderr)
    serve(config)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="recipe corpus file")
    parser.add_argument(
        "--format", choices=("jsonl", "json"), default="jsonl", help="corpus format"
    )


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend", choices=("oracle", "remote"), default="oracle",
        help="model backend kind",
    )
    parser.add_argument("--endpoint", help="remote backend URL")
    parser.add_argument(
        "--chunk-budget", type=int, default=DEFAULT_CHUNK_BUDGET,
        help="context budget in characters",
    )
    parser.add_argument(
        "--parallelism", type=int, default=1, help="concurrent chunk requests"
    )
    parser.add_argument(
        "--want-logprobs", action="store_true",
        help="request token log-probabilities from remote backends",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recigraph",
        description="Knowledge-graph recipe recommendation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus and print graph stats")
    _add_corpus_args(p)
    p.add_argument("--lenient", action="store_true", help="skip bad records with warnings")
    p.add_argument("--triples-out", help="also write the graph as triples")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("make-corpus", help="write the built-in sample corpus")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=_cmd_make_corpus)

    p = sub.add_parser("ask", help="answer a question against the corpus")
    p.add_argument("question", help="natural-language question")
    _add_corpus_args(p)
    p.add_argument("--templates", help="question template catalog JSON")
    _add_backend_args(p)
    p.add_argument("--json", action="store_true", help="print the full result as JSON")
    p.set_defaults(func=_cmd_ask)

    p = sub.add_parser("benchgen", help="generate a benchmark dataset")
    _add_corpus_args(p)
    p.add_argument("--templates", help="question template catalog JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument(
        "--questions-per-tag", type=int, default=100, help="questions per tag"
    )
    p.add_argument("--tags", help="comma-separated tag list (default: built-in)")
    p.add_argument("--k-train", type=int, default=20, help="training context size")
    p.add_argument(
        "--prompts", action="store_true",
        help="also write nutrition and recipe-step prompt pairs",
    )
    p.add_argument(
        "--prompt-samples", type=int, default=None,
        help="templates sampled per recipe (default: all)",
    )
    p.set_defaults(func=_cmd_benchgen)

    p = sub.add_parser(
        "sample-train", help="sample training contexts for benchmark questions"
    )
    _add_corpus_args(p)
    p.add_argument("--dataset", required=True, help="benchmark split JSONL")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--k", type=int, default=20, help="context size (positives+negatives)")
    p.set_defaults(func=_cmd_sample_train)

    p = sub.add_parser("eval", help="score retrieval on a benchmark split")
    _add_corpus_args(p)
    p.add_argument("--templates", help="question template catalog JSON")
    p.add_argument("--dataset", required=True, help="benchmark split JSONL")
    p.add_argument("--out", required=True, help="report output directory")
    _add_backend_args(p)
    p.add_argument(
        "--predictions",
        help="score this predictions JSONL offline instead of running a backend",
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("nutri-eval", help="score nutrition generation predictions")
    p.add_argument("--pairs", required=True, help="nutrition prompt pairs JSONL")
    p.add_argument("--predictions", required=True, help="predictions JSONL")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument(
        "--percentile", type=float, default=None,
        help="drop samples above this truth percentile",
    )
    p.set_defaults(func=_cmd_nutri_eval)

    p = sub.add_parser("recipe-eval", help="score recipe-step generation predictions")
    p.add_argument("--pairs", required=True, help="recipe prompt pairs JSONL")
    p.add_argument("--predictions", required=True, help="predictions JSONL")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=_cmd_recipe_eval)

    p = sub.add_parser("serve", help="run the REST service")
    _add_corpus_args(p)
    p.add_argument("--templates", help="question template catalog JSON")
    _add_backend_args(p)
    p.add_argument("--data-dir", default="data", help="artifact directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CorpusError,
        ConstraintError,
        QuestionParseError,
        QueryError,
        GenerationError,
        BackendError,
        MetricError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
