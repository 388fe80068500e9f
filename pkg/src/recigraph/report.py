"""Evaluation runs and report persistence.

Orchestrates scoring over benchmark items or generation pairs, then
lands the results as JSON, CSV, and rendered bar-chart figures in one
output directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .benchgen import BenchmarkItem, PromptPair
from .constraints import QuestionParseError, QuestionTemplate
from .kg_store import KnowledgeGraph
from .metrics import (
    EvalReport,
    ItemScore,
    MetricError,
    cider,
    meteor,
    nutrient_mae,
    parse_nutrients,
    perplexity,
    retrieval_scores,
    rouge_l,
    rouge_n,
    bleu,
    tokenize,
)
from .pipeline import DEFAULT_CHUNK_BUDGET, BackendConfig, recommend

__all__ = [
    "evaluate_retrieval",
    "score_generation_pairs",
    "score_nutrition_pairs",
    "write_eval_report",
    "write_mae_report",
    "write_json",
]


def evaluate_retrieval(
    kg: KnowledgeGraph,
    items: list[BenchmarkItem],
    backend,
    *,
    cfg: BackendConfig | None = None,
    templates: list[QuestionTemplate] | None = None,
    chunk_budget: int = DEFAULT_CHUNK_BUDGET,
    predictions: "list[list[str]] | None" = None,
) -> EvalReport:
    """Retrieval scores per benchmark item, macro-aggregated.

    Runs the recommendation loop per item (or scores the supplied
    predictions offline, matched by position).  Items whose question
    fails to parse count as failures and carry no scores.
    """
    if predictions is not None and len(predictions) != len(items):
        raise MetricError(
            f"{len(predictions)} predictions for {len(items)} items"
        )
    known = sorted(set(kg.tags()) | {item.tag for item in items})
    scored: list[ItemScore] = []
    failures = 0
    for position, item in enumerate(items):
        if predictions is not None:
            predicted = predictions[position]
        else:
            try:
                result = recommend(
                    kg,
                    item.question_text,
                    backend,
                    cfg,
                    chunk_budget=chunk_budget,
                    templates=templates,
                    known_tags=known,
                )
            except QuestionParseError:
                failures += 1
                continue
            predicted = list(result.final_titles)
        score = retrieval_scores(list(item.answers), predicted)
        scored.append(
            ItemScore(
                id=item.id,
                tag=item.tag,
                scores={
                    "precision": score.precision,
                    "recall": score.recall,
                    "f1": score.f1,
                    "ap": score.ap,
                },
            )
        )
    return EvalReport.from_items(scored, failures=failures)


def score_generation_pairs(
    pairs: list[PromptPair],
    predictions: list[str],
    *,
    logprobs: "list[list[float] | None] | None" = None,
    ids: list[str] | None = None,
) -> tuple[EvalReport, dict]:
    """Text-generation scores of predictions against pair targets.

    Per item: BLEU at orders 1..4, ROUGE-1/2/L, METEOR, and corpus-level
    TF-IDF cosine (needs at least two pairs, otherwise omitted).  Returns
    the report plus extras: mean perplexity over predictions that carry
    log-probabilities.
    """
    if len(pairs) != len(predictions):
        raise MetricError(f"{len(predictions)} predictions for {len(pairs)} pairs")
    tokenized = [
        (tokenize(pred), [tokenize(pair.target)])
        for pair, pred in zip(pairs, predictions)
    ]
    cider_scores: list[float] | None = None
    extras: dict = {}
    if len(tokenized) >= 2:
        cider_scores = cider(tokenized)
    else:
        extras["cider_omitted"] = "needs at least 2 items"
    scored: list[ItemScore] = []
    for position, (pair, (cand, refs)) in enumerate(zip(pairs, tokenized)):
        scores = {f"bleu{n}": bleu(cand, refs[0], n) for n in (1, 2, 3, 4)}
        scores["rouge1"] = rouge_n(cand, refs, 1)
        scores["rouge2"] = rouge_n(cand, refs, 2)
        scores["rouge_l"] = rouge_l(cand, refs)
        scores["meteor"] = meteor(cand, refs[0])
        if cider_scores is not None:
            scores["cider"] = cider_scores[position]
        item_id = ids[position] if ids is not None else str(position)
        scored.append(ItemScore(id=item_id, scores=scores, tag=None))
    if logprobs is not None:
        values = [perplexity(lp) for lp in logprobs if lp]
        if values:
            extras["perplexity_mean"] = sum(values) / len(values)
            extras["n_with_logprobs"] = len(values)
    return EvalReport.from_items(scored), extras


def score_nutrition_pairs(
    pairs: list[PromptPair],
    predictions: list[str],
    *,
    percentile: float | None = None,
) -> tuple[dict[str, float], list[str]]:
    """Per-nutrient MAE between target and predicted nutrient JSON."""
    if len(pairs) != len(predictions):
        raise MetricError(f"{len(predictions)} predictions for {len(pairs)} pairs")
    diagnostics: list[str] = []
    samples: list[tuple[dict[str, float], dict[str, float]]] = []
    for position, (pair, prediction) in enumerate(zip(pairs, predictions)):
        truth = parse_nutrients(pair.target)
        predicted = parse_nutrients(prediction)
        for note in truth.diagnostics + predicted.diagnostics:
            diagnostics.append(f"item {position}: {note}")
        if not predicted.values:
            diagnostics.append(f"item {position}: no nutrient object in prediction")
        samples.append((truth.values, predicted.values))
    mae = nutrient_mae(samples, percentile=percentile, diagnostics=diagnostics)
    return mae, diagnostics


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _bar_figure(path: Path, labels: list[str], values: list[float], title: str, ylabel: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(labels) + 2.0), 4.0))
    ax.bar(range(len(labels)), values, color="#4c72b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(
    report: EvalReport,
    out_dir: "Path | str",
    *,
    title: str = "evaluation",
    metadata: dict | None = None,
) -> dict[str, str]:
    """Persist an EvalReport as report.json, report.csv, and figures.

    One aggregate figure plus one per-tag figure per score key (when the
    report carries tags).  Returns the written paths keyed by kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    if metadata:
        payload["metadata"] = metadata
    json_path = out / "report.json"
    write_json(json_path, payload)

    csv_path = out / "report.csv"
    keys = list(report.aggregates)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "tag"] + keys)
        for item in report.items:
            writer.writerow([item.id, item.tag or ""] + [item.scores[k] for k in keys])

    written = {"json": str(json_path), "csv": str(csv_path)}
    if keys:
        agg_path = out / "figures" / "aggregates.png"
        _bar_figure(
            agg_path,
            keys,
            [report.aggregates[k] for k in keys],
            f"{title}: aggregate scores ({report.n_items} items)",
            "score",
        )
        written["figure_aggregates"] = str(agg_path)
    for key in keys:
        if not report.per_tag:
            break
        tags = list(report.per_tag)
        fig_path = out / "figures" / f"per_tag_{key}.png"
        _bar_figure(
            fig_path,
            tags,
            [report.per_tag[t][key] for t in tags],
            f"{title}: {key} by tag",
            key,
        )
        written[f"figure_{key}"] = str(fig_path)
    return written


def write_mae_report(
    mae: dict[str, float],
    out_dir: "Path | str",
    *,
    diagnostics: list[str] | None = None,
    metadata: dict | None = None,
    title: str = "nutrient error",
) -> dict[str, str]:
    """Persist a per-nutrient MAE map as JSON, CSV, and one bar figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload: dict = {"mae": mae, "diagnostics": diagnostics or []}
    if metadata:
        payload["metadata"] = metadata
    json_path = out / "report.json"
    write_json(json_path, payload)

    csv_path = out / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nutrient", "mae"])
        for name in sorted(mae):
            writer.writerow([name, mae[name]])

    written = {"json": str(json_path), "csv": str(csv_path)}
    if mae:
        names = sorted(mae)
        fig_path = out / "figures" / "mae_per_nutrient.png"
        _bar_figure(fig_path, names, [mae[n] for n in names], title, "mean absolute error")
        written["figure_mae"] = str(fig_path)
    return written
