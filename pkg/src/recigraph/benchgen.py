"""Benchmark generation: constrained questions, training contexts, prompt pairs.

Question generation is rejection sampling per tag: draw a template,
ingredient preferences, and nutrient constraints until the resulting
query has at least one satisfying recipe.  Every per-tag stream runs on
its own seed-derived generator, so tags can be produced in any order or
in parallel with identical output.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .constraints import (
    AT_LEAST,
    LESS_THAN,
    RANGE,
    ConstraintQuery,
    NutrientConstraint,
    QuestionTemplate,
    ground_truth,
    parse_question,
    render_question,
)
from .kg_store import (
    KnowledgeGraph,
    NoDataError,
    NutrientStats,
    Recipe,
    format_decimal,
    serialize_recipe_context,
)

__all__ = [
    "DEFAULT_TAGS",
    "DEFAULT_NUTRIENTS",
    "NUTRITION_PROMPT_TEMPLATES",
    "RECIPE_PROMPT_TEMPLATES",
    "GenerationError",
    "GenConfig",
    "BenchmarkItem",
    "TrainingExample",
    "PromptPair",
    "DatasetSplits",
    "tag_rng",
    "sample_preferences",
    "sample_nutrient_constraint",
    "generate_kgqa_item",
    "generate_dataset",
    "sample_training_context",
    "generate_nutri_prompts",
    "generate_recipe_prompts",
    "write_kgqa_dataset",
    "read_kgqa_items",
    "write_training_examples",
    "write_prompt_pairs",
    "read_prompt_pairs",
]

DEFAULT_TAGS = (
    "lactose",
    "vegan",
    "vegetarian",
    "dairy-free",
    "gluten-free",
    "nut-free",
    "egg-free",
    "low-carb",
    "low-fat",
    "low-sodium",
    "low-cholesterol",
    "low-protein",
    "high-protein",
    "high-calcium",
    "high-fiber",
)

DEFAULT_NUTRIENTS = (
    "calories",
    "fat_calories",
    "protein",
    "sugar",
    "fiber",
    "carbohydrates",
    "sodium",
    "cholesterol",
    "saturated_fat",
    "total_fat",
)

NUTRITION_PROMPT_TEMPLATES = (
    "For <name>, can you calculate the approximate nutritional values for a standard serving?",
    "Estimated nutritional values for <name>.",
    "Generate the nutritional values of the dish based on the ingredients: <ingredients>.",
    "A dish is cooked using <ingredients>, calculate the nutritional values of the dish.",
    "Generate the nutritional values of the dish based on its step-by-step instructions: <instructions>.",
    "Based on the cooking instructions provided, calculate the nutritional values of the dish. Instructions: <instructions>.",
    "For the following dish, estimate the nutritional values. Recipe: <name> <ingredients> <instructions>.",
)

RECIPE_PROMPT_TEMPLATES = (
    "Generate a comprehensive recipe for crafting <name>.",
    "Detail the method for cooking a delightful <name>.",
    "Construct a detailed cooking procedure for <name>.",
    "Generate a recipe using <ingredients>.",
    "Given <ingredients>, give the detailed recipe.",
    "Compose a recipe for making a dish using the ingredients: <ingredients>.",
    "Generate a recipe for crafting <name> using <ingredients>.",
    "Outline the process of making a delicious <name> using <ingredients>",
    "Given <ingredients>, suggest me recipe of <name>",
)

_PLACEHOLDER_INPUTS = (
    ("<name>", "title"),
    ("<ingredients>", "ingredients"),
    ("<instructions>", "instructions"),
)


class GenerationError(ValueError):
    """Benchmark generation could not proceed (bad config, exhausted sampling)."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs for benchmark generation; defaults match the shipped datasets."""

    seed: int = 0
    tags: tuple[str, ...] = DEFAULT_TAGS
    n_questions_per_tag: int = 100
    include_count_range: tuple[int, int] = (1, 5)
    exclude_count_range: tuple[int, int] = (1, 3)
    nutrient_constraint_count_range: tuple[int, int] = (1, 2)
    k_train: int = 20
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_resample_attempts: int = 50
    nutrient_pool: tuple[str, ...] = DEFAULT_NUTRIENTS

    def __post_init__(self) -> None:
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise GenerationError("split fractions must sum to 1")
        if any(f < 0 for f in self.split_fractions):
            raise GenerationError("split fractions must be non-negative")
        for name, (lo, hi) in (
            ("include_count_range", self.include_count_range),
            ("exclude_count_range", self.exclude_count_range),
            ("nutrient_constraint_count_range", self.nutrient_constraint_count_range),
        ):
            if lo < 0 or lo > hi:
                raise GenerationError(f"{name} must satisfy 0 <= lo <= hi")
        if self.k_train < 2 or self.k_train % 2 != 0:
            raise GenerationError("k_train must be an even integer >= 2")
        if self.n_questions_per_tag < 1:
            raise GenerationError("n_questions_per_tag must be >= 1")
        if self.max_resample_attempts < 1:
            raise GenerationError("max_resample_attempts must be >= 1")
        if not self.tags:
            raise GenerationError("tags must be non-empty")
        if not self.nutrient_pool:
            raise GenerationError("nutrient_pool must be non-empty")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tags": list(self.tags),
            "n_questions_per_tag": self.n_questions_per_tag,
            "include_count_range": list(self.include_count_range),
            "exclude_count_range": list(self.exclude_count_range),
            "nutrient_constraint_count_range": list(
                self.nutrient_constraint_count_range
            ),
            "k_train": self.k_train,
            "split_fractions": list(self.split_fractions),
            "max_resample_attempts": self.max_resample_attempts,
            "nutrient_pool": list(self.nutrient_pool),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GenConfig":
        kwargs: dict = {}
        for key in (
            "seed",
            "n_questions_per_tag",
            "k_train",
            "max_resample_attempts",
        ):
            if key in data:
                kwargs[key] = int(data[key])
        for key in (
            "tags",
            "include_count_range",
            "exclude_count_range",
            "nutrient_constraint_count_range",
            "split_fractions",
            "nutrient_pool",
        ):
            if key in data:
                kwargs[key] = tuple(data[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class BenchmarkItem:
    """One benchmark question with its exact answer set."""

    id: str
    tag: str
    question_text: str
    structured_query: ConstraintQuery
    answers: tuple[str, ...]
    context_size: int

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "tag": self.tag,
            "question": self.question_text,
            "query": self.structured_query.to_json_dict(),
            "answers": list(self.answers),
            "context_size": self.context_size,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "BenchmarkItem":
        return cls(
            id=str(data["id"]),
            tag=str(data["tag"]),
            question_text=str(data["question"]),
            structured_query=ConstraintQuery.from_json_dict(data["query"]),
            answers=tuple(data["answers"]),
            context_size=int(data["context_size"]),
        )


@dataclass(frozen=True)
class TrainingExample:
    """A question with a mixed positive/negative context and its answer titles."""

    question_text: str
    context_lines: tuple[str, ...]
    answer_titles: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "question": self.question_text,
            "context": list(self.context_lines),
            "answers": list(self.answer_titles),
        }


@dataclass(frozen=True)
class PromptPair:
    """One generation-task sample: substituted prompt and its target text."""

    prompt: str
    target: str
    task: str
    inputs_used: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.task not in ("recipe_gen", "nutri_gen"):
            raise GenerationError(f"unknown task: {self.task!r}")
        if "<name>" in self.prompt or "<ingredients>" in self.prompt or "<instructions>" in self.prompt:
            raise GenerationError("prompt has a residual placeholder")
        if not self.target:
            raise GenerationError("target must be non-empty")

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "prompt": self.prompt,
            "target": self.target,
            "inputs_used": list(self.inputs_used),
        }


@dataclass
class DatasetSplits:
    train: list[BenchmarkItem] = field(default_factory=list)
    val: list[BenchmarkItem] = field(default_factory=list)
    test: list[BenchmarkItem] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def all_items(self) -> list[BenchmarkItem]:
        return self.train + self.val + self.test


def tag_rng(seed: int, tag: str) -> random.Random:
    """Independent generator for one tag's stream; stable across runs."""
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return random.Random(seed ^ int.from_bytes(digest[:8], "big"))


def sample_preferences(
    kg: KnowledgeGraph, tag: str, rng: random.Random, cfg: GenConfig
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Disjoint liked/disliked ingredient tuples drawn from the tag's vocabulary."""
    vocab = kg.ingredient_vocabulary(tag)
    need = cfg.include_count_range[1] + cfg.exclude_count_range[1]
    if len(vocab) < need:
        raise GenerationError(
            f"tag {tag!r} vocabulary has {len(vocab)} ingredients; needs {need}"
        )
    n_inc = rng.randint(*cfg.include_count_range)
    n_exc = rng.randint(*cfg.exclude_count_range)
    picks = rng.sample(vocab, n_inc + n_exc)
    return tuple(picks[:n_inc]), tuple(picks[n_inc:])


def sample_nutrient_constraint(
    stats: NutrientStats, rng: random.Random
) -> NutrientConstraint:
    """Constraint with a threshold drawn uniformly from mean +/- 2 stddev.

    Filter kind is uniform over the three kinds; a range anchors at 0 or
    at the observed max by fair coin.  All-zero samples (mean + 2 stddev
    == 0) are rejected as degenerate.
    """
    lo_bound = max(0.0, stats.mean - 2 * stats.stddev)
    hi_bound = stats.mean + 2 * stats.stddev
    if hi_bound <= 0:
        raise GenerationError(
            f"nutrient {stats.nutrient!r} is degenerate (mean + 2*stddev == 0)"
        )
    kind = rng.choice((LESS_THAN, AT_LEAST, RANGE))
    x = rng.uniform(lo_bound, hi_bound)
    if kind == RANGE:
        lower_anchored = rng.random() < 0.5
        lo, hi = (0.0, x) if lower_anchored else (x, stats.max)
        if not lo < hi:
            # the coin picked a collapsed interval (x == 0 or x >= max);
            # the other anchoring is valid whenever hi_bound > 0
            lo, hi = (x, stats.max) if lower_anchored else (0.0, x)
        if not lo < hi:
            raise GenerationError(
                f"nutrient {stats.nutrient!r} admits no valid range around {x}"
            )
        return NutrientConstraint(nutrient=stats.nutrient, kind=RANGE, lo=lo, hi=hi)
    inclusive = rng.random() < 0.5
    return NutrientConstraint(
        nutrient=stats.nutrient, kind=kind, value=x, inclusive=inclusive
    )


def generate_kgqa_item(
    kg: KnowledgeGraph,
    tag: str,
    rng: random.Random,
    cfg: GenConfig,
    templates: list[QuestionTemplate],
    item_id: str,
) -> BenchmarkItem:
    """One question for the tag, resampled until its answer set is non-empty."""
    tag_recipes = kg.recipes_with_tag(tag)
    if not tag_recipes:
        raise GenerationError(f"tag {tag!r} has no recipes")
    stats_cache: dict[str, NutrientStats | None] = {}

    def stats_for(nutrient: str) -> NutrientStats | None:
        if nutrient not in stats_cache:
            try:
                stats_cache[nutrient] = kg.nutrient_stats(tag, nutrient)
            except NoDataError:
                stats_cache[nutrient] = None
        return stats_cache[nutrient]

    usable_pool = [n for n in cfg.nutrient_pool if stats_for(n) is not None]
    for _ in range(cfg.max_resample_attempts):
        template = rng.choice(templates)
        includes, excludes = sample_preferences(kg, tag, rng, cfg)
        n_con = rng.randint(*cfg.nutrient_constraint_count_range)
        n_con = min(n_con, len(usable_pool))
        constraints: list[NutrientConstraint] = []
        ok = True
        for nutrient in rng.sample(usable_pool, n_con) if n_con else []:
            stats = stats_for(nutrient)
            assert stats is not None
            try:
                constraints.append(sample_nutrient_constraint(stats, rng))
            except GenerationError:
                ok = False
                break
        if not ok:
            continue
        query = ConstraintQuery(
            tag=tag,
            includes=includes,
            excludes=excludes,
            constraints=tuple(constraints),
        )
        positives = ground_truth(kg, query)
        if not positives:
            continue
        return BenchmarkItem(
            id=item_id,
            tag=tag,
            question_text=render_question(query, template),
            structured_query=query,
            answers=tuple(r.title for r in positives),
            context_size=len(tag_recipes),
        )
    raise GenerationError(
        f"tag {tag!r}: no satisfiable question in {cfg.max_resample_attempts} attempts"
    )


def _split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of n items over the three splits."""
    raw = [n * f for f in fractions]
    base = [int(x) for x in raw]
    short = n - sum(base)
    order = sorted(range(3), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base[0], base[1], base[2]


def _summary(values: list[int]) -> dict:
    return {
        "min": min(values),
        "max": max(values),
        "avg": sum(values) / len(values),
    }


def generate_dataset(
    kg: KnowledgeGraph, cfg: GenConfig, templates: list[QuestionTemplate]
) -> DatasetSplits:
    """Full benchmark: per-tag questions, stratified splits, and a stats report.

    Deterministic in (kg, cfg): each tag uses its own seed-derived
    generator and contributes a contiguous block of items split by the
    configured fractions (largest remainder, so sizes are exact up to
    rounding).
    """
    splits = DatasetSplits()
    per_tag_stats: dict[str, dict] = {}
    for tag in cfg.tags:
        rng = tag_rng(cfg.seed, tag)
        items = [
            generate_kgqa_item(kg, tag, rng, cfg, templates, f"{tag}-{i:05d}")
            for i in range(cfg.n_questions_per_tag)
        ]
        n_train, n_val, _ = _split_counts(len(items), cfg.split_fractions)
        splits.train.extend(items[:n_train])
        splits.val.extend(items[n_train : n_train + n_val])
        splits.test.extend(items[n_train + n_val :])
        per_tag_stats[tag] = {
            "n_questions": len(items),
            "context_size": _summary([it.context_size for it in items]),
            "n_answers": _summary([len(it.answers) for it in items]),
        }
    every = splits.all_items()
    splits.stats = {
        "n_questions": len(every),
        "splits": {
            "train": len(splits.train),
            "val": len(splits.val),
            "test": len(splits.test),
        },
        "context_size": _summary([it.context_size for it in every]),
        "n_answers": _summary([len(it.answers) for it in every]),
        "per_tag": per_tag_stats,
    }
    return splits


def sample_training_context(
    item: BenchmarkItem,
    kg: KnowledgeGraph,
    cfg: GenConfig,
    rng: random.Random,
) -> TrainingExample:
    """Mixed context of at most k/2 positives and k/2 negatives, shuffled."""
    query = item.structured_query
    positives = ground_truth(kg, query)
    positive_ids = {r.id for r in positives}
    negatives = [
        r for r in kg.recipes_with_tag(query.tag) if r.id not in positive_ids
    ]
    half = cfg.k_train // 2
    chosen_pos = rng.sample(positives, min(half, len(positives)))
    chosen_neg = rng.sample(negatives, min(half, len(negatives)))
    pos_ids = {r.id for r in chosen_pos}
    context = chosen_pos + chosen_neg
    rng.shuffle(context)
    return TrainingExample(
        question_text=item.question_text,
        context_lines=tuple(serialize_recipe_context(r) for r in context),
        answer_titles=tuple(r.title for r in context if r.id in pos_ids),
    )


# ---------------------------------------------------------------------------
# Prompt datasets


def _substitute(template: str, recipe: Recipe) -> tuple[str, tuple[str, ...]]:
    prompt = template
    used: list[str] = []
    for placeholder, input_name in _PLACEHOLDER_INPUTS:
        if placeholder not in prompt:
            continue
        if input_name == "title":
            value = recipe.title
        elif input_name == "ingredients":
            value = ", ".join(recipe.ingredients)
        else:
            value = " ".join(recipe.instructions)
        prompt = prompt.replace(placeholder, value)
        used.append(input_name)
    return prompt, tuple(used)


def _nutrition_target(recipe: Recipe) -> str:
    body = ", ".join(
        f'"{name}": {format_decimal(recipe.nutrition[name])}'
        for name in sorted(recipe.nutrition)
    )
    return "{" + body + "}"


def generate_nutri_prompts(
    recipe: Recipe,
    templates: tuple[str, ...] = NUTRITION_PROMPT_TEMPLATES,
    rng: random.Random | None = None,
    sample_count: int | None = None,
    diagnostics: list[str] | None = None,
) -> list[PromptPair]:
    """Nutrition-estimation pairs; the target is the canonical nutrient JSON.

    Templates needing an input the recipe lacks are skipped (recorded in
    ``diagnostics`` when given).  ``sample_count`` with ``rng`` draws a
    template subset instead of using all of them.
    """
    if not recipe.nutrition:
        raise GenerationError(f"recipe {recipe.id} has no nutrition data")
    pool = list(templates)
    if sample_count is not None:
        if rng is None:
            raise GenerationError("sample_count needs an rng")
        pool = rng.sample(pool, min(sample_count, len(pool)))
    target = _nutrition_target(recipe)
    out: list[PromptPair] = []
    for template in pool:
        if "<instructions>" in template and not recipe.instructions:
            if diagnostics is not None:
                diagnostics.append(
                    f"recipe {recipe.id}: skipped template needing instructions"
                )
            continue
        prompt, used = _substitute(template, recipe)
        out.append(
            PromptPair(prompt=prompt, target=target, task="nutri_gen", inputs_used=used)
        )
    return out


def generate_recipe_prompts(
    recipe: Recipe,
    templates: tuple[str, ...] = RECIPE_PROMPT_TEMPLATES,
    rng: random.Random | None = None,
    sample_count: int | None = None,
) -> list[PromptPair]:
    """Recipe-generation pairs; the target is the newline-joined steps."""
    if not recipe.instructions:
        raise GenerationError(f"recipe {recipe.id} has no instructions")
    pool = list(templates)
    if sample_count is not None:
        if rng is None:
            raise GenerationError("sample_count needs an rng")
        pool = rng.sample(pool, min(sample_count, len(pool)))
    target = "\n".join(recipe.instructions)
    return [
        PromptPair(prompt=prompt, target=target, task="recipe_gen", inputs_used=used)
        for prompt, used in (_substitute(t, recipe) for t in pool)
    ]


# ---------------------------------------------------------------------------
# Newline-delimited JSON files


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_kgqa_dataset(splits: DatasetSplits, out_dir: str | Path) -> dict[str, Path]:
    """Write train/val/test JSONL plus the stats report; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for name, items in (
        ("train", splits.train),
        ("val", splits.val),
        ("test", splits.test),
    ):
        path = out / f"{name}.jsonl"
        _write_jsonl(path, [it.to_json_dict() for it in items])
        paths[name] = path
    stats_path = out / "stats.json"
    stats_path.write_text(
        json.dumps(splits.stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["stats"] = stats_path
    return paths


def read_kgqa_items(path: str | Path) -> list[BenchmarkItem]:
    items: list[BenchmarkItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                items.append(BenchmarkItem.from_json_dict(json.loads(line)))
    return items


def write_training_examples(
    examples: list[TrainingExample], path: str | Path
) -> None:
    _write_jsonl(Path(path), [ex.to_json_dict() for ex in examples])


def write_prompt_pairs(pairs: list[PromptPair], path: str | Path) -> None:
    _write_jsonl(Path(path), [p.to_json_dict() for p in pairs])


def read_prompt_pairs(path: str | Path) -> list[PromptPair]:
    pairs: list[PromptPair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                data = json.loads(line)
                pairs.append(
                    PromptPair(
                        prompt=data["prompt"],
                        target=data["target"],
                        task=data["task"],
                        inputs_used=tuple(data.get("inputs_used", ())),
                    )
                )
    return pairs
