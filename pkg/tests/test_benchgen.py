"""Unit tests for benchmark generation: config validation, samplers,
split apportionment, determinism, and the prompt-pair datasets."""

import json
import random

import pytest

from recigraph.benchgen import (
    BenchmarkItem,
    GenConfig,
    GenerationError,
    NUTRITION_PROMPT_TEMPLATES,
    RECIPE_PROMPT_TEMPLATES,
    _split_counts,
    generate_dataset,
    generate_kgqa_item,
    generate_nutri_prompts,
    generate_recipe_prompts,
    read_kgqa_items,
    read_prompt_pairs,
    sample_nutrient_constraint,
    sample_preferences,
    sample_training_context,
    tag_rng,
    write_kgqa_dataset,
    write_prompt_pairs,
    write_training_examples,
)
from recigraph.constraints import AT_LEAST, LESS_THAN, RANGE, ground_truth, satisfies
from recigraph.kg_store import NutrientStats


def small_config(**overrides) -> GenConfig:
    base = dict(
        seed=3,
        tags=("high-fiber", "vegan", "low-protein"),
        n_questions_per_tag=10,
        include_count_range=(1, 2),
        exclude_count_range=(0, 2),
        nutrient_constraint_count_range=(0, 2),
        k_train=6,
    )
    base.update(overrides)
    return GenConfig(**base)


class TestGenConfig:
    def test_defaults_valid(self):
        cfg = GenConfig()
        assert cfg.n_questions_per_tag == 100
        assert cfg.split_fractions == (0.8, 0.1, 0.1)
        assert len(cfg.tags) == 15

    @pytest.mark.parametrize(
        "overrides",
        [
            {"split_fractions": (0.5, 0.5, 0.5)},
            {"split_fractions": (1.2, -0.1, -0.1)},
            {"include_count_range": (3, 1)},
            {"include_count_range": (-1, 2)},
            {"k_train": 3},
            {"k_train": 0},
            {"n_questions_per_tag": 0},
            {"max_resample_attempts": 0},
            {"tags": ()},
            {"nutrient_pool": ()},
        ],
    )
    def test_invalid_configs_rejected(self, overrides):
        with pytest.raises(GenerationError):
            GenConfig(**overrides)

    def test_json_round_trip(self):
        cfg = small_config()
        data = json.loads(json.dumps(cfg.to_json_dict()))
        assert GenConfig.from_json_dict(data) == cfg

    def test_from_json_partial(self):
        cfg = GenConfig.from_json_dict({"seed": 9, "k_train": 4})
        assert cfg.seed == 9
        assert cfg.k_train == 4
        assert cfg.tags == GenConfig().tags


class TestTagRng:
    def test_deterministic(self):
        a = tag_rng(7, "dessert")
        b = tag_rng(7, "dessert")
        assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]

    def test_streams_differ_by_tag_and_seed(self):
        draws = {
            (seed, tag): tag_rng(seed, tag).random()
            for seed in (1, 2)
            for tag in ("dessert", "vegan")
        }
        assert len(set(draws.values())) == 4


class TestSamplePreferences:
    def test_disjoint_and_within_vocabulary(self, sample_graph):
        cfg = small_config()
        rng = random.Random(0)
        vocab = set(sample_graph.ingredient_vocabulary("vegan"))
        for _ in range(50):
            includes, excludes = sample_preferences(sample_graph, "vegan", rng, cfg)
            assert set(includes) <= vocab
            assert set(excludes) <= vocab
            assert not set(includes) & set(excludes)
            lo, hi = cfg.include_count_range
            assert lo <= len(includes) <= hi
            lo, hi = cfg.exclude_count_range
            assert lo <= len(excludes) <= hi

    def test_small_vocabulary_rejected(self, sample_graph):
        cfg = small_config(include_count_range=(500, 500), exclude_count_range=(500, 500))
        with pytest.raises(GenerationError, match="vocabulary"):
            sample_preferences(sample_graph, "vegan", random.Random(0), cfg)


class TestSampleNutrientConstraint:
    STATS = NutrientStats(nutrient="salt", count=10, mean=1.0, stddev=0.25, max=2.5)

    def test_thresholds_stay_in_band(self):
        rng = random.Random(5)
        lo_bound = max(0.0, self.STATS.mean - 2 * self.STATS.stddev)
        hi_bound = self.STATS.mean + 2 * self.STATS.stddev
        kinds = set()
        for _ in range(300):
            c = sample_nutrient_constraint(self.STATS, rng)
            kinds.add(c.kind)
            assert c.nutrient == "salt"
            if c.kind == RANGE:
                assert c.lo is not None and c.hi is not None and c.lo < c.hi
                assert c.lo == 0.0 or c.hi == self.STATS.max
            else:
                assert lo_bound <= c.value <= hi_bound
        assert kinds == {LESS_THAN, AT_LEAST, RANGE}

    def test_degenerate_distribution_rejected(self):
        stats = NutrientStats(nutrient="salt", count=3, mean=0.0, stddev=0.0, max=0.0)
        with pytest.raises(GenerationError, match="degenerate"):
            sample_nutrient_constraint(stats, random.Random(0))

    def test_deterministic_for_seed(self):
        a = [sample_nutrient_constraint(self.STATS, random.Random(4)) for _ in range(1)]
        b = [sample_nutrient_constraint(self.STATS, random.Random(4)) for _ in range(1)]
        assert a == b


class TestGenerateItem:
    def test_answers_match_ground_truth(self, sample_graph, templates):
        cfg = small_config()
        rng = tag_rng(cfg.seed, "high-fiber")
        item = generate_kgqa_item(sample_graph, "high-fiber", rng, cfg, templates, "hf-0")
        positives = ground_truth(sample_graph, item.structured_query)
        assert item.answers == tuple(r.title for r in positives)
        assert 1 <= len(item.answers) <= item.context_size
        assert item.context_size == len(sample_graph.recipes_with_tag("high-fiber"))
        assert item.id == "hf-0"
        assert item.tag == "high-fiber"

    def test_question_parses_back_to_query(self, sample_graph, templates):
        from recigraph.constraints import parse_question

        cfg = small_config()
        rng = tag_rng(cfg.seed, "vegan")
        item = generate_kgqa_item(sample_graph, "vegan", rng, cfg, templates, "vegan-0")
        parsed = parse_question(item.question_text, sample_graph.tags(), templates)
        assert parsed == item.structured_query

    def test_unknown_tag_rejected(self, sample_graph, templates):
        with pytest.raises(GenerationError, match="no recipes"):
            generate_kgqa_item(
                sample_graph, "no-such-tag", random.Random(0), small_config(), templates, "x-0"
            )

    def test_json_round_trip(self, sample_graph, templates):
        cfg = small_config()
        rng = tag_rng(cfg.seed, "high-fiber")
        item = generate_kgqa_item(sample_graph, "high-fiber", rng, cfg, templates, "hf-0")
        data = json.loads(json.dumps(item.to_json_dict()))
        assert BenchmarkItem.from_json_dict(data) == item


class TestSplitCounts:
    @pytest.mark.parametrize(
        "n,expected",
        [
            (100, (80, 10, 10)),
            (10, (8, 1, 1)),
            (4, (3, 1, 0)),
            (2, (2, 0, 0)),
            (1, (1, 0, 0)),
            (0, (0, 0, 0)),
            (99, (79, 10, 10)),
        ],
    )
    def test_default_fractions(self, n, expected):
        assert _split_counts(n, (0.8, 0.1, 0.1)) == expected

    def test_always_sums_and_stays_within_one(self):
        for n in range(0, 200):
            counts = _split_counts(n, (0.8, 0.1, 0.1))
            assert sum(counts) == n
            for count, fraction in zip(counts, (0.8, 0.1, 0.1)):
                assert abs(count - n * fraction) < 1.0 + 1e-9


class TestGenerateDataset:
    @pytest.fixture(scope="class")
    @staticmethod
    def dataset(sample_graph, templates):
        return generate_dataset(sample_graph, small_config(), templates)

    def test_counts(self, dataset):
        assert len(dataset.all_items()) == 30
        assert len(dataset.train) == 24
        assert len(dataset.val) == 3
        assert len(dataset.test) == 3

    def test_stratified_by_tag(self, dataset):
        for split in (dataset.train, dataset.val, dataset.test):
            tags = {it.tag for it in split}
            assert tags == {"high-fiber", "vegan", "low-protein"}

    def test_ids_unique(self, dataset):
        ids = [it.id for it in dataset.all_items()]
        assert len(ids) == len(set(ids))

    def test_stats_shape(self, dataset):
        stats = dataset.stats
        assert stats["n_questions"] == 30
        assert stats["splits"] == {"train": 24, "val": 3, "test": 3}
        assert set(stats["per_tag"]) == {"high-fiber", "vegan", "low-protein"}
        assert stats["n_answers"]["min"] >= 1

    def test_deterministic_regeneration(self, sample_graph, templates, dataset):
        again = generate_dataset(sample_graph, small_config(), templates)
        assert [it.to_json_dict() for it in again.all_items()] == [
            it.to_json_dict() for it in dataset.all_items()
        ]

    def test_tag_order_does_not_change_per_tag_items(self, sample_graph, templates):
        cfg = small_config(tags=("vegan", "high-fiber", "low-protein"))
        shuffled = generate_dataset(sample_graph, cfg, templates)
        baseline = generate_dataset(sample_graph, small_config(), templates)
        by_tag_a = sorted(it.id for it in baseline.all_items() if it.tag == "vegan")
        by_tag_b = sorted(it.id for it in shuffled.all_items() if it.tag == "vegan")
        assert by_tag_a == by_tag_b

    def test_file_round_trip(self, dataset, tmp_path):
        paths = write_kgqa_dataset(dataset, tmp_path)
        assert set(paths) == {"train", "val", "test", "stats"}
        for name, items in (("train", dataset.train), ("val", dataset.val), ("test", dataset.test)):
            assert read_kgqa_items(paths[name]) == items
        stats = json.loads(paths["stats"].read_text())
        assert stats["n_questions"] == 30


class TestTrainingContext:
    def test_half_and_half_cap(self, sample_graph, templates):
        cfg = small_config(k_train=4)
        rng = tag_rng(cfg.seed, "high-fiber")
        item = generate_kgqa_item(sample_graph, "high-fiber", rng, cfg, templates, "d-0")
        sampler_rng = random.Random(99)
        example = sample_training_context(item, sample_graph, cfg, sampler_rng)
        half = cfg.k_train // 2
        positives = set(item.answers)
        in_context_pos = [
            line for line in example.context_lines
            if line.split(" | ")[0][len("name: "):] in positives
        ]
        assert len(in_context_pos) <= half
        assert len(example.context_lines) - len(in_context_pos) <= half
        assert example.question_text == item.question_text

    def test_answers_are_exactly_in_context_positives(self, sample_graph, templates):
        from recigraph.kg_store import parse_recipe_context

        cfg = small_config(k_train=8)
        rng = tag_rng(cfg.seed, "vegan")
        item = generate_kgqa_item(sample_graph, "vegan", rng, cfg, templates, "v-0")
        example = sample_training_context(item, sample_graph, cfg, random.Random(5))
        context_titles = [
            parse_recipe_context(line).title for line in example.context_lines
        ]
        expected = [
            t for t in context_titles
            if satisfies_title(sample_graph, t, item) and t in item.answers
        ]
        assert list(example.answer_titles) == expected

    def test_writer(self, sample_graph, templates, tmp_path):
        cfg = small_config(k_train=4)
        rng = tag_rng(cfg.seed, "high-fiber")
        item = generate_kgqa_item(sample_graph, "high-fiber", rng, cfg, templates, "d-0")
        example = sample_training_context(item, sample_graph, cfg, random.Random(1))
        path = tmp_path / "train_ctx.jsonl"
        write_training_examples([example], path)
        record = json.loads(path.read_text().splitlines()[0])
        assert record["question"] == item.question_text
        assert record["answers"] == list(example.answer_titles)
        assert record["context"] == list(example.context_lines)


def satisfies_title(kg, title, item):
    recipes = [r for r in kg.recipes.values() if r.title == title]
    return any(satisfies(r, item.structured_query) for r in recipes)


class TestPromptPairs:
    def test_nutri_prompts_substituted(self, sample_graph):
        recipe = next(iter(sample_graph.recipes.values()))
        pairs = generate_nutri_prompts(recipe)
        assert pairs
        for pair in pairs:
            assert pair.task == "nutri_gen"
            assert "<name>" not in pair.prompt
            assert pair.inputs_used
            if "title" in pair.inputs_used:
                assert recipe.title in pair.prompt
            if "ingredients" in pair.inputs_used:
                assert ", ".join(recipe.ingredients) in pair.prompt
            parsed = json.loads(pair.target)
            assert parsed.keys() == recipe.nutrition.keys()
            for name, value in recipe.nutrition.items():
                assert parsed[name] == pytest.approx(value, abs=1e-9)

    def test_recipe_prompts_target_is_steps(self, sample_graph):
        recipe = next(iter(sample_graph.recipes.values()))
        pairs = generate_recipe_prompts(recipe)
        assert pairs
        for pair in pairs:
            assert pair.task == "recipe_gen"
            assert pair.target == "\n".join(recipe.instructions)
            assert pair.inputs_used

    def test_missing_nutrition_rejected(self, fixture_graph):
        recipe = next(iter(fixture_graph.recipes.values()))
        bare = recipe.__class__(
            id="x",
            title="X",
            ingredients=("flour",),
            instructions=("mix",),
            nutrition={},
            tags=("dessert",),
        )
        with pytest.raises(GenerationError, match="no nutrition"):
            generate_nutri_prompts(bare)
        no_steps = recipe.__class__(
            id="y",
            title="Y",
            ingredients=("flour",),
            instructions=(),
            nutrition={"salt": 0.2},
            tags=("dessert",),
        )
        with pytest.raises(GenerationError, match="no instructions"):
            generate_recipe_prompts(no_steps)

    def test_instruction_templates_skipped_with_diagnostics(self):
        from recigraph.kg_store import Recipe

        recipe = Recipe(
            id="z",
            title="Z",
            ingredients=("flour",),
            instructions=(),
            nutrition={"salt": 0.2},
            tags=("dessert",),
        )
        diagnostics: list[str] = []
        pairs = generate_nutri_prompts(recipe, diagnostics=diagnostics)
        needing = [t for t in NUTRITION_PROMPT_TEMPLATES if "<instructions>" in t]
        assert len(pairs) == len(NUTRITION_PROMPT_TEMPLATES) - len(needing)
        assert len(diagnostics) == len(needing)

    def test_sample_count_draws_subset(self, sample_graph):
        recipe = next(iter(sample_graph.recipes.values()))
        pairs = generate_nutri_prompts(recipe, rng=random.Random(3), sample_count=1)
        assert len(pairs) == 1
        with pytest.raises(GenerationError, match="rng"):
            generate_nutri_prompts(recipe, sample_count=1)

    def test_file_round_trip(self, sample_graph, tmp_path):
        recipe = next(iter(sample_graph.recipes.values()))
        pairs = generate_nutri_prompts(recipe) + generate_recipe_prompts(recipe)
        path = tmp_path / "pairs.jsonl"
        write_prompt_pairs(pairs, path)
        assert read_prompt_pairs(path) == pairs

    def test_templates_exist(self):
        assert len(NUTRITION_PROMPT_TEMPLATES) >= 3
        assert len(RECIPE_PROMPT_TEMPLATES) >= 3
