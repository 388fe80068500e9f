"""Unit tests for the recommendation pipeline: chunking, prompt assembly,
answer parsing, the exact-evaluator backend, the HTTP backend against a
recording stub server, retries, and hallucination filtering."""

import math
import random

import pytest
import requests

from recigraph.constraints import ConstraintQuery, QuestionParseError, ground_truth
from recigraph.kg_store import normalize_title, serialize_recipe_context
from recigraph.pipeline import (
    BackendConfig,
    BackendError,
    ContextChunk,
    DEFAULT_CHUNK_BUDGET,
    GenerationResult,
    OracleBackend,
    RETRY_ATTEMPTS,
    RemoteBackend,
    assemble_prompt,
    chunk_context,
    make_backend,
    parse_answer_list,
    recommend,
    retrieve_context,
    split_prompt,
)


class CountingOracle:
    """Wraps the exact evaluator and counts generate() calls."""

    def __init__(self, kg, templates=None, known_tags=None):
        self.inner = OracleBackend(kg, templates, known_tags)
        self.calls = 0

    def generate(self, prompt):
        self.calls += 1
        return self.inner.generate(prompt)


class ScriptedBackend:
    """Returns queued results; raising entries simulate failures."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def generate(self, prompt):
        self.calls += 1
        step = self.script.pop(0) if self.script else ""
        if isinstance(step, Exception):
            raise step
        return GenerationResult(text=step)


class TestBackendConfig:
    def test_defaults(self):
        cfg = BackendConfig()
        assert cfg.kind == "oracle"
        assert cfg.temperature == 0.2
        assert cfg.num_beams == 1
        assert cfg.max_new_tokens == 1024
        assert cfg.parallelism == 1
        assert cfg.want_logprobs is False

    @pytest.mark.parametrize(
        "overrides",
        [
            {"kind": "quantum"},
            {"kind": "remote"},
            {"temperature": -0.1},
            {"num_beams": 0},
            {"max_new_tokens": 0},
            {"parallelism": 0},
        ],
    )
    def test_validation(self, overrides):
        with pytest.raises(ValueError):
            BackendConfig(**overrides)

    def test_json_round_trip(self):
        cfg = BackendConfig(kind="remote", endpoint="http://x/y", temperature=0.7)
        data = cfg.to_json_dict()
        assert BackendConfig.from_json_dict(data) == cfg


class TestChunkContext:
    def test_greedy_packing_golden(self, sample_graph):
        recipes = sample_graph.recipes_with_tag("vegan")[:3]
        lines = [serialize_recipe_context(r) for r in recipes]
        budget = len(lines[0]) + 1 + len(lines[1])
        chunks = chunk_context(recipes, budget)
        assert [len(c.lines) for c in chunks] == [2, 1]
        assert chunks[0].char_budget_used == budget
        assert chunks[1].char_budget_used == len(lines[2])

    def test_partition_is_lossless(self, sample_graph):
        rng = random.Random(3)
        recipes = list(sample_graph.recipes.values())
        for _ in range(100):
            subset = rng.sample(recipes, rng.randint(1, 40))
            budget = rng.randint(50, 5000)
            chunks = chunk_context(subset, budget)
            flat_lines = [line for c in chunks for line in c.lines]
            assert flat_lines == [serialize_recipe_context(r) for r in subset]
            flat_titles = [t for c in chunks for t in c.recipe_titles]
            assert flat_titles == [r.title for r in subset]
            assert [c.index for c in chunks] == list(range(len(chunks)))
            for c in chunks:
                assert c.char_budget_used == len("\n".join(c.lines))

    def test_budget_respected_except_oversized_lines(self, sample_graph):
        recipes = list(sample_graph.recipes.values())[:30]
        budget = 400
        for chunk in chunk_context(recipes, budget):
            if len(chunk.lines) > 1:
                assert chunk.char_budget_used <= budget

    def test_single_oversized_line_gets_own_chunk(self, sample_graph):
        recipes = sample_graph.recipes_with_tag("vegan")[:2]
        chunks = chunk_context(recipes, 1)
        assert [len(c.lines) for c in chunks] == [1, 1]

    def test_empty_input(self, sample_graph):
        assert chunk_context([], 100) == []

    def test_bad_budget_rejected(self, sample_graph):
        with pytest.raises(ValueError):
            chunk_context([], 0)

    def test_chunk_validation(self):
        with pytest.raises(ValueError):
            ContextChunk(index=0, lines=(), recipe_titles=(), char_budget_used=0)
        with pytest.raises(ValueError):
            ContextChunk(
                index=0, lines=("a",), recipe_titles=(), char_budget_used=1
            )


class TestGenerationResult:
    def test_logprob_validation(self):
        GenerationResult(text="x", token_logprobs=(("a", -0.5), ("b", 0.0)))
        for bad in (0.5, float("nan"), float("inf")):
            with pytest.raises(ValueError):
                GenerationResult(text="x", token_logprobs=(("a", bad),))


class TestPromptAssembly:
    def test_round_trip(self):
        chunk = ContextChunk(
            index=0,
            lines=("name: A | ingredients: x | tags: t", "name: B | ingredients: y | tags: t"),
            recipe_titles=("A", "B"),
            char_budget_used=10,
        )
        prompt = assemble_prompt("Which recipes?", chunk)
        question, lines = split_prompt(prompt)
        assert question == "Which recipes?"
        assert lines == list(chunk.lines)

    def test_prompt_shape(self):
        chunk = ContextChunk(
            index=0, lines=("line",), recipe_titles=("T",), char_budget_used=4
        )
        prompt = assemble_prompt("Q?", chunk)
        assert prompt == "Q?\nContext:\nline\nAnswer with recipe names only, one per line."

    def test_malformed_prompt_rejected(self):
        with pytest.raises(BackendError):
            split_prompt("no structure at all")


class TestParseAnswerList:
    def test_markers_stripped(self):
        text = "- Apple Pie\n* Beet Salad\n3. Carrot Cake"
        assert parse_answer_list(text) == ["apple pie", "beet salad", "carrot cake"]

    def test_trailing_punctuation_stripped(self):
        assert parse_answer_list("Apple Pie.\nBeet Salad!") == ["apple pie", "beet salad"]

    def test_deduplicated_preserving_order(self):
        assert parse_answer_list("B\na\nb\nA") == ["b", "a"]

    def test_blank_lines_ignored(self):
        assert parse_answer_list("\n\nA\n\n") == ["a"]

    def test_empty_text(self):
        assert parse_answer_list("") == []


class TestRetrieveContext:
    def test_matches_tag_index(self, sample_graph):
        for tag in ("vegan", "low-protein", "high-fiber"):
            query = ConstraintQuery(tag=tag)
            got = retrieve_context(sample_graph, query)
            assert got == sample_graph.recipes_with_tag(tag)


class TestOracleBackend:
    def test_chunk_level_filtering(self, sample_graph, templates):
        tag = "vegan"
        recipes = sample_graph.recipes_with_tag(tag)[:6]
        query = ConstraintQuery(tag=tag, includes=(recipes[0].ingredients[0],))
        expected = [r.title for r in recipes if recipes[0].ingredients[0] in r.ingredients]
        chunk = ContextChunk(
            index=0,
            lines=tuple(serialize_recipe_context(r) for r in recipes),
            recipe_titles=tuple(r.title for r in recipes),
            char_budget_used=0,
        )
        from recigraph.constraints import render_question

        question = render_question(query, templates[0])
        backend = OracleBackend(sample_graph, templates)
        result = backend.generate(assemble_prompt(question, chunk))
        assert result.text.split("\n") if result.text else [] == expected

    def test_recommend_equals_ground_truth(self, sample_graph, templates):
        tag = "vegetarian"
        vocab = sample_graph.ingredient_vocabulary(tag)
        query = ConstraintQuery(tag=tag, includes=(vocab[0],))
        from recigraph.constraints import render_question

        question = render_question(query, templates[0])
        backend = OracleBackend(sample_graph, templates)
        result = recommend(sample_graph, question, backend, templates=templates)
        expected = tuple(r.title for r in ground_truth(sample_graph, query))
        assert result.final_titles == expected
        assert result.failed_chunks == ()
        assert result.query == query

    def test_chunk_budget_invariance_quick(self, sample_graph, templates):
        question = "Give me vegan recipes."
        backend = OracleBackend(sample_graph, templates)
        budgets = (800, 4000, DEFAULT_CHUNK_BUDGET, 10**9)
        outcomes = [
            recommend(
                sample_graph, question, backend, templates=templates, chunk_budget=b
            ).final_titles
            for b in budgets
        ]
        assert all(set(o) == set(outcomes[0]) for o in outcomes)
        assert len(outcomes[-1]) == len(set(outcomes[-1]))

    def test_unknown_tag_raises_without_backend_calls(self, sample_graph, templates):
        backend = CountingOracle(sample_graph, templates)
        with pytest.raises(QuestionParseError) as exc_info:
            recommend(sample_graph, "Give me astronaut recipes.", backend, templates=templates)
        assert exc_info.value.unknown_tag == "astronaut"
        assert backend.calls == 0

    def test_known_tags_override(self, sample_graph, templates):
        backend = CountingOracle(sample_graph, templates, known_tags=["vegan"])
        with pytest.raises(QuestionParseError):
            recommend(
                sample_graph,
                "Give me vegetarian recipes.",
                backend,
                templates=templates,
                known_tags=["vegan"],
            )
        assert backend.calls == 0

    def test_parallel_matches_sequential(self, sample_graph, templates):
        question = "Give me high-fiber recipes."
        backend = OracleBackend(sample_graph, templates)
        seq = recommend(
            sample_graph, question, backend, templates=templates, chunk_budget=1500
        )
        par = recommend(
            sample_graph,
            question,
            backend,
            BackendConfig(parallelism=4),
            templates=templates,
            chunk_budget=1500,
        )
        assert seq.final_titles == par.final_titles
        assert [c.index for c in par.per_chunk] == sorted(c.index for c in par.per_chunk)


class TestRetriesAndHallucination:
    def test_transient_failures_retried(self, sample_graph, templates):
        script = [BackendError("boom"), BackendError("boom"), "Sunday Penne Bake"]
        backend = ScriptedBackend(script)
        recipes = sample_graph.recipes_with_tag("vegetarian")[:1]
        chunk = chunk_context(recipes, 10**9)[0]
        from recigraph.pipeline import _run_chunk

        outcome, matched = _run_chunk("q", chunk, backend)
        assert backend.calls == RETRY_ATTEMPTS
        assert not outcome.failed
        assert matched == [recipes[0].title]

    def test_persistent_failure_marks_chunk(self):
        backend = ScriptedBackend([BackendError("a"), BackendError("b"), BackendError("c"), "never"])
        chunk = ContextChunk(
            index=0, lines=("line",), recipe_titles=("T",), char_budget_used=4
        )
        from recigraph.pipeline import _run_chunk

        outcome, matched = _run_chunk("q", chunk, backend)
        assert backend.calls == RETRY_ATTEMPTS
        assert outcome.failed
        assert matched == []
        assert outcome.parsed == ()

    def test_hallucinated_titles_recorded_and_dropped(self, sample_graph, templates):
        real = sample_graph.recipes_with_tag("vegan")[0]
        backend = ScriptedBackend([f"{real.title}\nImaginary Stew"])
        chunk = chunk_context([real], 10**9)[0]
        from recigraph.pipeline import _run_chunk

        outcome, matched = _run_chunk("q", chunk, backend)
        assert matched == [real.title]
        assert outcome.hallucinated == (normalize_title("Imaginary Stew"),)

    def test_failed_chunks_surface_in_result(self, sample_graph, templates):
        class FailingBackend:
            def generate(self, prompt):
                raise BackendError("always down")

        result = recommend(
            sample_graph,
            "Give me vegan recipes.",
            FailingBackend(),
            templates=templates,
            chunk_budget=2000,
        )
        assert result.final_titles == ()
        assert result.failed_chunks == tuple(range(len(result.per_chunk)))
        assert len(result.per_chunk) > 1


class TestRemoteBackend:
    def make_config(self, stub, **overrides):
        base = dict(kind="remote", endpoint=stub.endpoint)
        base.update(overrides)
        return BackendConfig(**base)

    def test_request_payload_defaults(self, stub_server):
        backend = RemoteBackend(self.make_config(stub_server))
        result = backend.generate("What goes in a salad?")
        assert result.text == ""
        assert len(stub_server.requests) == 1
        payload = stub_server.requests[0]
        assert payload == {
            "prompt": "What goes in a salad?",
            "temperature": 0.2,
            "max_tokens": 1024,
            "num_beams": 1,
            "want_logprobs": False,
        }

    def test_auth_token_sent_as_bearer(self, stub_server):
        backend = RemoteBackend(self.make_config(stub_server, auth_token="sesame"))
        backend.generate("q")
        assert stub_server.headers[0].get("Authorization") == "Bearer sesame"
        backend = RemoteBackend(self.make_config(stub_server))
        backend.generate("q")
        assert "Authorization" not in stub_server.headers[1]

    def test_text_and_logprobs_parsed(self, stub_server):
        lp = -math.log(2.0)
        stub_server.responder = lambda payload: (
            200,
            {"text": "Apple Pie", "logprobs": [["Apple", lp], [" Pie", lp]]},
        )
        backend = RemoteBackend(self.make_config(stub_server, want_logprobs=True))
        result = backend.generate("q")
        assert result.text == "Apple Pie"
        assert result.token_logprobs == (("Apple", lp), (" Pie", lp))
        from recigraph.metrics import perplexity

        assert perplexity([p for _, p in result.token_logprobs]) == pytest.approx(2.0)

    def test_want_logprobs_flag_forwarded(self, stub_server):
        backend = RemoteBackend(self.make_config(stub_server, want_logprobs=True))
        backend.generate("q")
        assert stub_server.requests[0]["want_logprobs"] is True

    def test_non_2xx_raises(self, stub_server):
        stub_server.responder = lambda payload: (503, {"error": "down"})
        backend = RemoteBackend(self.make_config(stub_server))
        with pytest.raises(BackendError, match="503"):
            backend.generate("q")

    def test_malformed_body_raises(self, stub_server):
        stub_server.responder = lambda payload: (200, b"this is not json")
        backend = RemoteBackend(self.make_config(stub_server))
        with pytest.raises(BackendError, match="malformed"):
            backend.generate("q")

    def test_missing_text_raises(self, stub_server):
        stub_server.responder = lambda payload: (200, {"output": "x"})
        backend = RemoteBackend(self.make_config(stub_server))
        with pytest.raises(BackendError, match="text"):
            backend.generate("q")

    def test_bad_logprobs_shape_raises(self, stub_server):
        for bad in ({"a": 1}, [["tok"]], [["tok", "high"]]):
            stub_server.responder = lambda payload, b=bad: (200, {"text": "x", "logprobs": b})
            backend = RemoteBackend(self.make_config(stub_server))
            with pytest.raises(BackendError, match="logprobs"):
                backend.generate("q")

    def test_positive_logprob_raises(self, stub_server):
        stub_server.responder = lambda payload: (200, {"text": "x", "logprobs": [["t", 0.5]]})
        backend = RemoteBackend(self.make_config(stub_server))
        with pytest.raises(BackendError):
            backend.generate("q")

    def test_unreachable_endpoint_raises(self):
        cfg = BackendConfig(kind="remote", endpoint="http://127.0.0.1:1/gen", timeout_s=1)
        backend = RemoteBackend(cfg)
        with pytest.raises(BackendError, match="transport"):
            backend.generate("q")

    def test_persistent_500_fails_chunk_after_retries(self, stub_server, sample_graph, templates):
        stub_server.responder = lambda payload: (500, {"error": "boom"})
        cfg = self.make_config(stub_server)
        backend = RemoteBackend(cfg)
        result = recommend(
            sample_graph,
            "Give me vegan recipes.",
            backend,
            cfg,
            templates=templates,
            chunk_budget=10**9,
        )
        assert result.failed_chunks == (0,)
        assert len(stub_server.requests) == RETRY_ATTEMPTS

    def test_make_backend_dispatch(self, sample_graph, stub_server):
        assert isinstance(make_backend(sample_graph, BackendConfig()), OracleBackend)
        remote = make_backend(sample_graph, self.make_config(stub_server))
        assert isinstance(remote, RemoteBackend)

    def test_requires_remote_config(self):
        with pytest.raises(ValueError):
            RemoteBackend(BackendConfig(kind="oracle"))

    def test_session_reuse(self, stub_server):
        session = requests.Session()
        backend = RemoteBackend(self.make_config(stub_server), session=session)
        backend.generate("q")
        assert stub_server.requests
