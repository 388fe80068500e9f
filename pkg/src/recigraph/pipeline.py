"""Recommendation inference loop: parse a question, retrieve the tag's
recipes as context, chunk them under a character budget, query a model
backend per chunk, and aggregate answers into one recommendation.

Backends implement ``generate(prompt) -> GenerationResult``.  The oracle
backend evaluates the constraints exactly; the remote backend speaks a
completion-style JSON wire format over HTTP.
"""

from __future__ import annotations

import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from . import squeal
from .constraints import (
    ConstraintQuery,
    QuestionTemplate,
    load_templates,
    parse_question,
    satisfies,
)
from .kg_store import (
    KnowledgeGraph,
    Recipe,
    normalize_title,
    parse_recipe_context,
    serialize_recipe_context,
)

__all__ = [
    "BackendError",
    "ContextChunk",
    "GenerationResult",
    "ChunkOutcome",
    "RecommendationResult",
    "BackendConfig",
    "DEFAULT_CHUNK_BUDGET",
    "PROMPT_SUFFIX",
    "retrieve_context",
    "chunk_context",
    "assemble_prompt",
    "split_prompt",
    "parse_answer_list",
    "OracleBackend",
    "RemoteBackend",
    "make_backend",
    "recommend",
]

DEFAULT_CHUNK_BUDGET = 8000
RETRY_ATTEMPTS = 3
CONTEXT_HEADER = "Context:"
PROMPT_SUFFIX = "Answer with recipe names only, one per line."


class BackendError(RuntimeError):
    """Transport or protocol failure while querying a backend."""

    def __init__(self, message: str, chunk_index: int | None = None):
        super().__init__(message)
        self.chunk_index = chunk_index


@dataclass(frozen=True)
class ContextChunk:
    """One context window of serialized recipe lines."""

    index: int
    lines: tuple[str, ...]
    recipe_titles: tuple[str, ...]
    char_budget_used: int

    def __post_init__(self):
        if not self.lines:
            raise ValueError("chunk must hold at least one line")
        if len(self.lines) != len(self.recipe_titles):
            raise ValueError("titles must parallel lines")


@dataclass(frozen=True)
class GenerationResult:
    """One backend completion."""

    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None
    latency_ms: float = 0.0

    def __post_init__(self):
        if self.token_logprobs is not None:
            for token, lp in self.token_logprobs:
                if math.isnan(lp) or math.isinf(lp) or lp > 0:
                    raise ValueError(
                        f"log-probability for {token!r} must be finite and <= 0"
                    )


@dataclass(frozen=True)
class ChunkOutcome:
    """What one chunk produced: raw text, parsed titles, and the parsed
    titles that were not present in the chunk (hallucinated)."""

    index: int
    text: str
    parsed: tuple[str, ...]
    hallucinated: tuple[str, ...]
    failed: bool = False
    latency_ms: float = 0.0
    token_logprobs: tuple[tuple[str, float], ...] | None = None


@dataclass(frozen=True)
class RecommendationResult:
    """Final ordered recommendation plus the per-chunk audit trail."""

    final_titles: tuple[str, ...]
    per_chunk: tuple[ChunkOutcome, ...]
    query: ConstraintQuery

    @property
    def failed_chunks(self) -> tuple[int, ...]:
        return tuple(c.index for c in self.per_chunk if c.failed)


_BACKEND_KINDS = ("oracle", "remote")


@dataclass(frozen=True)
class BackendConfig:
    """Backend selection and sampling parameters."""

    kind: str = "oracle"
    endpoint: str | None = None
    temperature: float = 0.2
    num_beams: int = 1
    max_new_tokens: int = 1024
    parallelism: int = 1
    want_logprobs: bool = False
    auth_token: str | None = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.kind not in _BACKEND_KINDS:
            raise ValueError(f"backend kind must be one of {_BACKEND_KINDS}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "temperature": self.temperature,
            "num_beams": self.num_beams,
            "max_new_tokens": self.max_new_tokens,
            "parallelism": self.parallelism,
            "want_logprobs": self.want_logprobs,
            "timeout_s": self.timeout_s,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "BackendConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# Retrieval and chunking


def retrieve_context(kg: KnowledgeGraph, query: ConstraintQuery) -> list[Recipe]:
    """Recipes carrying the query's tag, in ingestion order.

    Retrieval runs through the tagged-recipes query template so the
    query-language path is exercised end to end.
    """
    text = squeal.instantiate_template("tagged_recipes", {"tag": query.tag})
    table = squeal.run(kg, text)
    found_ids = set(table.column(table.columns[0]))
    return [r for r in kg.recipes_with_tag(query.tag) if r.id in found_ids]


def chunk_context(recipes: list[Recipe], budget_chars: int) -> list[ContextChunk]:
    """Greedy packing of serialized recipe lines under the character budget.

    The budget counts the newline-joined chunk body.  A single line
    longer than the budget gets a chunk of its own.  Concatenating all
    chunks reproduces the input order exactly.
    """
    if budget_chars < 1:
        raise ValueError("budget_chars must be >= 1")
    chunks: list[ContextChunk] = []
    lines: list[str] = []
    titles: list[str] = []
    used = 0
    for recipe in recipes:
        line = serialize_recipe_context(recipe)
        extra = len(line) + (1 if lines else 0)
        if lines and used + extra > budget_chars:
            chunks.append(
                ContextChunk(
                    index=len(chunks),
                    lines=tuple(lines),
                    recipe_titles=tuple(titles),
                    char_budget_used=used,
                )
            )
            lines, titles, used = [], [], 0
            extra = len(line)
        lines.append(line)
        titles.append(recipe.title)
        used += extra
    if lines:
        chunks.append(
            ContextChunk(
                index=len(chunks),
                lines=tuple(lines),
                recipe_titles=tuple(titles),
                char_budget_used=used,
            )
        )
    return chunks


# ---------------------------------------------------------------------------
# Prompt assembly and answer parsing


def assemble_prompt(question: str, chunk: ContextChunk) -> str:
    body = "\n".join(chunk.lines)
    return f"{question}\n{CONTEXT_HEADER}\n{body}\n{PROMPT_SUFFIX}"


def split_prompt(prompt: str) -> tuple[str, list[str]]:
    """Inverse of assemble_prompt: (question, context lines)."""
    marker = f"\n{CONTEXT_HEADER}\n"
    suffix = f"\n{PROMPT_SUFFIX}"
    if marker not in prompt or not prompt.endswith(suffix):
        raise BackendError("prompt not in canonical assembly format")
    question, rest = prompt.split(marker, 1)
    body = rest[: -len(suffix)]
    return question, body.split("\n")


_LIST_MARKER_RE = re.compile(r"^\s*(?:[-*]|\d+\.)\s*")


def parse_answer_list(text: str) -> list[str]:
    """Titles from backend output: one per line, list markers and trailing
    punctuation stripped, normalized, deduplicated, order preserved."""
    titles: dict[str, None] = {}
    for raw_line in text.split("\n"):
        line = _LIST_MARKER_RE.sub("", raw_line).strip()
        line = line.rstrip(".,;:!?")
        normalized = normalize_title(line)
        if normalized:
            titles.setdefault(normalized, None)
    return list(titles)


# ---------------------------------------------------------------------------
# Backends


class OracleBackend:
    """Exact constraint evaluator posing as a model backend.

    Re-parses the question out of the prompt, parses each context line
    back into a recipe, and answers with the titles that satisfy the
    constraints, one per line.  Deterministic.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        templates: list[QuestionTemplate] | None = None,
        known_tags: list[str] | None = None,
    ):
        self._templates = templates if templates is not None else load_templates()
        self._known_tags = list(known_tags) if known_tags is not None else kg.tags()

    def generate(self, prompt: str) -> GenerationResult:
        started = time.perf_counter()
        question, lines = split_prompt(prompt)
        query = parse_question(question, self._known_tags, self._templates)
        titles = []
        for line in lines:
            recipe = parse_recipe_context(line)
            if satisfies(recipe, query):
                titles.append(recipe.title)
        return GenerationResult(
            text="\n".join(titles),
            latency_ms=(time.perf_counter() - started) * 1000,
        )


class RemoteBackend:
    """JSON-over-HTTP completion client.

    Request: {prompt, temperature, max_tokens, num_beams, want_logprobs};
    response: {text, logprobs?}.
    """

    def __init__(self, cfg: BackendConfig, session: "requests.Session | None" = None):
        if cfg.kind != "remote":
            raise ValueError("RemoteBackend needs a remote BackendConfig")
        self._cfg = cfg
        self._session = session if session is not None else requests.Session()

    def generate(self, prompt: str) -> GenerationResult:
        cfg = self._cfg
        headers = {}
        if cfg.auth_token:
            headers["Authorization"] = f"Bearer {cfg.auth_token}"
        payload = {
            "prompt": prompt,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_new_tokens,
            "num_beams": cfg.num_beams,
            "want_logprobs": cfg.want_logprobs,
        }
        started = time.perf_counter()
        try:
            response = self._session.post(
                cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout_s
            )
        except requests.RequestException as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if response.status_code < 200 or response.status_code >= 300:
            raise BackendError(f"backend returned status {response.status_code}")
        try:
            data = response.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise BackendError(f"malformed response body: {exc}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise BackendError("response missing text field")
        logprobs = None
        if data.get("logprobs") is not None:
            raw = data["logprobs"]
            if not isinstance(raw, list):
                raise BackendError("logprobs must be a list of (token, logprob)")
            pairs = []
            for entry in raw:
                if (
                    not isinstance(entry, (list, tuple))
                    or len(entry) != 2
                    or not isinstance(entry[1], (int, float))
                ):
                    raise BackendError("logprobs must be a list of (token, logprob)")
                pairs.append((str(entry[0]), float(entry[1])))
            logprobs = tuple(pairs)
        try:
            return GenerationResult(
                text=data["text"],
                token_logprobs=logprobs,
                latency_ms=(time.perf_counter() - started) * 1000,
            )
        except ValueError as exc:
            raise BackendError(str(exc)) from exc


def make_backend(kg: KnowledgeGraph, cfg: BackendConfig):
    if cfg.kind == "oracle":
        return OracleBackend(kg)
    return RemoteBackend(cfg)


# ---------------------------------------------------------------------------
# Recommendation loop


def _run_chunk(question: str, chunk: ContextChunk, backend) -> tuple[ChunkOutcome, list[str]]:
    """Query one chunk with retries; returns the outcome plus the in-chunk
    titles in corpus form."""
    prompt = assemble_prompt(question, chunk)
    generation = None
    for _ in range(RETRY_ATTEMPTS):
        try:
            generation = backend.generate(prompt)
            break
        except BackendError:
            continue
    if generation is None:
        outcome = ChunkOutcome(
            index=chunk.index, text="", parsed=(), hallucinated=(), failed=True
        )
        return outcome, []
    parsed = parse_answer_list(generation.text)
    by_normalized = {normalize_title(t): t for t in chunk.recipe_titles}
    matched: list[str] = []
    hallucinated: list[str] = []
    for title in parsed:
        if title in by_normalized:
            matched.append(by_normalized[title])
        else:
            hallucinated.append(title)
    outcome = ChunkOutcome(
        index=chunk.index,
        text=generation.text,
        parsed=tuple(parsed),
        hallucinated=tuple(hallucinated),
        latency_ms=generation.latency_ms,
        token_logprobs=generation.token_logprobs,
    )
    return outcome, matched


def recommend(
    kg: KnowledgeGraph,
    question: str,
    backend,
    cfg: BackendConfig | None = None,
    *,
    chunk_budget: int = DEFAULT_CHUNK_BUDGET,
    templates: list[QuestionTemplate] | None = None,
    known_tags: list[str] | None = None,
) -> RecommendationResult:
    """Answer a free-text question against the graph via the backend.

    Parses the question, retrieves the tag's recipes, chunks them,
    queries the backend per chunk (concurrently up to cfg.parallelism),
    and unions in-context answers in chunk order.  Out-of-context titles
    are recorded per chunk and dropped.  A chunk that fails all retries
    is flagged and excluded.
    """
    if templates is None:
        templates = load_templates()
    tags = list(known_tags) if known_tags is not None else kg.tags()
    query = parse_question(question, tags, templates)
    recipes = retrieve_context(kg, query)
    chunks = chunk_context(recipes, chunk_budget)
    if not chunks:
        return RecommendationResult(final_titles=(), per_chunk=(), query=query)

    parallelism = cfg.parallelism if cfg is not None else 1
    results: dict[int, tuple[ChunkOutcome, list[str]]] = {}
    if parallelism > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for outcome, matched in pool.map(
                lambda ch: _run_chunk(question, ch, backend), chunks
            ):
                results[outcome.index] = (outcome, matched)
    else:
        for chunk in chunks:
            outcome, matched = _run_chunk(question, chunk, backend)
            results[outcome.index] = (outcome, matched)

    final: dict[str, None] = {}
    outcomes: list[ChunkOutcome] = []
    for index in sorted(results):
        outcome, matched = results[index]
        outcomes.append(outcome)
        for title in matched:
            final.setdefault(title, None)
    return RecommendationResult(
        final_titles=tuple(final),
        per_chunk=tuple(outcomes),
        query=query,
    )
