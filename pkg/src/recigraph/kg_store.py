"""Recipe knowledge graph: ingestion, indexing, triples, and context lines.

A corpus of recipe records is normalized into immutable :class:`Recipe`
values held by a :class:`KnowledgeGraph`, which exposes tag retrieval,
ingredient vocabulary, per-tag nutrient statistics, a flat triple view,
and a one-line text serialization used as model context.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

__all__ = [
    "CorpusError",
    "NoDataError",
    "NutrientStats",
    "Recipe",
    "KnowledgeGraph",
    "Triple",
    "canonical_ingredient",
    "canonical_nutrient",
    "canonical_tag",
    "format_decimal",
    "graph_from_triples",
    "ingest_corpus",
    "normalize_title",
    "parse_recipe_context",
    "parse_triples",
    "read_triples",
    "serialize_recipe_context",
    "write_triples",
]


class CorpusError(ValueError):
    """A corpus record or file could not be ingested."""


class NoDataError(ValueError):
    """A statistic was requested over an empty sample."""


_WS_RE = re.compile(r"\s+")


def _collapse_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def canonical_ingredient(name: str) -> str:
    """Casefold, trim, and collapse internal whitespace."""
    return _collapse_ws(unicodedata.normalize("NFC", name).casefold())


def canonical_tag(name: str) -> str:
    """Tags share the ingredient canonicalization."""
    return canonical_ingredient(name)


def canonical_nutrient(name: str) -> str:
    """Like ingredients, but spaces become underscores (``fat cals`` -> ``fat_cals``)."""
    return canonical_ingredient(name).replace(" ", "_")


def normalize_title(text: str) -> str:
    """Normalization used whenever titles are compared: NFC, casefold, collapsed whitespace."""
    return _collapse_ws(unicodedata.normalize("NFC", text).casefold())


def format_decimal(value: float) -> str:
    """Shortest decimal string that round-trips through ``float``.

    Integral values drop the trailing ``.0`` so ``90.0`` renders as ``90``.
    """
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"non-finite value: {value!r}")
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


# Characters that would make the one-line context serialization or the
# question surface form ambiguous.  Rejected at ingestion.
_TITLE_FORBIDDEN = ("|", "\n", "\r")
_NAME_FORBIDDEN = ("|", ",", ";", "=", "\n", "\r")


@dataclass(frozen=True)
class Recipe:
    """One normalized recipe; immutable after construction.

    ``ingredients`` and ``tags`` are deduplicated preserving first
    occurrence; ``nutrition`` maps canonical nutrient names to
    non-negative finite floats.
    """

    id: str
    title: str
    ingredients: tuple[str, ...]
    instructions: tuple[str, ...]
    nutrition: dict[str, float]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.id or _collapse_ws(self.id) != self.id:
            raise CorpusError(f"bad recipe id: {self.id!r}")
        if not self.title:
            raise CorpusError(f"recipe {self.id}: empty title")
        for ch in _TITLE_FORBIDDEN:
            if ch in self.title:
                raise CorpusError(f"recipe {self.id}: title contains {ch!r}")
        if not self.ingredients:
            raise CorpusError(f"recipe {self.id}: no ingredients")
        for group, names in (("ingredient", self.ingredients), ("tag", self.tags)):
            for name in names:
                if not name:
                    raise CorpusError(f"recipe {self.id}: empty {group} name")
                for ch in _NAME_FORBIDDEN:
                    if ch in name:
                        raise CorpusError(
                            f"recipe {self.id}: {group} {name!r} contains {ch!r}"
                        )
        if not self.tags:
            raise CorpusError(f"recipe {self.id}: no tags")
        for name, value in self.nutrition.items():
            if not name:
                raise CorpusError(f"recipe {self.id}: empty nutrient name")
            for ch in _NAME_FORBIDDEN:
                if ch in name:
                    raise CorpusError(
                        f"recipe {self.id}: nutrient {name!r} contains {ch!r}"
                    )
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise CorpusError(f"recipe {self.id}: nutrient {name} is not numeric")
            if math.isnan(value) or math.isinf(value) or value < 0:
                raise CorpusError(
                    f"recipe {self.id}: nutrient {name} has bad value {value!r}"
                )

    def has_tag(self, tag: str) -> bool:
        return canonical_tag(tag) in self.tags


@dataclass(frozen=True)
class Triple:
    """One (subject, predicate, object) fact; objects are strings or floats."""

    subject: str
    predicate: str
    object: str | float


@dataclass(frozen=True)
class NutrientStats:
    """Summary of one nutrient over one tag's recipes (population stddev)."""

    nutrient: str
    count: int
    mean: float
    stddev: float
    max: float


def _dedupe(items: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for item in items:
        seen.setdefault(item, None)
    return tuple(seen)


def _recipe_from_record(record: dict, where: str) -> Recipe:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: record is not an object")
    for key in ("id", "title", "ingredients", "tags"):
        if key not in record:
            raise CorpusError(f"{where}: missing field {key!r}")
    rid = record["id"]
    if not isinstance(rid, str):
        raise CorpusError(f"{where}: id must be a string")
    title = record["title"]
    if not isinstance(title, str):
        raise CorpusError(f"{where}: title must be a string")
    raw_ingredients = record["ingredients"]
    raw_tags = record["tags"]
    raw_instructions = record.get("instructions", [])
    raw_nutrition = record.get("nutrition", {})
    if not isinstance(raw_ingredients, list) or not all(
        isinstance(x, str) for x in raw_ingredients
    ):
        raise CorpusError(f"{where}: ingredients must be a list of strings")
    if not isinstance(raw_tags, list) or not all(isinstance(x, str) for x in raw_tags):
        raise CorpusError(f"{where}: tags must be a list of strings")
    if isinstance(raw_instructions, str):
        raw_instructions = [raw_instructions]
    if not isinstance(raw_instructions, list) or not all(
        isinstance(x, str) for x in raw_instructions
    ):
        raise CorpusError(f"{where}: instructions must be a list of strings")
    if not isinstance(raw_nutrition, dict):
        raise CorpusError(f"{where}: nutrition must be an object")
    nutrition: dict[str, float] = {}
    for name, value in raw_nutrition.items():
        cname = canonical_nutrient(str(name))
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise CorpusError(f"{where}: nutrient {cname!r} is not numeric")
        nutrition[cname] = float(value)
    steps = tuple(s for s in (_collapse_ws(x) for x in raw_instructions) if s)
    return Recipe(
        id=rid.strip(),
        title=_collapse_ws(unicodedata.normalize("NFC", title)),
        ingredients=_dedupe(canonical_ingredient(x) for x in raw_ingredients),
        instructions=steps,
        nutrition=nutrition,
        tags=_dedupe(canonical_tag(x) for x in raw_tags),
    )


class KnowledgeGraph:
    """Immutable recipe store with tag and ingredient indexes.

    Built through :func:`ingest_corpus`, :func:`graph_from_triples`, or
    :meth:`from_recipes`; treat instances as read-only afterwards (safe
    for concurrent readers).
    """

    def __init__(self, recipes: Iterable[Recipe]):
        self.recipes: dict[str, Recipe] = {}
        self.tag_index: dict[str, list[str]] = {}
        self.ingredient_index: dict[str, list[str]] = {}
        for recipe in recipes:
            if recipe.id in self.recipes:
                raise CorpusError(f"duplicate recipe id: {recipe.id}")
            self.recipes[recipe.id] = recipe
            for tag in recipe.tags:
                self.tag_index.setdefault(tag, []).append(recipe.id)
            for ing in recipe.ingredients:
                self.ingredient_index.setdefault(ing, []).append(recipe.id)
        self._triples: tuple[Triple, ...] | None = None

    @classmethod
    def from_recipes(cls, recipes: Iterable[Recipe]) -> "KnowledgeGraph":
        return cls(recipes)

    def __len__(self) -> int:
        return len(self.recipes)

    def __contains__(self, recipe_id: str) -> bool:
        return recipe_id in self.recipes

    def tags(self) -> list[str]:
        """All tags, lexicographically sorted."""
        return sorted(self.tag_index)

    def recipes_with_tag(self, tag: str) -> list[Recipe]:
        """Recipes carrying the tag, in ingestion order; unknown tag gives []."""
        return [self.recipes[rid] for rid in self.tag_index.get(canonical_tag(tag), [])]

    def ingredient_vocabulary(self, tag: str | None = None) -> list[str]:
        """Distinct ingredient names, lexicographically sorted.

        With ``tag``, restricted to recipes carrying that tag.
        """
        if tag is None:
            return sorted(self.ingredient_index)
        vocab: set[str] = set()
        for recipe in self.recipes_with_tag(tag):
            vocab.update(recipe.ingredients)
        return sorted(vocab)

    def nutrient_names(self) -> list[str]:
        names: set[str] = set()
        for recipe in self.recipes.values():
            names.update(recipe.nutrition)
        return sorted(names)

    def nutrient_stats(self, tag: str, nutrient: str) -> NutrientStats:
        """Count, mean, population stddev, and max of one nutrient over a tag's recipes.

        Recipes lacking the nutrient are ignored; an empty sample raises
        :class:`NoDataError`.
        """
        cname = canonical_nutrient(nutrient)
        values = [
            r.nutrition[cname]
            for r in self.recipes_with_tag(tag)
            if cname in r.nutrition
        ]
        if not values:
            raise NoDataError(f"no {cname!r} values among recipes tagged {tag!r}")
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        return NutrientStats(
            nutrient=cname,
            count=len(values),
            mean=mean,
            stddev=math.sqrt(var),
            max=max(values),
        )

    def to_triples(self) -> tuple[Triple, ...]:
        """Flat fact view: name, tagged, hasIngredient, and one edge per nutrient.

        Instructions are not part of the triple view; see
        :func:`graph_from_triples` for the round-trip contract.
        """
        if self._triples is None:
            out: list[Triple] = []
            for recipe in self.recipes.values():
                out.append(Triple(recipe.id, "name", recipe.title))
                for tag in recipe.tags:
                    out.append(Triple(recipe.id, "tagged", tag))
                for ing in recipe.ingredients:
                    out.append(Triple(recipe.id, "hasIngredient", ing))
                for name in sorted(recipe.nutrition):
                    out.append(Triple(recipe.id, name, recipe.nutrition[name]))
            self._triples = tuple(out)
        return self._triples


def ingest_corpus(
    source: str | Path | IO[str] | Iterable[dict],
    fmt: str = "jsonl",
    diagnostics: list[str] | None = None,
) -> KnowledgeGraph:
    """Load a corpus into a :class:`KnowledgeGraph`.

    ``source`` is a path, an open text stream, or an iterable of already
    decoded record dicts.  ``fmt`` is ``jsonl`` (one object per line) or
    ``json`` (a single array).  When ``diagnostics`` is given, malformed
    records are skipped and one message per problem is appended to it;
    otherwise the first problem raises :class:`CorpusError`.  An empty
    result always raises.
    """
    if fmt not in ("jsonl", "json"):
        raise CorpusError(f"unknown corpus format: {fmt!r}")

    def fail(msg: str) -> None:
        if diagnostics is None:
            raise CorpusError(msg)
        diagnostics.append(msg)

    records: list[tuple[str, dict]] = []
    if isinstance(source, (str, Path)):
        stream: IO[str] | None = open(source, "r", encoding="utf-8")
    elif hasattr(source, "read"):
        stream = source  # type: ignore[assignment]
    else:
        stream = None
        for i, rec in enumerate(source):
            records.append((f"record {i}", rec))
    if stream is not None:
        try:
            if fmt == "json":
                try:
                    data = json.load(stream)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"corpus is not valid JSON: {exc}") from exc
                if not isinstance(data, list):
                    raise CorpusError("json corpus must be an array of records")
                records = [(f"record {i}", rec) for i, rec in enumerate(data)]
            else:
                for lineno, line in enumerate(stream, start=1):
                    if not line.strip():
                        continue
                    try:
                        records.append((f"line {lineno}", json.loads(line)))
                    except json.JSONDecodeError as exc:
                        fail(f"line {lineno}: invalid JSON ({exc.msg})")
        finally:
            if isinstance(source, (str, Path)):
                stream.close()

    recipes: list[Recipe] = []
    seen_ids: set[str] = set()
    for where, record in records:
        try:
            recipe = _recipe_from_record(record, where)
        except CorpusError as exc:
            fail(str(exc))
            continue
        if recipe.id in seen_ids:
            fail(f"{where}: duplicate recipe id {recipe.id!r}")
            continue
        seen_ids.add(recipe.id)
        recipes.append(recipe)
    if not recipes:
        raise CorpusError("corpus contains no usable recipes")
    return KnowledgeGraph(recipes)


# ---------------------------------------------------------------------------
# Context-line serialization


def serialize_recipe_context(recipe: Recipe) -> str:
    """One-line form fed to generation backends.

    ``name: T | ingredients: a, b | nutrition: k=v; ... | tags: x, y``
    with nutrients in lexicographic order and shortest round-trip
    decimals.  Lossless for everything except instructions.
    """
    nutrition = "; ".join(
        f"{name}={format_decimal(recipe.nutrition[name])}"
        for name in sorted(recipe.nutrition)
    )
    return (
        f"name: {recipe.title}"
        f" | ingredients: {', '.join(recipe.ingredients)}"
        f" | nutrition: {nutrition}"
        f" | tags: {', '.join(recipe.tags)}"
    )


def parse_recipe_context(line: str, recipe_id: str = "ctx") -> Recipe:
    """Inverse of :func:`serialize_recipe_context` (instructions come back empty).

    Raises :class:`CorpusError` on any malformed segment.
    """
    parts = line.split(" | ")
    if len(parts) != 4:
        raise CorpusError(f"context line must have 4 segments, got {len(parts)}")
    expected = ("name: ", "ingredients: ", "nutrition: ", "tags: ")
    values: list[str] = []
    for part, prefix in zip(parts, expected):
        if not part.startswith(prefix):
            raise CorpusError(f"context segment {part!r} must start with {prefix!r}")
        values.append(part[len(prefix) :])
    title, ing_text, nut_text, tag_text = values
    nutrition: dict[str, float] = {}
    if nut_text:
        for chunk in nut_text.split("; "):
            name, sep, num = chunk.partition("=")
            if not sep or not name or not num:
                raise CorpusError(f"bad nutrition entry: {chunk!r}")
            try:
                nutrition[name] = float(num)
            except ValueError as exc:
                raise CorpusError(f"bad nutrition value: {chunk!r}") from exc
    return Recipe(
        id=recipe_id,
        title=title,
        ingredients=tuple(x for x in ing_text.split(", ") if x),
        instructions=(),
        nutrition=nutrition,
        tags=tuple(x for x in tag_text.split(", ") if x),
    )


# ---------------------------------------------------------------------------
# Triple text round-trip


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _unquote(text: str, where: str) -> str:
    if len(text) < 2 or not text.startswith('"') or not text.endswith('"'):
        raise CorpusError(f"{where}: object is not a quoted literal: {text!r}")
    body = text[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body) or body[i + 1] not in ('"', "\\"):
                raise CorpusError(f"{where}: bad escape in literal")
            out.append(body[i + 1])
            i += 2
        elif ch == '"':
            raise CorpusError(f"{where}: unescaped quote in literal")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def write_triples(graph: KnowledgeGraph, path: str | Path) -> int:
    """Write the triple view, one tab-separated fact per line; returns the count.

    String objects are quoted with backslash escapes; numeric objects are
    bare shortest round-trip decimals.
    """
    triples = graph.to_triples()
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            if isinstance(t.object, str):
                obj = _quote(t.object)
            else:
                obj = format_decimal(t.object)
            fh.write(f"{t.subject}\t{t.predicate}\t{obj}\n")
    return len(triples)


def read_triples(path: str | Path) -> list[Triple]:
    out: list[Triple] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusError(f"line {lineno}: expected 3 tab-separated fields")
            subj, pred, obj_text = fields
            obj: str | float
            if obj_text.startswith('"'):
                obj = _unquote(obj_text, f"line {lineno}")
            else:
                try:
                    obj = float(obj_text)
                except ValueError as exc:
                    raise CorpusError(
                        f"line {lineno}: bad numeric object {obj_text!r}"
                    ) from exc
            out.append(Triple(subj, pred, obj))
    return out


def parse_triples(triples: Iterable[Triple]) -> KnowledgeGraph:
    """Rebuild a graph from its triple view.

    Instructions are not represented in triples, so
    ``parse_triples(g.to_triples())`` equals ``g`` up to instructions;
    their triple views are identical.
    """
    by_subject: dict[str, dict[str, list[Triple]]] = {}
    order: list[str] = []
    for t in triples:
        if t.subject not in by_subject:
            order.append(t.subject)
            by_subject[t.subject] = {}
        by_subject[t.subject].setdefault(t.predicate, []).append(t)
    recipes: list[Recipe] = []
    for rid in order:
        preds = by_subject[rid]
        names = preds.pop("name", [])
        if len(names) != 1 or not isinstance(names[0].object, str):
            raise CorpusError(f"recipe {rid}: expected exactly one name triple")
        tags = [t.object for t in preds.pop("tagged", [])]
        ings = [t.object for t in preds.pop("hasIngredient", [])]
        if not all(isinstance(x, str) for x in tags + ings):
            raise CorpusError(f"recipe {rid}: tag/ingredient objects must be strings")
        nutrition: dict[str, float] = {}
        for pred, ts in preds.items():
            if len(ts) != 1 or not isinstance(ts[0].object, float):
                raise CorpusError(f"recipe {rid}: bad nutrient triples for {pred!r}")
            nutrition[pred] = ts[0].object
        recipes.append(
            Recipe(
                id=rid,
                title=names[0].object,
                ingredients=tuple(ings),  # type: ignore[arg-type]
                instructions=(),
                nutrition=nutrition,
                tags=tuple(tags),  # type: ignore[arg-type]
            )
        )
    return KnowledgeGraph(recipes)


def graph_from_triples(path: str | Path) -> KnowledgeGraph:
    """Read a triple file written by :func:`write_triples`."""
    return parse_triples(read_triples(path))
