"""Structured dietary queries and their natural-language surface forms.

A :class:`ConstraintQuery` bundles a tag, ingredient preferences, and
numeric nutrient constraints.  Question templates render a query to one
of several English phrasings and parse such questions back; rendering
then parsing recovers the original query exactly.

Template text uses ``{tag}``, ``{ingredients}``, ``{not_have_ingredients}``
and ``{constraints}`` placeholders.  The three list placeholders sit
inside ``[[...]]`` optional clauses, dropped whole when the list is
empty, so every valid query renders to a grammatical question.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .kg_store import (
    KnowledgeGraph,
    Recipe,
    canonical_ingredient,
    canonical_nutrient,
    canonical_tag,
    format_decimal,
)

__all__ = [
    "LESS_THAN",
    "AT_LEAST",
    "RANGE",
    "FILTER_KINDS",
    "ConstraintError",
    "QuestionParseError",
    "NutrientConstraint",
    "ConstraintQuery",
    "QuestionTemplate",
    "load_templates",
    "render_question",
    "parse_question",
    "satisfies",
    "ground_truth",
]

LESS_THAN = "less_than"
AT_LEAST = "at_least"
RANGE = "range"
FILTER_KINDS = (LESS_THAN, AT_LEAST, RANGE)

PLACEHOLDERS = ("{tag}", "{ingredients}", "{not_have_ingredients}", "{constraints}")


class ConstraintError(ValueError):
    """Invalid constraint, query, or template definition."""


class QuestionParseError(ValueError):
    """Question text could not be parsed back to a query.

    ``span`` is a (start, end) character range into the question for the
    offending fragment when one can be pinpointed.
    """

    def __init__(
        self,
        message: str,
        span: tuple[int, int] | None = None,
        unknown_tag: str | None = None,
    ):
        if span is not None:
            message = f"{message} (characters {span[0]}..{span[1]})"
        super().__init__(message)
        self.span = span
        self.unknown_tag = unknown_tag


@dataclass(frozen=True)
class NutrientConstraint:
    """One numeric condition on a nutrient.

    ``less_than`` and ``at_least`` carry ``value`` plus an ``inclusive``
    flag; ``range`` carries ``lo < hi`` and is inclusive at both ends.
    """

    nutrient: str
    kind: str
    value: float | None = None
    lo: float | None = None
    hi: float | None = None
    inclusive: bool = True

    def __post_init__(self) -> None:
        if not self.nutrient or canonical_nutrient(self.nutrient) != self.nutrient:
            raise ConstraintError(f"nutrient must be canonical, got {self.nutrient!r}")
        if self.kind not in FILTER_KINDS:
            raise ConstraintError(f"unknown filter kind: {self.kind!r}")
        if self.kind == RANGE:
            if self.value is not None:
                raise ConstraintError("range constraint must not set 'value'")
            if self.lo is None or self.hi is None:
                raise ConstraintError("range constraint needs 'lo' and 'hi'")
            if not self.inclusive:
                raise ConstraintError("range constraints are always inclusive")
            if not (0 <= self.lo < self.hi):
                raise ConstraintError(
                    f"range needs 0 <= lo < hi, got ({self.lo}, {self.hi})"
                )
        else:
            if self.lo is not None or self.hi is not None:
                raise ConstraintError(f"{self.kind} constraint must not set lo/hi")
            if self.value is None or self.value < 0:
                raise ConstraintError(f"{self.kind} needs a value >= 0")

    @property
    def display_nutrient(self) -> str:
        return self.nutrient.replace("_", " ")

    def holds(self, value: float) -> bool:
        if self.kind == LESS_THAN:
            return value <= self.value if self.inclusive else value < self.value
        if self.kind == AT_LEAST:
            return value >= self.value if self.inclusive else value > self.value
        return self.lo <= value <= self.hi

    def to_filters(self) -> list[tuple[str, str, float]]:
        """(nutrient, op, value) comparisons equivalent to this constraint."""
        if self.kind == LESS_THAN:
            return [(self.nutrient, "<=" if self.inclusive else "<", self.value)]
        if self.kind == AT_LEAST:
            return [(self.nutrient, ">=" if self.inclusive else ">", self.value)]
        return [(self.nutrient, ">=", self.lo), (self.nutrient, "<=", self.hi)]

    def to_json_dict(self) -> dict:
        out: dict = {"nutrient": self.nutrient, "kind": self.kind}
        if self.kind == RANGE:
            out["lo"] = self.lo
            out["hi"] = self.hi
        else:
            out["value"] = self.value
            out["inclusive"] = self.inclusive
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "NutrientConstraint":
        kind = data.get("kind")
        if kind == RANGE:
            return cls(
                nutrient=data["nutrient"],
                kind=RANGE,
                lo=float(data["lo"]),
                hi=float(data["hi"]),
            )
        return cls(
            nutrient=data["nutrient"],
            kind=str(kind),
            value=float(data["value"]),
            inclusive=bool(data.get("inclusive", True)),
        )


@dataclass(frozen=True)
class ConstraintQuery:
    """Tag + ingredient preferences + nutrient constraints.

    Ingredient lists are canonical, duplicate-free, and disjoint; any of
    the three lists may be empty.
    """

    tag: str
    includes: tuple[str, ...] = ()
    excludes: tuple[str, ...] = ()
    constraints: tuple[NutrientConstraint, ...] = ()

    def __post_init__(self) -> None:
        if not self.tag or canonical_tag(self.tag) != self.tag:
            raise ConstraintError(f"tag must be canonical and non-empty: {self.tag!r}")
        for group, names in (("includes", self.includes), ("excludes", self.excludes)):
            for name in names:
                if not name or canonical_ingredient(name) != name:
                    raise ConstraintError(f"{group} entry not canonical: {name!r}")
            if len(set(names)) != len(names):
                raise ConstraintError(f"duplicate names in {group}")
        if set(self.includes) & set(self.excludes):
            raise ConstraintError("includes and excludes overlap")

    def to_json_dict(self) -> dict:
        return {
            "tag": self.tag,
            "includes": list(self.includes),
            "excludes": list(self.excludes),
            "constraints": [c.to_json_dict() for c in self.constraints],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ConstraintQuery":
        return cls(
            tag=data["tag"],
            includes=tuple(data.get("includes", ())),
            excludes=tuple(data.get("excludes", ())),
            constraints=tuple(
                NutrientConstraint.from_json_dict(c)
                for c in data.get("constraints", ())
            ),
        )


# ---------------------------------------------------------------------------
# Templates

PhraseTable = dict[str, tuple[tuple[str, bool], ...]]

DEFAULT_PHRASING: PhraseTable = {
    LESS_THAN: (("no more than", True), ("less than", False), ("not above", True)),
    AT_LEAST: (("at least", True), ("more than", False), ("not less than", True)),
    RANGE: (("within range", True),),
}

_CLAUSE_RE = re.compile(r"\[\[(.*?)\]\]", re.DOTALL)
_LIST_PLACEHOLDER_TO_FIELD = {
    "{ingredients}": "includes",
    "{not_have_ingredients}": "excludes",
    "{constraints}": "constraints",
}


@dataclass(frozen=True)
class QuestionTemplate:
    """One question phrasing.

    ``text`` is the marked template string described in the module
    docstring; ``phrasing_map`` maps each filter kind to its surface
    phrases as (phrase, inclusive) pairs, first pair per (kind,
    inclusivity) used when rendering.
    """

    id: str
    text: str
    phrasing_map: PhraseTable = field(
        default_factory=lambda: dict(DEFAULT_PHRASING)
    )

    def __post_init__(self) -> None:
        if not self.id:
            raise ConstraintError("template id must be non-empty")
        for ph in PLACEHOLDERS:
            if self.text.count(ph) != 1:
                raise ConstraintError(
                    f"template {self.id!r} must use {ph} exactly once"
                )
        clauses = _CLAUSE_RE.findall(self.text)
        if len(clauses) != 3:
            raise ConstraintError(
                f"template {self.id!r} needs 3 [[...]] clauses, got {len(clauses)}"
            )
        seen: set[str] = set()
        for clause in clauses:
            inside = [ph for ph in _LIST_PLACEHOLDER_TO_FIELD if ph in clause]
            if len(inside) != 1:
                raise ConstraintError(
                    f"template {self.id!r}: each clause needs exactly one list placeholder"
                )
            if "{tag}" in clause:
                raise ConstraintError(
                    f"template {self.id!r}: {{tag}} may not sit inside a clause"
                )
            seen.add(inside[0])
        if seen != set(_LIST_PLACEHOLDER_TO_FIELD):
            raise ConstraintError(
                f"template {self.id!r}: every list placeholder needs its own clause"
            )
        for kind in FILTER_KINDS:
            if kind not in self.phrasing_map or not self.phrasing_map[kind]:
                raise ConstraintError(
                    f"template {self.id!r}: phrasing_map missing kind {kind!r}"
                )

    def phrase_for(self, kind: str, inclusive: bool) -> str:
        for phrase, inc in self.phrasing_map[kind]:
            if inc == inclusive:
                return phrase
        raise ConstraintError(
            f"template {self.id!r} has no {'inclusive' if inclusive else 'strict'}"
            f" phrase for {kind!r}"
        )

    def phrase_meaning(self, phrase: str) -> tuple[str, bool]:
        for kind, pairs in self.phrasing_map.items():
            for p, inc in pairs:
                if p == phrase:
                    return kind, inc
        raise ConstraintError(f"template {self.id!r} does not know phrase {phrase!r}")

    def all_phrases(self) -> list[str]:
        return [p for pairs in self.phrasing_map.values() for p, _ in pairs]


def _segments(text: str) -> list[tuple[str, str]]:
    """Split marked template text into ('lit', s) and ('clause', s) parts."""
    out: list[tuple[str, str]] = []
    pos = 0
    for m in _CLAUSE_RE.finditer(text):
        if m.start() > pos:
            out.append(("lit", text[pos : m.start()]))
        out.append(("clause", m.group(1)))
        pos = m.end()
    if pos < len(text):
        out.append(("lit", text[pos:]))
    return out


def _render_constraint(c: NutrientConstraint, template: QuestionTemplate) -> str:
    phrase = template.phrase_for(c.kind, c.inclusive)
    if c.kind == RANGE:
        return (
            f"{c.display_nutrient} {phrase}"
            f" ({format_decimal(c.lo)}, {format_decimal(c.hi)})"
        )
    return f"{c.display_nutrient} {phrase} {format_decimal(c.value)}"


def render_question(query: ConstraintQuery, template: QuestionTemplate) -> str:
    """Deterministic English question for the query under the template."""
    values = {
        "{ingredients}": ", ".join(query.includes),
        "{not_have_ingredients}": ", ".join(query.excludes),
        "{constraints}": ", ".join(
            _render_constraint(c, template) for c in query.constraints
        ),
    }
    out: list[str] = []
    for kind, seg in _segments(template.text):
        if kind == "lit":
            out.append(seg.replace("{tag}", query.tag))
        else:
            ph = next(p for p in _LIST_PLACEHOLDER_TO_FIELD if p in seg)
            if values[ph]:
                out.append(seg.replace(ph, values[ph]))
    return "".join(out)


# ---------------------------------------------------------------------------
# Parsing

_GROUP_FOR = {
    "{tag}": "tag",
    "{ingredients}": "ingredients",
    "{not_have_ingredients}": "excludes",
    "{constraints}": "constraints",
}


def _skeleton_regexes(template: QuestionTemplate) -> list[re.Pattern[str]]:
    """One compiled regex per subset of present clauses, fullest first."""
    segs = _segments(template.text)
    clause_idx = [i for i, (k, _) in enumerate(segs) if k == "clause"]
    regexes: list[re.Pattern[str]] = []
    # Iterate subsets from all-present (0 dropped) to all-absent so the
    # most specific skeleton wins when several would match.
    for mask in range(8):
        dropped = {clause_idx[j] for j in range(3) if mask & (1 << j)}
        parts: list[str] = ["^"]
        for i, (kind, seg) in enumerate(segs):
            if kind == "clause" and i in dropped:
                continue
            chunk = seg
            pieces: list[str] = []
            pos = 0
            for ph, group in _GROUP_FOR.items():
                j = chunk.find(ph)
                if j >= 0:
                    pieces.append(re.escape(chunk[:j]))
                    pieces.append(f"(?P<{group}>.+?)")
                    chunk = chunk[j + len(ph) :]
            pieces.append(re.escape(chunk))
            parts.append("".join(pieces))
        parts.append("$")
        regexes.append(re.compile("".join(parts)))
    return regexes


_SKELETON_CACHE: dict[tuple[str, str], list[re.Pattern[str]]] = {}


def _skeletons_cached(template: QuestionTemplate) -> list[re.Pattern[str]]:
    key = (template.id, template.text)
    if key not in _SKELETON_CACHE:
        _SKELETON_CACHE[key] = _skeleton_regexes(template)
    return _SKELETON_CACHE[key]


def _split_outside_parens(text: str) -> list[tuple[str, int]]:
    """Split on ', ' at paren depth 0; returns (piece, offset) pairs."""
    pieces: list[tuple[str, int]] = []
    depth = 0
    start = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif ch == "," and depth == 0 and text[i : i + 2] == ", ":
            pieces.append((text[start:i], start))
            i += 2
            start = i
            continue
        i += 1
    pieces.append((text[start:], start))
    return pieces


_RANGE_VALUE_RE = re.compile(r"\((?P<lo>[^,()]+), (?P<hi>[^,()]+)\)\Z")


def _parse_float(text: str, span: tuple[int, int]) -> float:
    try:
        value = float(text)
    except ValueError:
        raise QuestionParseError(f"unparseable numeric value {text!r}", span=span)
    return value


def _parse_constraint_item(
    item: str, base: int, template: QuestionTemplate
) -> NutrientConstraint:
    phrases = sorted(template.all_phrases(), key=len, reverse=True)
    alt = "|".join(re.escape(p) for p in phrases)
    m = re.match(rf"^(?P<nutrient>.+?) (?P<phrase>{alt}) (?P<rest>.+)$", item)
    if not m:
        raise QuestionParseError(
            f"cannot find a comparison phrase in {item!r}",
            span=(base, base + len(item)),
        )
    kind, inclusive = template.phrase_meaning(m.group("phrase"))
    nutrient = canonical_nutrient(m.group("nutrient"))
    rest = m.group("rest")
    rest_base = base + m.start("rest")
    if kind == RANGE:
        rm = _RANGE_VALUE_RE.match(rest)
        if not rm:
            raise QuestionParseError(
                f"range bounds must look like (lo, hi), got {rest!r}",
                span=(rest_base, rest_base + len(rest)),
            )
        lo = _parse_float(
            rm.group("lo"), (rest_base + rm.start("lo"), rest_base + rm.end("lo"))
        )
        hi = _parse_float(
            rm.group("hi"), (rest_base + rm.start("hi"), rest_base + rm.end("hi"))
        )
        return NutrientConstraint(nutrient=nutrient, kind=RANGE, lo=lo, hi=hi)
    value = _parse_float(rest, (rest_base, rest_base + len(rest)))
    return NutrientConstraint(
        nutrient=nutrient, kind=kind, value=value, inclusive=inclusive
    )


def _try_parse(
    question: str,
    m: re.Match[str],
    template: QuestionTemplate,
    known: set[str],
) -> ConstraintQuery:
    groups = m.groupdict()
    raw_tag = groups["tag"]
    tag = canonical_tag(raw_tag)
    if tag not in known:
        raise QuestionParseError(
            f"unknown tag {raw_tag!r}",
            span=(m.start("tag"), m.end("tag")),
            unknown_tag=tag,
        )

    def names(group: str) -> tuple[str, ...]:
        raw = groups.get(group)
        if raw is None:
            return ()
        out: list[str] = []
        for piece, off in _split_outside_parens(raw):
            name = canonical_ingredient(piece)
            if not name:
                raise QuestionParseError(
                    "empty ingredient name",
                    span=(m.start(group) + off, m.start(group) + off + len(piece)),
                )
            out.append(name)
        return tuple(out)

    constraints: tuple[NutrientConstraint, ...] = ()
    raw_con = groups.get("constraints")
    if raw_con is not None:
        base = m.start("constraints")
        constraints = tuple(
            _parse_constraint_item(piece, base + off, template)
            for piece, off in _split_outside_parens(raw_con)
        )
    try:
        return ConstraintQuery(
            tag=tag,
            includes=names("ingredients"),
            excludes=names("excludes"),
            constraints=constraints,
        )
    except ConstraintError as exc:
        raise QuestionParseError(str(exc)) from exc


def parse_question(
    question: str,
    known_tags: "set[str] | list[str] | tuple[str, ...]",
    templates: list[QuestionTemplate],
) -> ConstraintQuery:
    """Parse a rendered question back into its :class:`ConstraintQuery`.

    Tries every template's skeletons, fullest first, and returns the
    first interpretation that fully validates.  Raises
    :class:`QuestionParseError` when nothing matches, the tag is not in
    ``known_tags``, or a numeric value does not parse.
    """
    if not templates:
        raise QuestionParseError("no templates given")
    known = {canonical_tag(t) for t in known_tags}
    best_error: QuestionParseError | None = None
    for template in templates:
        for regex in _skeletons_cached(template):
            m = regex.match(question)
            if not m:
                continue
            try:
                return _try_parse(question, m, template, known)
            except QuestionParseError as exc:
                if best_error is None:
                    best_error = exc
    if best_error is not None:
        raise best_error
    raise QuestionParseError("no template matches the question")


# ---------------------------------------------------------------------------
# Semantics

def satisfies(recipe: Recipe, query: ConstraintQuery) -> bool:
    """True when the recipe carries the tag, the ingredient preferences
    hold, and every nutrient constraint holds (missing nutrient fails)."""
    if query.tag not in recipe.tags:
        return False
    have = set(recipe.ingredients)
    if not set(query.includes) <= have:
        return False
    if set(query.excludes) & have:
        return False
    for c in query.constraints:
        value = recipe.nutrition.get(c.nutrient)
        if value is None or not c.holds(value):
            return False
    return True


def ground_truth(graph: KnowledgeGraph, query: ConstraintQuery) -> list[Recipe]:
    """All satisfying recipes, in ingestion order.

    With no constraints and empty includes/excludes this is exactly the
    tag's recipe list.
    """
    return [r for r in graph.recipes_with_tag(query.tag) if satisfies(r, query)]


# ---------------------------------------------------------------------------
# Catalog loading

def _template_from_dict(data: dict, default_phrasing: PhraseTable) -> QuestionTemplate:
    phrasing = default_phrasing
    if "phrasing" in data:
        phrasing = {
            kind: tuple((str(p), bool(inc)) for p, inc in pairs)
            for kind, pairs in data["phrasing"].items()
        }
    return QuestionTemplate(id=data["id"], text=data["text"], phrasing_map=phrasing)


def load_templates(path: str | Path | None = None) -> list[QuestionTemplate]:
    """Load a template catalog; with no path, the bundled default catalog."""
    if path is None:
        text = (
            resources.files("recigraph").joinpath("data/templates.json").read_text()
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    default_phrasing: PhraseTable = DEFAULT_PHRASING
    if "phrasing" in data:
        default_phrasing = {
            kind: tuple((str(p), bool(inc)) for p, inc in pairs)
            for kind, pairs in data["phrasing"].items()
        }
    templates = [
        _template_from_dict(t, default_phrasing) for t in data.get("templates", [])
    ]
    if not templates:
        raise ConstraintError("template catalog is empty")
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise ConstraintError("duplicate template ids in catalog")
    return templates
