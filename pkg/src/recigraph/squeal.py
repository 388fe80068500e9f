"""Small SELECT-only graph query language over the triple view.

Supports exactly: ``SELECT ?vars WHERE { patterns . FILTER(...) } LIMIT n``
with numeric comparison filters.  Three named templates cover the query
shapes the rest of the package needs; free-form queries in the same
grammar also parse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .kg_store import KnowledgeGraph, Triple

__all__ = [
    "QueryError",
    "TemplateError",
    "Var",
    "Ident",
    "Str",
    "Num",
    "Pattern",
    "Filter",
    "QueryAst",
    "ResultTable",
    "TEMPLATE_IDS",
    "instantiate_template",
    "parse_query",
    "execute",
    "run",
    "constraint_filters",
]

COMPARE_OPS = ("<=", ">=", "<", ">")


class QueryError(ValueError):
    """Query text failed to parse or validate.

    ``offset`` is the character position the problem was noticed at;
    ``expected`` names what would have been legal there.
    """

    def __init__(self, message: str, offset: int | None = None, expected: str = ""):
        detail = message
        if offset is not None:
            detail += f" (at offset {offset})"
        if expected:
            detail += f"; expected {expected}"
        super().__init__(detail)
        self.offset = offset
        self.expected = expected


class TemplateError(ValueError):
    """Unknown template id or bad/missing template arguments."""


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Ident:
    value: str


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Num:
    value: float


Term = Var | Ident | Str | Num


@dataclass(frozen=True)
class Pattern:
    subject: Term
    predicate: Term
    object: Term


@dataclass(frozen=True)
class Filter:
    var: str
    op: str
    value: float

    def holds(self, value: float) -> bool:
        if self.op == "<":
            return value < self.value
        if self.op == "<=":
            return value <= self.value
        if self.op == ">":
            return value > self.value
        return value >= self.value


@dataclass(frozen=True)
class QueryAst:
    select_vars: tuple[str, ...]
    patterns: tuple[Pattern, ...]
    filters: tuple[Filter, ...] = ()
    limit: int | None = None

    def __post_init__(self) -> None:
        if not self.select_vars:
            raise QueryError("SELECT needs at least one variable")
        if not self.patterns:
            raise QueryError("WHERE needs at least one pattern")
        bound: set[str] = set()
        for p in self.patterns:
            for term in (p.subject, p.predicate, p.object):
                if isinstance(term, Var):
                    bound.add(term.name)
        for v in self.select_vars:
            if v not in bound:
                raise QueryError(f"selected variable ?{v} does not appear in WHERE")
        for f in self.filters:
            if f.var not in bound:
                raise QueryError(f"filtered variable ?{f.var} does not appear in WHERE")
            if f.op not in COMPARE_OPS:
                raise QueryError(f"unsupported comparison operator {f.op!r}")
        if self.limit is not None and self.limit < 0:
            raise QueryError("LIMIT must be non-negative")


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str | float, ...], ...]

    def column(self, name: str) -> list[str | float]:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def to_records(self) -> list[dict[str, str | float]]:
        return [dict(zip(self.columns, row)) for row in self.rows]


# ---------------------------------------------------------------------------
# Templates

TEMPLATE_IDS = ("tagged_recipes", "recipe_detail", "tagged_with_nutrient_filter")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _escape_literal(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _require(args: dict, key: str, template_id: str) -> object:
    if key not in args:
        raise TemplateError(f"template {template_id!r} needs argument {key!r}")
    return args[key]


def _ident_arg(args: dict, key: str, template_id: str) -> str:
    value = _require(args, key, template_id)
    if not isinstance(value, str) or not _IDENT_RE.match(value):
        raise TemplateError(
            f"template {template_id!r} argument {key!r} must be an identifier, got {value!r}"
        )
    return value


def instantiate_template(template_id: str, args: dict) -> str:
    """Render one of the named query templates to query text."""
    if template_id == "tagged_recipes":
        tag = _require(args, "tag", template_id)
        if not isinstance(tag, str) or not tag:
            raise TemplateError("argument 'tag' must be a non-empty string")
        return (
            f'SELECT ?r ?name WHERE {{ ?r tagged "{_escape_literal(tag)}" . '
            "?r name ?name . }"
        )
    if template_id == "recipe_detail":
        rid = _ident_arg(args, "id", template_id)
        return f"SELECT ?p ?o WHERE {{ {rid} ?p ?o . }}"
    if template_id == "tagged_with_nutrient_filter":
        tag = _require(args, "tag", template_id)
        if not isinstance(tag, str) or not tag:
            raise TemplateError("argument 'tag' must be a non-empty string")
        nutrient = _ident_arg(args, "nutrient", template_id)
        op = _require(args, "op", template_id)
        if op not in COMPARE_OPS:
            raise TemplateError(f"argument 'op' must be one of {COMPARE_OPS}")
        value = _require(args, "value", template_id)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TemplateError("argument 'value' must be numeric")
        return (
            f'SELECT ?r ?name WHERE {{ ?r tagged "{_escape_literal(tag)}" . '
            f"?r name ?name . ?r {nutrient} ?x . FILTER(?x {op} {value}) }}"
        )
    raise TemplateError(f"unknown template id: {template_id!r}")


def constraint_filters(
    tag: str, nutrient_filters: list[tuple[str, str, float]]
) -> QueryAst:
    """AST for: recipes of ``tag`` whose nutrients satisfy every (name, op, value).

    Shared building block so callers never need to splice query text.
    """
    patterns = [
        Pattern(Var("r"), Ident("tagged"), Str(tag)),
        Pattern(Var("r"), Ident("name"), Var("name")),
    ]
    filters = []
    for i, (nutrient, op, value) in enumerate(nutrient_filters):
        var = f"x{i}"
        patterns.append(Pattern(Var("r"), Ident(nutrient), Var(var)))
        filters.append(Filter(var, op, float(value)))
    return QueryAst(("r", "name"), tuple(patterns), tuple(filters))


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<string>"(?:[^"\\]|\\.)*")
    | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
    | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op><=|>=|<|>|&&)
    | (?P<punct>[{}().])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"SELECT", "WHERE", "FILTER", "LIMIT"}


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QueryError(f"illegal character {text[pos]!r}", offset=pos)
        kind = m.lastgroup or ""
        if kind != "ws":
            tok = _Token(kind, m.group(), pos)
            if kind == "ident" and tok.text in _KEYWORDS:
                tok.kind = "keyword"
            tokens.append(tok)
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str, text: str | None = None, expected: str = "") -> _Token:
        tok = self.cur
        if tok.kind != kind or (text is not None and tok.text != text):
            raise QueryError(
                f"unexpected {tok.text!r}" if tok.kind != "eof" else "unexpected end of query",
                offset=tok.offset,
                expected=expected or (text or kind),
            )
        self.i += 1
        return tok

    def term(self) -> Term:
        tok = self.cur
        if tok.kind == "var":
            self.i += 1
            return Var(tok.text[1:])
        if tok.kind == "ident":
            self.i += 1
            return Ident(tok.text)
        if tok.kind == "string":
            self.i += 1
            body = tok.text[1:-1]
            return Str(re.sub(r"\\(.)", r"\1", body))
        if tok.kind == "number":
            self.i += 1
            return Num(float(tok.text))
        raise QueryError(
            f"unexpected {tok.text!r}",
            offset=tok.offset,
            expected="a variable, identifier, string, or number",
        )

    def comparison(self) -> Filter:
        var_tok = self.take("var", expected="a ?variable")
        op_tok = self.cur
        if op_tok.kind != "op" or op_tok.text not in COMPARE_OPS:
            raise QueryError(
                f"unexpected {op_tok.text!r}",
                offset=op_tok.offset,
                expected="one of < <= > >=",
            )
        self.i += 1
        num_tok = self.take("number", expected="a numeric literal")
        return Filter(var_tok.text[1:], op_tok.text, float(num_tok.text))

    def parse(self) -> QueryAst:
        self.take("keyword", "SELECT")
        select_vars: list[str] = []
        while self.cur.kind == "var":
            select_vars.append(self.cur.text[1:])
            self.i += 1
        if not select_vars:
            raise QueryError(
                "SELECT needs at least one variable",
                offset=self.cur.offset,
                expected="a ?variable",
            )
        self.take("keyword", "WHERE")
        self.take("punct", "{")
        patterns: list[Pattern] = []
        filters: list[Filter] = []
        while True:
            tok = self.cur
            if tok.kind == "punct" and tok.text == "}":
                self.i += 1
                break
            if tok.kind == "keyword" and tok.text == "FILTER":
                self.i += 1
                self.take("punct", "(")
                filters.append(self.comparison())
                while self.cur.kind == "op" and self.cur.text == "&&":
                    self.i += 1
                    filters.append(self.comparison())
                self.take("punct", ")")
                continue
            if filters and tok.kind in ("var", "ident", "string", "number"):
                # patterns may not follow filters; keeps the grammar LL(1)
                raise QueryError(
                    "patterns must precede FILTER clauses",
                    offset=tok.offset,
                    expected="FILTER or }",
                )
            subj = self.term()
            pred = self.term()
            obj = self.term()
            self.take("punct", ".", expected="'.' after pattern")
            patterns.append(Pattern(subj, pred, obj))
        limit: int | None = None
        if self.cur.kind == "keyword" and self.cur.text == "LIMIT":
            self.i += 1
            num = self.take("number", expected="a non-negative integer")
            if "." in num.text or "e" in num.text or "E" in num.text or num.text.startswith("-"):
                raise QueryError(
                    "LIMIT must be a non-negative integer", offset=num.offset
                )
            limit = int(num.text)
        self.take("eof", expected="end of query")
        try:
            return QueryAst(tuple(select_vars), tuple(patterns), tuple(filters), limit)
        except QueryError as exc:
            raise QueryError(str(exc), offset=0) from exc


def parse_query(text: str) -> QueryAst:
    """Parse query text; raises :class:`QueryError` with offset and expectation."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Execution

_MISSING = object()


def _sort_key(value: str | float) -> tuple[int, str] | tuple[int, float]:
    if isinstance(value, str):
        return (0, value)
    return (1, value)


def execute(graph: KnowledgeGraph, ast: QueryAst) -> ResultTable:
    """Run a query against the graph's triple view.

    Deduplicated rows sorted by column values (strings before numbers),
    then truncated to LIMIT.
    """
    triples = graph.to_triples()
    by_pred: dict[str, list[Triple]] = {}
    by_subj_pred: dict[tuple[str, str], list[Triple]] = {}
    for t in triples:
        by_pred.setdefault(t.predicate, []).append(t)
        by_subj_pred.setdefault((t.subject, t.predicate), []).append(t)

    def candidates(pattern: Pattern, binding: dict[str, str | float]) -> list[Triple]:
        def resolve(term: Term) -> object:
            if isinstance(term, Var):
                return binding.get(term.name, _MISSING)
            if isinstance(term, Ident):
                return term.value
            if isinstance(term, Str):
                return term.value
            return term.value

        subj = resolve(pattern.subject)
        pred = resolve(pattern.predicate)
        if subj is not _MISSING and pred is not _MISSING:
            pool = by_subj_pred.get((subj, pred), [])  # type: ignore[arg-type]
        elif pred is not _MISSING:
            pool = by_pred.get(pred, [])  # type: ignore[arg-type]
        else:
            pool = list(triples)
        obj = resolve(pattern.object)
        out = []
        for t in pool:
            if subj is not _MISSING and t.subject != subj:
                continue
            if obj is not _MISSING and t.object != obj:
                continue
            out.append(t)
        return out

    bindings: list[dict[str, str | float]] = [{}]
    for pattern in ast.patterns:
        next_bindings: list[dict[str, str | float]] = []
        for binding in bindings:
            for t in candidates(pattern, binding):
                new = dict(binding)
                ok = True
                for term, value in (
                    (pattern.subject, t.subject),
                    (pattern.predicate, t.predicate),
                    (pattern.object, t.object),
                ):
                    if isinstance(term, Var):
                        if term.name in new and new[term.name] != value:
                            ok = False
                            break
                        new[term.name] = value
                if ok:
                    next_bindings.append(new)
        bindings = next_bindings
        if not bindings:
            break

    kept: list[dict[str, str | float]] = []
    for binding in bindings:
        ok = True
        for f in ast.filters:
            value = binding[f.var]
            if isinstance(value, str) or not f.holds(value):
                ok = False
                break
        if ok:
            kept.append(binding)

    rows = {tuple(b[v] for v in ast.select_vars) for b in kept}
    ordered = sorted(rows, key=lambda row: tuple(_sort_key(v) for v in row))
    if ast.limit is not None:
        ordered = ordered[: ast.limit]
    return ResultTable(columns=ast.select_vars, rows=tuple(ordered))


def run(graph: KnowledgeGraph, text: str) -> ResultTable:
    """Parse then execute."""
    return execute(graph, parse_query(text))
