"""Knowledge-graph-backed constrained recipe recommendation toolkit."""

from .kg_store import (
    CorpusError,
    KnowledgeGraph,
    NoDataError,
    NutrientStats,
    Recipe,
    Triple,
    ingest_corpus,
)
from .constraints import (
    ConstraintError,
    ConstraintQuery,
    NutrientConstraint,
    QuestionParseError,
    QuestionTemplate,
    ground_truth,
    load_templates,
    parse_question,
    render_question,
    satisfies,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintError",
    "ConstraintQuery",
    "CorpusError",
    "KnowledgeGraph",
    "NoDataError",
    "NutrientConstraint",
    "NutrientStats",
    "QuestionParseError",
    "QuestionTemplate",
    "Recipe",
    "Triple",
    "__version__",
    "ground_truth",
    "ingest_corpus",
    "load_templates",
    "parse_question",
    "render_question",
    "satisfies",
]
