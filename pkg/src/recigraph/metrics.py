"""Evaluation mathematics: retrieval scores, text overlap metrics,
perplexity, nutrient extraction, and report aggregation.

All text metrics work on token lists from :func:`tokenize` so scores are
reproducible bit for bit.  Retrieval metrics compare normalized titles
with set semantics.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass

from .kg_store import canonical_nutrient, normalize_title

__all__ = [
    "MetricError",
    "RetrievalScore",
    "TextScore",
    "NutrientParse",
    "EvalReport",
    "ItemScore",
    "tokenize",
    "ngram_counts",
    "retrieval_scores",
    "average_precision",
    "mean_ap",
    "bleu",
    "rouge_n",
    "rouge_l",
    "meteor",
    "cider",
    "score_text",
    "perplexity",
    "parse_nutrients",
    "percentile_value",
    "nutrient_mae",
]


class MetricError(ValueError):
    """A metric precondition was violated."""


# ---------------------------------------------------------------------------
# Tokenization

_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|\w+(?:'\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Case-folded tokens: words (apostrophes kept), decimals, punctuation marks."""
    return _TOKEN_RE.findall(text.casefold())


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# Retrieval metrics


@dataclass(frozen=True)
class RetrievalScore:
    precision: float
    recall: float
    f1: float
    ap: float


def _normalize_ranked(predicted: list[str]) -> list[str]:
    seen: dict[str, None] = {}
    for title in predicted:
        seen.setdefault(normalize_title(title), None)
    return list(seen)


def retrieval_scores(truth: "set[str] | list[str]", predicted: list[str]) -> RetrievalScore:
    """Set-semantics precision/recall/F1 plus AP over the ranked predictions.

    Titles are normalized and predictions deduplicated (first occurrence
    kept).  Empty predictions give all zeros.
    """
    truth_set = {normalize_title(t) for t in truth}
    if not truth_set:
        raise MetricError("truth set must be non-empty")
    ranked = _normalize_ranked(predicted)
    tp = len(truth_set & set(ranked))
    precision = tp / len(ranked) if ranked else 0.0
    recall = tp / len(truth_set)
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return RetrievalScore(
        precision=precision,
        recall=recall,
        f1=f1,
        ap=average_precision(truth, predicted),
    )


def average_precision(
    truth: "set[str] | list[str]",
    predicted: list[str],
    normalize: str = "truth",
) -> float:
    """Mean of precision-at-rank over relevant hits.

    ``normalize="truth"`` divides by |truth| so missing relevant titles
    lower the score; ``"found"`` divides by the number of hits instead.
    """
    if normalize not in ("truth", "found"):
        raise MetricError(f"unknown normalization {normalize!r}")
    truth_set = {normalize_title(t) for t in truth}
    if not truth_set:
        raise MetricError("truth set must be non-empty")
    hits = 0
    total = 0.0
    for rank, title in enumerate(_normalize_ranked(predicted), start=1):
        if title in truth_set:
            hits += 1
            total += hits / rank
    denom = len(truth_set) if normalize == "truth" else hits
    return total / denom if denom else 0.0


def mean_ap(ap_values: list[float]) -> float:
    if not ap_values:
        raise MetricError("mean_ap needs at least one value")
    return sum(ap_values) / len(ap_values)


# ---------------------------------------------------------------------------
# Text generation metrics


def bleu(candidate: list[str], reference: list[str], n_max: int = 4) -> float:
    """Geometric mean of clipped n-gram precisions with a brevity penalty.

    Any zero n-gram precision zeroes the score; orders longer than the
    candidate have no defined precision and are skipped, so identical
    texts score 1 at any order.  A candidate longer than the reference
    takes no brevity penalty, otherwise
    BP = exp(1 - len(reference)/len(candidate)).
    """
    if n_max < 1:
        raise MetricError("n_max must be >= 1")
    if not reference:
        raise MetricError("reference must be non-empty")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, n_max + 1):
        cand_counts = ngram_counts(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            continue
        ref_counts = ngram_counts(reference, n)
        clipped = sum(
            min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items()
        )
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total) / n_max
    if len(candidate) > len(reference):
        bp = 1.0
    else:
        bp = math.exp(1.0 - len(reference) / len(candidate))
    return bp * math.exp(log_sum)


def rouge_n(candidate: list[str], references: list[list[str]], n: int) -> float:
    """Recall of reference n-grams: clipped matches over reference totals."""
    if n < 1:
        raise MetricError("n must be >= 1")
    if not references:
        raise MetricError("references must be non-empty")
    cand_counts = ngram_counts(candidate, n)
    matched = 0
    total = 0
    for reference in references:
        ref_counts = ngram_counts(reference, n)
        total += sum(ref_counts.values())
        matched += sum(
            min(count, cand_counts.get(gram, 0)) for gram, count in ref_counts.items()
        )
    return matched / total if total else 0.0


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def rouge_l(
    candidate: list[str], references: list[list[str]], beta: float = 1.2
) -> float:
    """LCS F-measure (recall-weighted by beta); best reference wins."""
    if not references:
        raise MetricError("references must be non-empty")
    best = 0.0
    for reference in references:
        lcs = _lcs_length(candidate, reference)
        if lcs == 0:
            continue
        r = lcs / len(reference)
        p = lcs / len(candidate)
        denom = r + beta * beta * p
        if denom > 0:
            best = max(best, (1 + beta * beta) * r * p / denom)
    return best


def _greedy_alignment(
    candidate: list[str], reference: list[str], need: Counter
) -> list[tuple[int, int]]:
    """Longest-common-block greedy alignment; returns (cand, ref) position pairs."""
    avail_c = [tok in need for tok in candidate]
    avail_r = [tok in need for tok in reference]
    pairs: list[tuple[int, int]] = []
    while True:
        best_len = 0
        best_pos = None
        for i in range(len(candidate)):
            if not avail_c[i]:
                continue
            for j in range(len(reference)):
                if not avail_r[j] or reference[j] != candidate[i]:
                    continue
                length = 0
                while (
                    i + length < len(candidate)
                    and j + length < len(reference)
                    and avail_c[i + length]
                    and avail_r[j + length]
                    and candidate[i + length] == reference[j + length]
                ):
                    length += 1
                if length > best_len:
                    best_len = length
                    best_pos = (i, j)
        if best_pos is None:
            break
        i, j = best_pos
        for k in range(best_len):
            avail_c[i + k] = False
            avail_r[j + k] = False
            pairs.append((i + k, j + k))
    pairs.sort()
    return pairs


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


_METEOR_NODE_BUDGET = 200_000


def _min_chunks(candidate: list[str], reference: list[str]) -> tuple[int, int]:
    """(matches, minimum chunk count) for the exact-match unigram alignment.

    Matches are fixed by per-type minimum counts; the chunk minimum is
    found by branch and bound seeded with a greedy alignment.  The node
    budget caps worst-case work; within it the result is exact.
    """
    cand_counts = Counter(candidate)
    ref_counts = Counter(reference)
    need = Counter(
        {tok: min(c, ref_counts[tok]) for tok, c in cand_counts.items() if tok in ref_counts}
    )
    need = Counter({tok: n for tok, n in need.items() if n > 0})
    matches = sum(need.values())
    if matches == 0:
        return 0, 0

    incumbent = _count_chunks(_greedy_alignment(candidate, reference, need))

    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        if tok in need:
            ref_positions.setdefault(tok, []).append(j)
    cand_positions = [i for i, tok in enumerate(candidate) if tok in need]
    remaining_after: dict[str, list[int]] = {}
    # remaining candidate occurrences of each type at or after each index,
    # to know when skipping an occurrence still leaves enough matches
    occ_count: Counter = Counter()
    for i in reversed(cand_positions):
        occ_count[candidate[i]] += 1
        remaining_after.setdefault(candidate[i], []).append(occ_count[candidate[i]])
    remaining_iter: dict[str, int] = {tok: 0 for tok in remaining_after}

    used_ref: set[int] = set()
    state = {"best": incumbent, "nodes": 0}

    def dfs(pos_idx: int, still_need: Counter, chunks: int, prev: tuple[int, int] | None) -> None:
        if chunks >= state["best"]:
            return
        if state["nodes"] >= _METEOR_NODE_BUDGET:
            return
        state["nodes"] += 1
        if sum(still_need.values()) == 0:
            state["best"] = min(state["best"], chunks)
            return
        if pos_idx >= len(cand_positions):
            return
        i = cand_positions[pos_idx]
        tok = candidate[i]
        remaining_iter[tok] += 1
        remaining_here = len(remaining_after[tok]) - remaining_iter[tok] + 1
        if still_need[tok] > 0:
            adjacent = (
                prev is not None and i == prev[0] + 1 and prev[1] + 1 < len(reference)
            )
            options = ref_positions[tok]
            # try the chunk-extending reference position first
            ordered = options
            if adjacent and prev is not None and reference[prev[1] + 1] == tok:
                ext = prev[1] + 1
                ordered = [ext] + [j for j in options if j != ext]
            for j in ordered:
                if j in used_ref:
                    continue
                new_chunks = chunks
                if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
                    new_chunks += 1
                used_ref.add(j)
                still_need[tok] -= 1
                dfs(pos_idx + 1, still_need, new_chunks, (i, j))
                still_need[tok] += 1
                used_ref.discard(j)
        # skip this occurrence when enough later occurrences remain
        if remaining_here - 1 >= still_need[tok]:
            dfs(pos_idx + 1, still_need, chunks, prev)
        remaining_iter[tok] -= 1

    dfs(0, Counter(need), 0, None)
    return matches, state["best"]


def meteor(candidate: list[str], reference: list[str]) -> float:
    """Exact-match unigram METEOR: harmonic mean weighted toward recall,
    discounted by the fragmentation penalty 0.5 * (chunks/matches)^3."""
    if not candidate or not reference:
        return 0.0
    matches, chunks = _min_chunks(candidate, reference)
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(reference)
    f = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f * (1 - penalty)


def cider(
    items: list[tuple[list[str], list[list[str]]]], n_max: int = 4
) -> list[float]:
    """Per-item TF-IDF n-gram cosine scores, averaged over n and references.

    Document frequency counts the items whose reference set contains the
    n-gram; idf = log(#items / df), with unseen n-grams treated as df=1.
    Needs at least two items so idf carries information.
    """
    if len(items) < 2:
        raise MetricError("cider needs at least 2 reference documents")
    for _, refs in items:
        if not refs:
            raise MetricError("every item needs at least one reference")
    n_docs = len(items)
    df: list[Counter] = [Counter() for _ in range(n_max + 1)]
    for _, refs in items:
        for n in range(1, n_max + 1):
            grams: set = set()
            for ref in refs:
                grams.update(ngram_counts(ref, n))
            for gram in grams:
                df[n][gram] += 1

    def weighted(tokens: list[str], n: int) -> dict:
        out = {}
        for gram, count in ngram_counts(tokens, n).items():
            idf = math.log(n_docs / max(1, df[n][gram]))
            out[gram] = count * idf
        return out

    def cosine(u: dict, v: dict) -> float:
        dot = sum(w * v[g] for g, w in u.items() if g in v)
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        if nu == 0 or nv == 0:
            return 0.0
        return dot / (nu * nv)

    scores: list[float] = []
    for cand, refs in items:
        total = 0.0
        for n in range(1, n_max + 1):
            cand_vec = weighted(cand, n)
            sim = sum(cosine(cand_vec, weighted(ref, n)) for ref in refs) / len(refs)
            total += sim / n_max
        scores.append(total)
    return scores


@dataclass(frozen=True)
class TextScore:
    """Per-item text-generation scores; cider is filled by a corpus pass."""

    bleu: dict[int, float]
    rouge_n: dict[int, float]
    rouge_l: float
    meteor: float
    cider: float = 0.0


def score_text(
    candidate: list[str],
    references: list[list[str]],
    bleu_orders: tuple[int, ...] = (1, 2, 3, 4),
    rouge_orders: tuple[int, ...] = (1, 2),
) -> TextScore:
    """BLEU/ROUGE/METEOR against the references (METEOR uses the first)."""
    if not references:
        raise MetricError("references must be non-empty")
    return TextScore(
        bleu={n: bleu(candidate, references[0], n) for n in bleu_orders},
        rouge_n={n: rouge_n(candidate, references, n) for n in rouge_orders},
        rouge_l=rouge_l(candidate, references),
        meteor=meteor(candidate, references[0]),
    )


# ---------------------------------------------------------------------------
# Perplexity


def perplexity(logprobs: list[float]) -> float:
    """exp of the mean negative log-probability."""
    if not logprobs:
        raise MetricError("perplexity needs at least one log-probability")
    for lp in logprobs:
        if math.isnan(lp) or math.isinf(lp) or lp > 0:
            raise MetricError(f"log-probabilities must be finite and <= 0, got {lp}")
    return math.exp(-sum(logprobs) / len(logprobs))


# ---------------------------------------------------------------------------
# Nutrient extraction and error


@dataclass(frozen=True)
class NutrientParse:
    """Nutrient map extracted from generated text."""

    values: dict[str, float]
    source_span: tuple[int, int] | None = None
    diagnostics: tuple[str, ...] = ()


def parse_nutrients(text: str) -> NutrientParse:
    """Extract the first balanced JSON object and keep its numeric entries.

    Keys are canonicalized; non-numeric values are skipped with a
    diagnostic; no decodable object gives an empty map.
    """
    decoder = json.JSONDecoder()
    start = 0
    while True:
        brace = text.find("{", start)
        if brace < 0:
            return NutrientParse(values={})
        try:
            obj, end = decoder.raw_decode(text[brace:])
        except json.JSONDecodeError:
            start = brace + 1
            continue
        if not isinstance(obj, dict):
            start = brace + 1
            continue
        values: dict[str, float] = {}
        diagnostics: list[str] = []
        for key, value in obj.items():
            name = canonical_nutrient(str(key))
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                diagnostics.append(f"non-numeric value for {name!r}: {value!r}")
                continue
            if math.isnan(value) or math.isinf(value):
                diagnostics.append(f"non-finite value for {name!r}: {value!r}")
                continue
            values[name] = float(value)
        return NutrientParse(
            values=values,
            source_span=(brace, brace + end),
            diagnostics=tuple(diagnostics),
        )


def percentile_value(values: list[float], p: float) -> float:
    """p-th percentile with linear interpolation between order statistics."""
    if not values:
        raise MetricError("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise MetricError("percentile must be in [0, 100]")
    ordered = sorted(values)
    if len(ordered) == 1:
        return ordered[0]
    rank = p / 100 * (len(ordered) - 1)
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return ordered[lo]
    frac = rank - lo
    return ordered[lo] * (1 - frac) + ordered[hi] * frac


def nutrient_mae(
    pairs: list[tuple[dict[str, float], dict[str, float]]],
    percentile: float | None = None,
    diagnostics: list[str] | None = None,
) -> dict[str, float]:
    """Per-nutrient mean absolute error over co-occurring samples.

    A nutrient counts for a sample only when both the truth and the
    prediction carry it.  With ``percentile`` set, samples whose truth
    value exceeds that percentile of the nutrient's truth distribution
    are excluded first (outlier trimming).  Nutrients with no
    co-occurring samples are omitted (recorded in ``diagnostics``).
    """
    if not pairs:
        raise MetricError("nutrient_mae needs at least one pair")
    names: dict[str, None] = {}
    for truth, _ in pairs:
        for name in truth:
            names.setdefault(canonical_nutrient(name), None)
    for _, pred in pairs:
        for name in pred:
            names.setdefault(canonical_nutrient(name), None)
    out: dict[str, float] = {}
    for name in names:
        samples = [
            (truth[name], pred[name])
            for truth, pred in pairs
            if name in truth and name in pred
        ]
        if not samples:
            if diagnostics is not None:
                diagnostics.append(f"nutrient {name!r} has no co-occurring samples")
            continue
        if percentile is not None:
            cutoff = percentile_value([t for t, _ in samples], percentile)
            samples = [(t, p) for t, p in samples if t <= cutoff]
        out[name] = sum(abs(t - p) for t, p in samples) / len(samples)
    return out


# ---------------------------------------------------------------------------
# Report aggregation


@dataclass(frozen=True)
class ItemScore:
    id: str
    scores: dict[str, float]
    tag: str | None = None


@dataclass(frozen=True)
class EvalReport:
    """Per-item scores with macro means overall and per tag."""

    items: tuple[ItemScore, ...]
    aggregates: dict[str, float]
    per_tag: dict[str, dict[str, float]]
    failures: int = 0

    @classmethod
    def from_items(cls, items: list[ItemScore], failures: int = 0) -> "EvalReport":
        if not items:
            return cls(items=(), aggregates={}, per_tag={}, failures=failures)
        keys = list(items[0].scores)
        for item in items:
            if list(item.scores) != keys:
                raise MetricError(
                    f"item {item.id!r} has score keys {list(item.scores)}, expected {keys}"
                )

        def means(group: list[ItemScore]) -> dict[str, float]:
            return {
                key: sum(it.scores[key] for it in group) / len(group) for key in keys
            }

        by_tag: dict[str, list[ItemScore]] = {}
        for item in items:
            if item.tag is not None:
                by_tag.setdefault(item.tag, []).append(item)
        return cls(
            items=tuple(items),
            aggregates=means(items),
            per_tag={tag: means(group) for tag, group in sorted(by_tag.items())},
            failures=failures,
        )

    @property
    def n_items(self) -> int:
        return len(self.items)

    def to_json_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "failures": self.failures,
            "aggregates": self.aggregates,
            "per_tag": self.per_tag,
            "items": [
                {"id": it.id, "tag": it.tag, **it.scores} for it in self.items
            ],
        }
