"""Faithfulness and quality metrics with corpus aggregation.

Entity coverage and type coverage work on normalized entity multisets from
:mod:`.entities`; chrF / ROUGE-L / Distinct-N are self-contained text
metrics. ``aggregate`` folds per-instance rows into a report shaped for
JSON or CSV export.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .entities import (
    ENTITY_TYPES,
    EntityBag,
    EntitySpan,
    Tagger,
    entity_bag,
)


@dataclass(frozen=True)
class MetricValue:
    """A metric instance value; ``defined=False`` voids it for aggregation."""

    value: float
    defined: bool = True

    @staticmethod
    def undefined() -> "MetricValue":
        return MetricValue(0.0, False)


def entity_coverage(
    bag_k: EntityBag, bag_u: EntityBag, bag_pred: EntityBag
) -> MetricValue:
    """Fraction of knowledge-and-reference entities present in the prediction.

    Multiset semantics: intersections take minimum multiplicities. Undefined
    when knowledge and reference share no entities.
    """
    inter_ku = bag_k & bag_u
    denominator = sum(inter_ku.values())
    if denominator == 0:
        return MetricValue.undefined()
    numerator = sum((inter_ku & bag_pred).values())
    return MetricValue(numerator / denominator)


def type_coverage(
    ref_spans: Sequence[EntitySpan], pred_spans: Sequence[EntitySpan]
) -> MetricValue:
    """Mean per-type ratio of predicted to reference entity counts.

    Only types with at least one reference entity contribute; the instance is
    undefined when the reference has no entities at all. Ratios above 1
    (over-generation of a type) are kept, not clamped.
    """
    ref_counts = Counter(s.etype for s in ref_spans)
    pred_counts = Counter(s.etype for s in pred_spans)
    ratios = [
        pred_counts[t] / ref_counts[t] for t in ENTITY_TYPES if ref_counts[t] > 0
    ]
    if not ratios:
        return MetricValue.undefined()
    return MetricValue(sum(ratios) / len(ratios))


def _char_ngram_counts(chars: str, n: int) -> Counter:
    return Counter(chars[i : i + n] for i in range(len(chars) - n + 1))


def chrf(hyp: str, ref: str, max_n: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-score in [0, 100].

    Whitespace is removed before n-gram extraction. Precision and recall are
    macro-averaged over n-gram orders 1..max_n, skipping orders where the
    respective side has no n-grams; the F-beta combination weights recall by
    ``beta``.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    hyp_chars = "".join(hyp.split())
    ref_chars = "".join(ref.split())
    precisions: list[float] = []
    recalls: list[float] = []
    for n in range(1, max_n + 1):
        hyp_counts = _char_ngram_counts(hyp_chars, n)
        ref_counts = _char_ngram_counts(ref_chars, n)
        matches = sum((hyp_counts & ref_counts).values())
        hyp_total = sum(hyp_counts.values())
        ref_total = sum(ref_counts.values())
        if hyp_total > 0:
            precisions.append(matches / hyp_total)
        if ref_total > 0:
            recalls.append(matches / ref_total)
    precision = sum(precisions) / len(precisions) if precisions else 0.0
    recall = sum(recalls) / len(recalls) if recalls else 0.0
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return 100.0 * (1 + beta * beta) * precision * recall / denom


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _text_tokens(text: str) -> list[str]:
    return text.casefold().split()


def rouge_l_f(hyp: str, ref: str) -> float:
    """Token-level longest-common-subsequence F1 in [0, 1]."""
    hyp_tokens = _text_tokens(hyp)
    ref_tokens = _text_tokens(ref)
    lcs = _lcs_length(hyp_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp_tokens)
    recall = lcs / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def distinct_n(utterances: Sequence[str], n: int) -> float:
    """Corpus-level ratio of unique to total token n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0
    unique: set[tuple[str, ...]] = set()
    for utt in utterances:
        tokens = _text_tokens(utt)
        for i in range(len(tokens) - n + 1):
            unique.add(tuple(tokens[i : i + n]))
            total += 1
    if total == 0:
        return 0.0
    return len(unique) / total


def entity_precision_score(knowledge: str, utterance: str, tagger: Tagger) -> float:
    """Built-in faithfulness score: fraction of utterance entities found in
    the knowledge. An entity-free utterance scores 1.0 (nothing to
    contradict)."""
    bag_utt = entity_bag(tagger(utterance))
    if not bag_utt:
        return 1.0
    bag_know = entity_bag(tagger(knowledge))
    return sum((bag_utt & bag_know).values()) / sum(bag_utt.values())


@dataclass
class InstanceMetrics:
    """Per-instance metric row plus the context aggregation needs."""

    example_id: str
    ec: MetricValue
    tc: MetricValue
    chrf: float
    rouge_l: float
    faithfulness: float
    text: str = ""
    ref_type_counts: dict[str, int] = field(default_factory=dict)


@dataclass
class MetricReport:
    per_instance: list[InstanceMetrics]
    corpus: dict


def evaluate_instance(
    example_id: str,
    knowledge: str,
    reference: str,
    prediction: str,
    tagger: Tagger,
    scorer: Callable[[str, str], float] | None = None,
) -> InstanceMetrics:
    """Compute the full metric row for one (knowledge, reference, prediction)."""
    spans_k = tagger(knowledge)
    spans_u = tagger(reference)
    spans_p = tagger(prediction)
    if scorer is None:
        faithfulness = entity_precision_score(knowledge, prediction, tagger)
    else:
        faithfulness = scorer(knowledge, prediction)
    return InstanceMetrics(
        example_id=example_id,
        ec=entity_coverage(entity_bag(spans_k), entity_bag(spans_u), entity_bag(spans_p)),
        tc=type_coverage(spans_u, spans_p),
        chrf=chrf(prediction, reference),
        rouge_l=rouge_l_f(prediction, reference),
        faithfulness=faithfulness,
        text=prediction,
        ref_type_counts=dict(Counter(s.etype.value for s in spans_u)),
    )


def aggregate(rows: Sequence[InstanceMetrics]) -> MetricReport:
    """Fold instance rows into corpus means, diversity, and type histogram.

    Means skip undefined instances; the per-metric undefined counts are
    reported alongside. Distinct-1/2 are computed over the instance texts.
    """
    ec_defined = [r.ec.value for r in rows if r.ec.defined]
    tc_defined = [r.tc.value for r in rows if r.tc.defined]
    type_totals: Counter = Counter()
    for r in rows:
        type_totals.update(r.ref_type_counts)
    total_entities = sum(type_totals.values())
    histogram = {
        t.value: (type_totals[t.value] / total_entities if total_entities else 0.0)
        for t in ENTITY_TYPES
    }
    texts = [r.text for r in rows]
    n = len(rows)
    corpus = {
        "n_instances": n,
        "ec_mean": sum(ec_defined) / len(ec_defined) if ec_defined else None,
        "ec_undefined": n - len(ec_defined),
        "tc_mean": sum(tc_defined) / len(tc_defined) if tc_defined else None,
        "tc_undefined": n - len(tc_defined),
        "chrf_mean": sum(r.chrf for r in rows) / n if n else None,
        "rouge_l_mean": sum(r.rouge_l for r in rows) / n if n else None,
        "faithfulness_mean": sum(r.faithfulness for r in rows) / n if n else None,
        "distinct_1": distinct_n(texts, 1),
        "distinct_2": distinct_n(texts, 2),
        "entity_type_counts": {t.value: type_totals[t.value] for t in ENTITY_TYPES},
        "entity_type_histogram": histogram,
    }
    return MetricReport(per_instance=list(rows), corpus=corpus)


def report_to_dict(report: MetricReport) -> dict:
    return {
        "per_instance": [
            {
                "example_id": r.example_id,
                "ec": r.ec.value if r.ec.defined else None,
                "tc": r.tc.value if r.tc.defined else None,
                "chrf": r.chrf,
                "rouge_l": r.rouge_l,
                "faithfulness": r.faithfulness,
            }
            for r in report.per_instance
        ],
        "corpus": report.corpus,
    }


def write_report_json(path: str | Path, report: MetricReport) -> None:
    payload = report_to_dict(report)
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def write_report_csv(path: str | Path, report: MetricReport) -> None:
    """One row per instance; undefined metric cells are left empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["example_id", "ec", "tc", "chrf", "rouge_l", "faithfulness"]
        )
        for r in report.per_instance:
            writer.writerow(
                [
                    r.example_id,
                    r.ec.value if r.ec.defined else "",
                    r.tc.value if r.tc.defined else "",
                    r.chrf,
                    r.rouge_l,
                    r.faithfulness,
                ]
            )
