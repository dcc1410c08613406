"""Corpus data model: JSONL ingestion, validation, and adversarial perturbation.

One example couples a source-knowledge passage with a dialogue history, a
ground-truth reference utterance, and the model utterance to be scored or
refined. Files are JSON Lines, one object per line, UTF-8.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .entities import EntitySpan, EntityType, normalize_surface


class CorpusError(ValueError):
    """Raised on malformed corpus or record files."""


@dataclass
class KGCExample:
    """One knowledge-grounded conversation instance."""

    example_id: str
    dialogue_history: list[tuple[str, str]] = field(default_factory=list)
    knowledge: str = ""
    persona: list[str] | None = None
    reference_utterance: str = ""
    model_utterance: str = ""
    dataset_tag: str = ""


@dataclass
class RefinementRecord:
    """Per-utterance pipeline outcome: score, routing decision, refined text."""

    example_id: str
    original: str
    faithfulness_score: float
    was_refined: bool
    refined: str | None
    final: str


def validate_example(
    ex: KGCExample, allow_empty_model_utterance: bool = False
) -> list[str]:
    """Return invariant violations (empty list means the example is valid).

    ``allow_empty_model_utterance`` relaxes the hypothesis-slot check for
    refiner-training corpora that deliberately omit the model utterance.
    """
    violations: list[str] = []
    if not ex.example_id:
        violations.append("example_id empty")
    if not ex.knowledge:
        violations.append("knowledge empty")
    if not ex.reference_utterance:
        violations.append("reference_utterance empty")
    if not ex.model_utterance and not allow_empty_model_utterance:
        violations.append("model_utterance empty")
    for i, turn in enumerate(ex.dialogue_history):
        if len(turn) != 2 or not all(isinstance(part, str) for part in turn):
            violations.append(f"dialogue_history[{i}] not a (speaker, text) pair")
    return violations


def validate_record(rec: RefinementRecord) -> list[str]:
    """Return invariant violations for a refinement record."""
    violations: list[str] = []
    if not 0.0 <= rec.faithfulness_score <= 1.0:
        violations.append("faithfulness_score outside [0, 1]")
    if rec.was_refined:
        if rec.refined is None:
            violations.append("was_refined set but refined missing")
        elif rec.final != rec.refined:
            violations.append("final does not equal refined")
    else:
        if rec.refined is not None:
            violations.append("refined present but was_refined unset")
        if rec.final != rec.original:
            violations.append("final does not equal original")
    return violations


def example_to_dict(ex: KGCExample) -> dict:
    d = {
        "example_id": ex.example_id,
        "dialogue_history": [
            {"speaker": spk, "text": txt} for spk, txt in ex.dialogue_history
        ],
        "knowledge": ex.knowledge,
        "reference_utterance": ex.reference_utterance,
        "model_utterance": ex.model_utterance,
        "dataset_tag": ex.dataset_tag,
    }
    if ex.persona is not None:
        d["persona"] = ex.persona
    return d


def example_from_dict(d: Mapping, lineno: int | None = None) -> KGCExample:
    where = f" (line {lineno})" if lineno is not None else ""
    required = (
        "example_id",
        "dialogue_history",
        "knowledge",
        "reference_utterance",
        "model_utterance",
        "dataset_tag",
    )
    for key in required:
        if key not in d:
            raise CorpusError(f"missing field {key!r}{where}")
    try:
        history = [
            (turn["speaker"], turn["text"]) for turn in d["dialogue_history"]
        ]
    except (TypeError, KeyError):
        raise CorpusError(f"malformed dialogue_history{where}") from None
    persona = d.get("persona")
    if persona is not None and not (
        isinstance(persona, list) and all(isinstance(p, str) for p in persona)
    ):
        raise CorpusError(f"persona must be a list of strings{where}")
    return KGCExample(
        example_id=str(d["example_id"]),
        dialogue_history=history,
        knowledge=str(d["knowledge"]),
        persona=persona,
        reference_utterance=str(d["reference_utterance"]),
        model_utterance=str(d["model_utterance"]),
        dataset_tag=str(d["dataset_tag"]),
    )


def load_corpus(
    path: str | Path, allow_empty_model_utterance: bool = False
) -> list[KGCExample]:
    """Load and validate a JSONL corpus, preserving line order.

    Raises :class:`CorpusError` with a line number on malformed lines,
    invariant violations, or duplicate example ids.
    """
    examples: list[KGCExample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"malformed JSON (line {lineno}): {err}") from None
            ex = example_from_dict(payload, lineno)
            violations = validate_example(ex, allow_empty_model_utterance)
            if violations:
                raise CorpusError(
                    f"invalid example (line {lineno}): " + "; ".join(violations)
                )
            if ex.example_id in seen:
                raise CorpusError(
                    f"duplicate example_id {ex.example_id!r} (line {lineno})"
                )
            seen.add(ex.example_id)
            examples.append(ex)
    return examples


def save_corpus(path: str | Path, examples: Sequence[KGCExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")


def record_to_dict(rec: RefinementRecord) -> dict:
    return {
        "example_id": rec.example_id,
        "original": rec.original,
        "faithfulness_score": rec.faithfulness_score,
        "was_refined": rec.was_refined,
        "refined": rec.refined,
        "final": rec.final,
    }


def load_records(path: str | Path) -> list[RefinementRecord]:
    records: list[RefinementRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"malformed JSON (line {lineno}): {err}") from None
            try:
                rec = RefinementRecord(
                    example_id=d["example_id"],
                    original=d["original"],
                    faithfulness_score=float(d["faithfulness_score"]),
                    was_refined=bool(d["was_refined"]),
                    refined=d["refined"],
                    final=d["final"],
                )
            except KeyError as err:
                raise CorpusError(f"missing field {err} (line {lineno})") from None
            violations = validate_record(rec)
            if violations:
                raise CorpusError(
                    f"invalid record (line {lineno}): " + "; ".join(violations)
                )
            records.append(rec)
    return records


def save_records(path: str | Path, records: Sequence[RefinementRecord]) -> None:
    """Write records as JSONL; load-after-save round-trips field-for-field."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")


def effective_knowledge(ex: KGCExample) -> str:
    """Knowledge string as seen by scorers and refiners.

    Persona items, when present, are folded into the knowledge so the
    (knowledge, utterance) interface stays two-place.
    """
    if ex.persona:
        return "persona: " + " ".join(ex.persona) + " knowledge: " + ex.knowledge
    return ex.knowledge


def perturb_entity_swap(
    ex: KGCExample,
    spans: Sequence[EntitySpan],
    distractor_pool: Mapping[EntityType, Sequence[str]],
    seed: int,
) -> KGCExample:
    """Corrupt the reference utterance by swapping every tagged entity.

    Each span (tagged over ``ex.reference_utterance`` by the caller's tagger)
    is replaced with a same-type distractor from the pool that differs from
    the original surface. Deterministic for a fixed seed; all other fields
    are returned unchanged.
    """
    if not spans:
        raise CorpusError("nothing to perturb: reference utterance has no entities")
    text = ex.reference_utterance
    ordered = sorted(spans, key=lambda s: s.start)
    for span in ordered:
        span.check_against(text)
    rng = random.Random(seed)
    replacements: list[tuple[EntitySpan, str]] = []
    for span in ordered:
        pool = distractor_pool.get(span.etype, ())
        candidates = [
            d for d in pool if normalize_surface(d) != normalize_surface(span.surface)
        ]
        if not candidates:
            raise CorpusError(
                f"no distractor of type {span.etype.value} for {span.surface!r}"
            )
        replacements.append((span, rng.choice(candidates)))
    for span, distractor in reversed(replacements):
        text = text[: span.start] + distractor + text[span.end :]
    return replace(ex, reference_utterance=text)
