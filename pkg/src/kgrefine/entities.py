"""Named-entity machinery: tagging, BIO alignment, and normalized entity bags.

The default tagger is a deterministic gazetteer matcher; any external tagger
process speaking the line protocol (see :class:`ExternalTagger`) can stand in
for it.
"""

from __future__ import annotations

import json
import re
import subprocess
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence


class EntityType(str, Enum):
    """Closed set of entity types carried through tagging and metrics."""

    LOC = "LOC"
    PER = "PER"
    ORG = "ORG"
    MISC = "MISC"


ENTITY_TYPES: tuple[EntityType, ...] = (
    EntityType.LOC,
    EntityType.PER,
    EntityType.ORG,
    EntityType.MISC,
)

#: BIO label inventory: O plus B-/I- per entity type. Index = class id.
BIO_LABELS: tuple[str, ...] = ("O",) + tuple(
    f"{prefix}-{t.value}" for t in ENTITY_TYPES for prefix in ("B", "I")
)
BIO_LABEL_TO_ID: dict[str, int] = {label: i for i, label in enumerate(BIO_LABELS)}

#: A tagger is any callable mapping text to entity spans over that text.
Tagger = Callable[[str], "list[EntitySpan]"]

#: Multiset of (normalized surface, entity type) pairs.
EntityBag = Counter


class EntityError(ValueError):
    """Raised on malformed spans, labels, or gazetteer input."""


@dataclass(frozen=True)
class EntitySpan:
    """A typed entity occurrence located by character offsets.

    ``surface`` must equal the tagged text's ``[start:end]`` slice; offsets are
    half-open.
    """

    start: int
    end: int
    surface: str
    etype: EntityType

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise EntityError(f"bad span offsets [{self.start}, {self.end})")

    def check_against(self, text: str) -> None:
        if self.end > len(text) or text[self.start : self.end] != self.surface:
            raise EntityError(
                f"span surface {self.surface!r} does not match text at "
                f"[{self.start}:{self.end}]"
            )


@dataclass
class TaggedSequence:
    """Tokens with aligned BIO labels and character spans."""

    tokens: list[str]
    labels: list[str]
    token_char_spans: list[tuple[int, int]]

    def validate(self) -> None:
        if not (len(self.tokens) == len(self.labels) == len(self.token_char_spans)):
            raise EntityError("tokens, labels, and char spans must align")
        prev = "O"
        for label in self.labels:
            if label not in BIO_LABEL_TO_ID:
                raise EntityError(f"unknown BIO label {label!r}")
            if label.startswith("I-"):
                if prev == "O" or prev[2:] != label[2:]:
                    raise EntityError(f"label {label!r} cannot follow {prev!r}")
            prev = label


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WS_RE = re.compile(r"\s+")


def normalize_surface(surface: str) -> str:
    """Casefold, trim, and collapse internal whitespace.

    This is the equality rule for all entity comparisons (bags, gazetteer
    keys, distractor filtering).
    """
    return _WS_RE.sub(" ", surface.casefold().strip())


def tokenize_with_spans(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Split on whitespace with punctuation as separate tokens.

    Returns parallel lists of token strings and (start, end) char spans.
    """
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group())
        spans.append((m.start(), m.end()))
    return tokens, spans


def gazetteer_tag(
    text: str, gazetteer: Mapping[str, EntityType]
) -> list[EntitySpan]:
    """Tag ``text`` by greedy longest match against normalized gazetteer keys.

    Scans left to right over token boundaries; at each position the longest
    matching key wins and the scan resumes after it, so output spans are
    non-overlapping and sorted by start.
    """
    tokens, spans = tokenize_with_spans(text)
    if not tokens or not gazetteer:
        return []
    max_words = max(len(key.split(" ")) for key in gazetteer)
    out: list[EntitySpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for length in range(min(max_words, n - i), 0, -1):
            start = spans[i][0]
            end = spans[i + length - 1][1]
            key = normalize_surface(text[start:end])
            etype = gazetteer.get(key)
            if etype is not None:
                out.append(EntitySpan(start, end, text[start:end], etype))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return out


def to_bio(
    tokens: Sequence[str],
    token_char_spans: Sequence[tuple[int, int]],
    spans: Sequence[EntitySpan],
) -> TaggedSequence:
    """Project entity spans onto tokens as BIO labels.

    Tokens fully inside a span get B-<type> (first) / I-<type> (rest); all
    others O. Overlapping spans or a span boundary that splits a token are
    errors.
    """
    ordered = sorted(spans, key=lambda s: s.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise EntityError(
                f"overlapping spans {a.surface!r} and {b.surface!r}"
            )
    labels = ["O"] * len(tokens)
    for span in ordered:
        first = True
        for idx, (tok, (ts, te)) in enumerate(zip(tokens, token_char_spans)):
            if te <= span.start or ts >= span.end:
                continue
            if ts < span.start or te > span.end:
                raise EntityError(
                    f"span {span.surface!r} boundary splits token {tok!r} "
                    f"at [{ts}:{te}]"
                )
            labels[idx] = f"{'B' if first else 'I'}-{span.etype.value}"
            first = False
    tagged = TaggedSequence(list(tokens), labels, list(token_char_spans))
    tagged.validate()
    return tagged


def spans_from_bio(tagged: TaggedSequence, text: str) -> list[EntitySpan]:
    """Reconstruct entity spans from BIO labels (inverse of :func:`to_bio`)."""
    tagged.validate()
    out: list[EntitySpan] = []
    current: tuple[int, int, EntityType] | None = None
    for label, (ts, te) in zip(tagged.labels, tagged.token_char_spans):
        if label.startswith("B-"):
            if current is not None:
                out.append(_finish_span(current, text))
            current = (ts, te, EntityType(label[2:]))
        elif label.startswith("I-") and current is not None:
            current = (current[0], te, current[2])
        else:
            if current is not None:
                out.append(_finish_span(current, text))
            current = None
    if current is not None:
        out.append(_finish_span(current, text))
    return out


def _finish_span(acc: tuple[int, int, EntityType], text: str) -> EntitySpan:
    start, end, etype = acc
    return EntitySpan(start, end, text[start:end], etype)


def entity_bag(spans: Iterable[EntitySpan]) -> EntityBag:
    """Multiset of (normalized surface, type); duplicates keep multiplicity."""
    return Counter((normalize_surface(s.surface), s.etype) for s in spans)


def load_gazetteer(path: str | Path) -> dict[str, EntityType]:
    """Read a TSV gazetteer: one ``surface<TAB>TYPE`` entry per line."""
    gazetteer: dict[str, EntityType] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EntityError(f"{path}:{lineno}: expected 'surface<TAB>TYPE'")
        surface, type_name = parts
        try:
            etype = EntityType(type_name.strip())
        except ValueError:
            raise EntityError(
                f"{path}:{lineno}: unknown entity type {type_name.strip()!r}"
            ) from None
        gazetteer[normalize_surface(surface)] = etype
    return gazetteer


class ExternalTagger:
    """Adapter around a child process that tags text over a line protocol.

    Protocol: one ``{"text": str}`` JSON object per input line; one
    ``{"spans": [{"start": int, "end": int, "type": str}]}`` object per output
    line, in request order.
    """

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def __call__(self, text: str) -> list[EntitySpan]:
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._proc.stdin.write(json.dumps({"text": text}, ensure_ascii=False) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise EntityError("external tagger closed its output stream")
        payload = json.loads(line)
        spans = [
            EntitySpan(
                int(d["start"]),
                int(d["end"]),
                text[int(d["start"]) : int(d["end"])],
                EntityType(d["type"]),
            )
            for d in payload["spans"]
        ]
        for span in spans:
            span.check_against(text)
        return spans

    def close(self) -> None:
        if self._proc.stdin is not None:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self) -> "ExternalTagger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
