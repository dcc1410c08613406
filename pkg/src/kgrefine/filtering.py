"""Faithfulness filtering: score utterances and route low scorers to a refiner.

Routing is strict: an utterance is refined exactly when its score falls
strictly below the threshold, so a threshold of 0 passes everything through
and a threshold of 1 refines everything scored below 1. Filtering applies at
inference only; it never touches training data.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .corpus import KGCExample, RefinementRecord, effective_knowledge

Scorer = Callable[[str, str], float]
RefineFn = Callable[[str, str], str]


class FilterError(ValueError):
    """Raised on out-of-range thresholds or scores."""


class Decision(Enum):
    REFINE = "REFINE"
    PASS = "PASS"


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 0.5
    scorer_id: str = "entity-precision"
    refiner_id: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise FilterError(f"tau must be in [0, 1], got {self.tau}")


def route(score: float, tau: float) -> Decision:
    """REFINE when ``score < tau`` (strict), PASS otherwise."""
    if not 0.0 <= score <= 1.0:
        raise FilterError(f"score must be in [0, 1], got {score}")
    if not 0.0 <= tau <= 1.0:
        raise FilterError(f"tau must be in [0, 1], got {tau}")
    return Decision.REFINE if score < tau else Decision.PASS


@dataclass(frozen=True)
class PipelineFailure:
    example_id: str
    stage: str  # "score" or "refine"
    message: str


@dataclass
class PipelineResult:
    records: list[RefinementRecord] = field(default_factory=list)
    failures: list[PipelineFailure] = field(default_factory=list)


def run_pipeline(
    corpus: Sequence[KGCExample],
    scorer: Scorer,
    refine_fn: RefineFn,
    tau: float,
) -> PipelineResult:
    """Score every example and refine the ones routed below the threshold.

    Records come back in input order. Scorer and refiner exceptions degrade
    to per-example failure entries rather than aborting the batch; the
    refiner is called exactly once per REFINE decision and never otherwise.
    """
    if not 0.0 <= tau <= 1.0:
        raise FilterError(f"tau must be in [0, 1], got {tau}")
    result = PipelineResult()
    for ex in corpus:
        knowledge = effective_knowledge(ex)
        try:
            score = float(scorer(knowledge, ex.model_utterance))
            decision = route(score, tau)
        except Exception as err:  # noqa: BLE001 - degrade per record
            result.failures.append(
                PipelineFailure(ex.example_id, "score", str(err))
            )
            continue
        if decision is Decision.REFINE:
            try:
                refined = refine_fn(knowledge, ex.model_utterance)
            except Exception as err:  # noqa: BLE001
                result.failures.append(
                    PipelineFailure(ex.example_id, "refine", str(err))
                )
                continue
            record = RefinementRecord(
                example_id=ex.example_id,
                original=ex.model_utterance,
                faithfulness_score=score,
                was_refined=True,
                refined=refined,
                final=refined,
            )
        else:
            record = RefinementRecord(
                example_id=ex.example_id,
                original=ex.model_utterance,
                faithfulness_score=score,
                was_refined=False,
                refined=None,
                final=ex.model_utterance,
            )
        result.records.append(record)
    return result


class ExternalScorer:
    """Adapter around a child process scoring over a line protocol.

    Protocol: one ``{"knowledge": str, "utterance": str}`` JSON object per
    input line; one ``{"score": float}`` object per output line. The wrapped
    model must emit scores already mapped into [0, 1].
    """

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def __call__(self, knowledge: str, utterance: str) -> float:
        assert self._proc.stdin is not None and self._proc.stdout is not None
        payload = {"knowledge": knowledge, "utterance": utterance}
        self._proc.stdin.write(json.dumps(payload, ensure_ascii=False) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise FilterError("external scorer closed its output stream")
        score = float(json.loads(line)["score"])
        if not 0.0 <= score <= 1.0:
            raise FilterError(f"external scorer emitted {score}, outside [0, 1]")
        return score

    def close(self) -> None:
        if self._proc.stdin is not None:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
