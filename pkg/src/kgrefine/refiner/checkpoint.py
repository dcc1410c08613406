"""Checkpoint persistence and inference entry points.

A checkpoint is a directory: ``config.json``, ``vocab.txt`` (one token per
line), ``weights.pt`` with its content hash in ``weights.sha256``, and
``loss_log.csv``. Reload reproduces bit-identical forward outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .config import DecodeConfig, RefinerConfig
from .decoding import DecodeResult, decode
from .model import RefinerModel, build_model
from .training import EpochStats, TrainResult
from .vocab import Vocabulary


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: RefinerConfig
    vocab: Vocabulary
    model: RefinerModel
    history: list[EpochStats]

    @staticmethod
    def from_train_result(result: TrainResult) -> "Checkpoint":
        return Checkpoint(
            config=result.config,
            vocab=result.vocab,
            model=result.model,
            history=result.history,
        )


def save_checkpoint(ckpt: Checkpoint, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(
        json.dumps(ckpt.config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    ckpt.vocab.save(directory / "vocab.txt")
    weights_path = directory / "weights.pt"
    torch.save(ckpt.model.state_dict(), weights_path)
    digest = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    (directory / "weights.sha256").write_text(digest + "\n", encoding="utf-8")
    with open(directory / "loss_log.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_ner", "l_gen", "l_rem"])
        for stats in ckpt.history:
            writer.writerow(
                [stats.epoch, repr(stats.l_ner), repr(stats.l_gen), repr(stats.l_rem)]
            )


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    try:
        config = RefinerConfig.from_dict(
            json.loads((directory / "config.json").read_text(encoding="utf-8"))
        )
        vocab = Vocabulary.load(directory / "vocab.txt")
        weights_path = directory / "weights.pt"
        recorded = (directory / "weights.sha256").read_text(encoding="utf-8").strip()
    except OSError as err:
        raise CheckpointError(f"unreadable checkpoint at {directory}: {err}") from None
    actual = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    if actual != recorded:
        raise CheckpointError(
            f"weights hash mismatch in {directory}: {actual} != {recorded}"
        )
    model = build_model(config, len(vocab))
    model.load_state_dict(torch.load(weights_path, weights_only=True))
    model.eval()
    history: list[EpochStats] = []
    log_path = directory / "loss_log.csv"
    if log_path.exists():
        with open(log_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                history.append(
                    EpochStats(
                        int(row["epoch"]),
                        float(row["l_ner"]),
                        float(row["l_gen"]),
                        float(row["l_rem"]),
                        steps=0,
                    )
                )
    return Checkpoint(config=config, vocab=vocab, model=model, history=history)


def refine_encoder_ids(
    vocab: Vocabulary, knowledge: str, utterance: str, max_positions: int
) -> list[int]:
    """Inference-time encoder layout; mirrors the training-side truncation."""
    know_ids = vocab.encode(knowledge)
    utt_ids = vocab.encode(utterance)
    budget = max_positions - 1
    if len(know_ids) + len(utt_ids) > budget:
        utt_ids = utt_ids[: max(0, budget - len(know_ids))]
        know_ids = know_ids[: min(len(know_ids), budget)]
    return know_ids + [vocab.sep_id] + utt_ids


def refine_with_info(
    knowledge: str,
    utterance: str,
    checkpoint: Checkpoint,
    decode_cfg: DecodeConfig | None = None,
    seed: int = 0,
) -> DecodeResult:
    cfg = decode_cfg or checkpoint.config.decode
    encoder_ids = refine_encoder_ids(
        checkpoint.vocab, knowledge, utterance, checkpoint.config.max_positions
    )
    return decode(checkpoint.model, checkpoint.vocab, encoder_ids, cfg, seed)


def refine(
    knowledge: str,
    utterance: str,
    checkpoint: Checkpoint,
    decode_cfg: DecodeConfig | None = None,
    seed: int = 0,
) -> str:
    """Regenerate ``utterance`` against ``knowledge`` under the decode
    constraints. Falls back to the max-length truncation when the end marker
    is never produced (already flagged by the decoder)."""
    return refine_with_info(knowledge, utterance, checkpoint, decode_cfg, seed).text


def batch_refine(
    pairs: Sequence[tuple[str, str]],
    checkpoint: Checkpoint,
    decode_cfg: DecodeConfig | None = None,
) -> list[DecodeResult]:
    return [
        refine_with_info(knowledge, utterance, checkpoint, decode_cfg)
        for knowledge, utterance in pairs
    ]
