"""Training example assembly: encoder layout, BIO alignment, padding."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor

from ..corpus import KGCExample
from ..entities import BIO_LABEL_TO_ID, Tagger, to_bio, tokenize_with_spans
from .losses import IGNORE_LABEL
from .vocab import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class TrainingBatch:
    """One encoded training example.

    Encoder input is knowledge tokens, a separator, then the hypothesis
    tokens. BIO labels cover the knowledge positions only; everything else is
    ignored by the entity-mining loss. Decoder targets carry begin/end
    markers.
    """

    encoder_tokens: list[int]
    ner_labels: list[int]
    decoder_targets: list[int]
    segment_mask: list[bool]  # True on knowledge positions
    truncation_note: str | None = None

    def __post_init__(self) -> None:
        if len(self.encoder_tokens) != len(self.ner_labels):
            raise ValueError("ner_labels must align with encoder_tokens")
        if len(self.encoder_tokens) != len(self.segment_mask):
            raise ValueError("segment_mask must align with encoder_tokens")


def build_training_batch(
    ex: KGCExample,
    vocab: Vocabulary,
    tagger: Tagger,
    max_positions: int,
) -> TrainingBatch:
    """Encode one example for multi-task training.

    When the encoder input exceeds ``max_positions``, the hypothesis side is
    truncated first, then the knowledge tail, and the cut is noted.
    """
    know_tokens, know_spans = tokenize_with_spans(ex.knowledge)
    tagged = to_bio(know_tokens, know_spans, tagger(ex.knowledge))
    know_ids = [vocab.token_to_id(t) for t in know_tokens]
    know_labels = [BIO_LABEL_TO_ID[lab] for lab in tagged.labels]
    utt_ids = vocab.encode(ex.model_utterance)

    note = None
    budget = max_positions - 1  # separator always kept
    if len(know_ids) + len(utt_ids) > budget:
        utt_keep = max(0, budget - len(know_ids))
        know_keep = min(len(know_ids), budget)
        note = (
            f"encoder input truncated to {max_positions} positions "
            f"(utterance {len(utt_ids)}->{utt_keep}, "
            f"knowledge {len(know_ids)}->{know_keep})"
        )
        log.warning("%s: %s", ex.example_id, note)
        utt_ids = utt_ids[:utt_keep]
        know_ids = know_ids[:know_keep]
        know_labels = know_labels[:know_keep]

    encoder_tokens = know_ids + [vocab.sep_id] + utt_ids
    ner_labels = know_labels + [IGNORE_LABEL] * (1 + len(utt_ids))
    segment_mask = [True] * len(know_ids) + [False] * (1 + len(utt_ids))

    ref_ids = vocab.encode(ex.reference_utterance)
    if len(ref_ids) > max_positions - 2:
        ref_ids = ref_ids[: max_positions - 2]
    decoder_targets = [vocab.bos_id] + ref_ids + [vocab.eos_id]

    return TrainingBatch(
        encoder_tokens=encoder_tokens,
        ner_labels=ner_labels,
        decoder_targets=decoder_targets,
        segment_mask=segment_mask,
        truncation_note=note,
    )


@dataclass
class TensorBatch:
    src: Tensor            # [B, S] padded encoder ids
    src_pad_mask: Tensor   # [B, S] True on real tokens
    ner_labels: Tensor     # [B, S] BIO ids or IGNORE_LABEL
    tgt_in: Tensor         # [B, T] decoder input (BOS + targets[:-1])
    tgt_out: Tensor        # [B, T] prediction targets (targets[1:])


def collate(
    batches: Sequence[TrainingBatch], vocab: Vocabulary, dtype=None
) -> TensorBatch:
    pad = vocab.pad_id
    src_len = max(len(b.encoder_tokens) for b in batches)
    tgt_len = max(len(b.decoder_targets) for b in batches) - 1

    def padded(rows: list[list[int]], width: int, fill: int) -> Tensor:
        return torch.tensor(
            [row + [fill] * (width - len(row)) for row in rows], dtype=torch.long
        )

    src = padded([b.encoder_tokens for b in batches], src_len, pad)
    ner = padded([b.ner_labels for b in batches], src_len, IGNORE_LABEL)
    tgt_in = padded([b.decoder_targets[:-1] for b in batches], tgt_len, pad)
    tgt_out = padded([b.decoder_targets[1:] for b in batches], tgt_len, pad)
    return TensorBatch(
        src=src,
        src_pad_mask=src != pad,
        ner_labels=ner,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
    )
