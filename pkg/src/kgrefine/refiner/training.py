"""Deterministic multi-task training loop for the refiner."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import Sequence

import torch

from ..corpus import KGCExample, effective_knowledge
from ..entities import Tagger
from .batching import TensorBatch, TrainingBatch, build_training_batch, collate
from .config import RefinerConfig
from .losses import combined_loss, gen_loss, ner_loss
from .model import RefinerModel, build_model
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    l_ner: float
    l_gen: float
    l_rem: float
    steps: int


@dataclass
class TrainResult:
    config: RefinerConfig
    vocab: Vocabulary
    model: RefinerModel
    history: list[EpochStats]
    step_gen_losses: list[float]


def _epoch_value(
    cfg: RefinerConfig, ner_sum: float, ner_n: int, gen_sum: float, gen_n: int
) -> tuple[float, float, float]:
    l_ner = ner_sum / ner_n if ner_n else 0.0
    l_gen = gen_sum / gen_n if gen_n else 0.0
    return l_ner, l_gen, combined_loss(l_ner, l_gen, cfg.lambda_ner, cfg.lambda_gen)


def _eval_losses(
    model: RefinerModel,
    batches: Sequence[TrainingBatch],
    vocab: Vocabulary,
    cfg: RefinerConfig,
) -> tuple[float, float, float]:
    model.eval()
    ner_sum = gen_sum = 0.0
    ner_n = gen_n = 0
    with torch.no_grad():
        for start in range(0, len(batches), cfg.batch_size):
            tb = collate(batches[start : start + cfg.batch_size], vocab)
            ner_logits, lm_logits = model(tb.src, tb.src_pad_mask, tb.tgt_in)
            l_ner, n_ner = ner_loss(ner_logits, tb.ner_labels)
            l_gen, n_gen = gen_loss(lm_logits, tb.tgt_out, vocab.pad_id)
            ner_sum += float(l_ner) * n_ner
            ner_n += n_ner
            gen_sum += float(l_gen) * n_gen
            gen_n += n_gen
    model.train()
    return _epoch_value(cfg, ner_sum, ner_n, gen_sum, gen_n)


def train(
    corpus: Sequence[KGCExample],
    config: RefinerConfig,
    tagger: Tagger,
    val_corpus: Sequence[KGCExample] | None = None,
) -> TrainResult:
    """Train the refiner on (knowledge + hypothesis -> reference) pairs.

    Bit-deterministic for a fixed seed: single-threaded tensor math, seeded
    init and shuffling. Early stopping watches the held-out combined loss
    (training loss when no validation split exists) with the configured
    patience. Aborts on a non-finite loss.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _train_inner(corpus, config, tagger, val_corpus)
    finally:
        torch.set_num_threads(prev_threads)


def _train_inner(
    corpus: Sequence[KGCExample],
    config: RefinerConfig,
    tagger: Tagger,
    val_corpus: Sequence[KGCExample] | None,
) -> TrainResult:
    texts: list[str] = []
    for ex in list(corpus) + list(val_corpus or []):
        texts.extend(
            [effective_knowledge(ex), ex.model_utterance, ex.reference_utterance]
        )
    vocab = Vocabulary.build(texts)
    if config.vocab_size and config.vocab_size < len(vocab):
        raise ValueError(
            f"configured vocab_size {config.vocab_size} smaller than corpus "
            f"vocabulary {len(vocab)}"
        )

    def encode_all(examples: Sequence[KGCExample]) -> list[TrainingBatch]:
        out = []
        for ex in examples:
            enc = build_training_batch(
                KGCExample(
                    example_id=ex.example_id,
                    dialogue_history=ex.dialogue_history,
                    knowledge=effective_knowledge(ex),
                    persona=None,
                    reference_utterance=ex.reference_utterance,
                    model_utterance=ex.model_utterance,
                    dataset_tag=ex.dataset_tag,
                ),
                vocab,
                tagger,
                config.max_positions,
            )
            out.append(enc)
        return out

    train_examples = list(corpus)
    held_out: list[KGCExample] = list(val_corpus or [])
    if not held_out and config.val_fraction > 0.0:
        rng = random.Random(config.seed)
        shuffled = list(train_examples)
        rng.shuffle(shuffled)
        n_val = max(1, int(len(shuffled) * config.val_fraction))
        if n_val < len(shuffled):
            held_out = shuffled[:n_val]
            train_examples = shuffled[n_val:]

    train_batches = encode_all(train_examples)
    val_batches = encode_all(held_out) if held_out else None

    model = build_model(config, len(vocab))
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    shuffle_rng = random.Random(config.seed + 1)

    history: list[EpochStats] = []
    step_gen_losses: list[float] = []
    best_monitor = math.inf
    stale_epochs = 0
    global_step = 0
    stop = False

    for epoch in range(1, config.epochs + 1):
        order = list(range(len(train_batches)))
        shuffle_rng.shuffle(order)
        ner_sum = gen_sum = 0.0
        ner_n = gen_n = 0
        epoch_steps = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_batches[i] for i in order[start : start + config.batch_size]]
            tb: TensorBatch = collate(chunk, vocab)
            ner_logits, lm_logits = model(tb.src, tb.src_pad_mask, tb.tgt_in)
            l_ner, n_ner = ner_loss(ner_logits, tb.ner_labels)
            l_gen, n_gen = gen_loss(lm_logits, tb.tgt_out, vocab.pad_id)
            loss = combined_loss(l_ner, l_gen, config.lambda_ner, config.lambda_gen)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {global_step}: "
                    f"ner={float(l_ner)} gen={float(l_gen)}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            ner_sum += float(l_ner) * n_ner
            ner_n += n_ner
            gen_sum += float(l_gen) * n_gen
            gen_n += n_gen
            step_gen_losses.append(float(l_gen))
            global_step += 1
            epoch_steps += 1
            if config.max_steps is not None and global_step >= config.max_steps:
                stop = True
                break

        l_ner_e, l_gen_e, l_rem_e = _epoch_value(config, ner_sum, ner_n, gen_sum, gen_n)
        history.append(EpochStats(epoch, l_ner_e, l_gen_e, l_rem_e, epoch_steps))
        log.info(
            "epoch %d: l_ner=%.6f l_gen=%.6f l_rem=%.6f (%d steps)",
            epoch, l_ner_e, l_gen_e, l_rem_e, epoch_steps,
        )
        if stop:
            break

        monitor = (
            _eval_losses(model, val_batches, vocab, config)[2]
            if val_batches
            else l_rem_e
        )
        if monitor < best_monitor:
            best_monitor = monitor
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.early_stopping_patience:
                log.info("early stop after epoch %d (no improvement)", epoch)
                break

    return TrainResult(
        config=config,
        vocab=vocab,
        model=model,
        history=history,
        step_gen_losses=step_gen_losses,
    )
