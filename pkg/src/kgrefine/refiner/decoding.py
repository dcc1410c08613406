"""Constrained decoding: beam search and top-k sampling.

Both modes enforce the length window and the no-repeat n-gram mask; beam
candidates are ranked by length-normalized log-probability. Decoding is
deterministic for a fixed model and config (sampling additionally takes a
seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import Tensor

from .config import DecodeConfig
from .model import NEG_INF, RefinerModel
from .vocab import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class DecodeResult:
    token_ids: list[int]  # generated ids, no begin/end markers
    text: str
    truncated: bool  # True when the end marker was never reached


def banned_next_tokens(prefix: list[int], n: int) -> set[int]:
    """Token ids that would complete an n-gram already present in ``prefix``."""
    if n < 1 or len(prefix) < n - 1:
        return set()
    context = tuple(prefix[len(prefix) - (n - 1) :])
    banned: set[int] = set()
    for i in range(len(prefix) - n + 1):
        if tuple(prefix[i : i + n - 1]) == context:
            banned.add(prefix[i + n - 1])
    return banned


def apply_no_repeat_ngram(prefix: list[int], next_scores: Tensor, n: int) -> Tensor:
    """Mask scores of tokens that would repeat an n-gram from the prefix.

    Returns a new tensor; prefixes shorter than n-1 pass through unchanged.
    """
    banned = banned_next_tokens(prefix, n)
    if not banned:
        return next_scores.clone()
    out = next_scores.clone()
    out[list(banned)] = NEG_INF
    return out


def _step_log_probs(
    model: RefinerModel,
    memory: Tensor,
    src_pad_mask: Tensor,
    prefixes: list[list[int]],
) -> Tensor:
    """Next-token log-probabilities for a batch of decoder prefixes."""
    tgt_in = torch.tensor(prefixes, dtype=torch.long)
    logits = model.decode(tgt_in, memory, src_pad_mask)
    return torch.log_softmax(logits[:, -1, :], dim=-1)


def _constrain(
    log_probs: Tensor,
    generated: list[int],
    cfg: DecodeConfig,
    eos_id: int,
    pad_id: int,
) -> Tensor:
    scores = apply_no_repeat_ngram(generated, log_probs, cfg.no_repeat_ngram)
    scores[pad_id] = NEG_INF
    if len(generated) < cfg.min_length:
        scores[eos_id] = NEG_INF
    return scores


@torch.no_grad()
def beam_search(
    model: RefinerModel,
    vocab: Vocabulary,
    encoder_ids: list[int],
    cfg: DecodeConfig,
) -> DecodeResult:
    model.eval()
    src = torch.tensor([encoder_ids], dtype=torch.long)
    src_pad_mask = src != vocab.pad_id
    memory_one = model.encode(src, src_pad_mask)

    # (sum log-prob, prefix with BOS) per live hypothesis
    beams: list[tuple[float, list[int]]] = [(0.0, [vocab.bos_id])]
    finished: list[tuple[float, list[int]]] = []

    for _ in range(cfg.max_length):
        memory = memory_one.expand(len(beams), -1, -1)
        mask = src_pad_mask.expand(len(beams), -1)
        log_probs = _step_log_probs(model, memory, mask, [p for _, p in beams])
        candidates: list[tuple[float, list[int]]] = []
        for row, (score, prefix) in enumerate(beams):
            generated = prefix[1:]
            scores = _constrain(
                log_probs[row], generated, cfg, vocab.eos_id, vocab.pad_id
            )
            top = torch.topk(scores, min(cfg.beam_size, scores.shape[0]))
            for value, token in zip(top.values.tolist(), top.indices.tolist()):
                if value == NEG_INF:
                    continue
                candidates.append((score + value, prefix + [token]))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for score, prefix in candidates:
            if prefix[-1] == vocab.eos_id:
                finished.append((score, prefix))
            else:
                beams.append((score, prefix))
            if len(beams) == cfg.beam_size:
                break
        if not beams or len(finished) >= cfg.beam_size:
            break

    def normalized(item: tuple[float, list[int]]) -> float:
        score, prefix = item
        return score / max(1, len(prefix) - 1)

    if finished:
        _, best = max(finished, key=normalized)
        generated = best[1:-1]
        truncated = False
    else:
        _, best = max(beams, key=normalized)
        generated = best[1 : 1 + cfg.max_length]
        truncated = True
        log.warning(
            "beam search hit max_length=%d without end marker", cfg.max_length
        )
    return DecodeResult(generated, vocab.decode(generated), truncated)


@torch.no_grad()
def sample_decode(
    model: RefinerModel,
    vocab: Vocabulary,
    encoder_ids: list[int],
    cfg: DecodeConfig,
    seed: int = 0,
) -> DecodeResult:
    """Top-k sampling under the same length and n-gram constraints."""
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    src = torch.tensor([encoder_ids], dtype=torch.long)
    src_pad_mask = src != vocab.pad_id
    memory = model.encode(src, src_pad_mask)
    prefix = [vocab.bos_id]
    truncated = True
    for _ in range(cfg.max_length):
        log_probs = _step_log_probs(model, memory, src_pad_mask, [prefix])[0]
        scores = _constrain(log_probs, prefix[1:], cfg, vocab.eos_id, vocab.pad_id)
        k = min(cfg.top_k, scores.shape[0])
        top = torch.topk(scores, k)
        probs = torch.softmax(top.values, dim=-1)
        pick = int(torch.multinomial(probs, 1, generator=generator).item())
        token = int(top.indices[pick].item())
        if token == vocab.eos_id:
            truncated = False
            break
        prefix.append(token)
    generated = prefix[1:]
    return DecodeResult(generated, vocab.decode(generated), truncated)


def decode(
    model: RefinerModel,
    vocab: Vocabulary,
    encoder_ids: list[int],
    cfg: DecodeConfig,
    seed: int = 0,
) -> DecodeResult:
    if cfg.sampling:
        return sample_decode(model, vocab, encoder_ids, cfg, seed)
    return beam_search(model, vocab, encoder_ids, cfg)
