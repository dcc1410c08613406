"""Multi-task training losses: entity mining, generation, and their blend."""

from __future__ import annotations

import torch
from torch import Tensor

#: Label id marking positions excluded from the entity-mining loss.
IGNORE_LABEL = -100


class LossError(ValueError):
    pass


def ner_loss(ner_logits: Tensor, labels: Tensor) -> tuple[Tensor, int]:
    """Mean token-level cross-entropy over non-ignored label positions.

    Returns (loss, position_count); a batch with no labeled positions yields
    a zero loss with count 0 so callers can exclude it from weighted
    averages.
    """
    flat_logits = ner_logits.reshape(-1, ner_logits.shape[-1])
    flat_labels = labels.reshape(-1)
    mask = flat_labels != IGNORE_LABEL
    count = int(mask.sum().item())
    if count == 0:
        return flat_logits.sum() * 0.0, 0
    log_probs = torch.log_softmax(flat_logits[mask], dim=-1)
    picked = log_probs.gather(1, flat_labels[mask].unsqueeze(1)).squeeze(1)
    return -picked.mean(), count


def gen_loss(lm_logits: Tensor, targets: Tensor, pad_id: int) -> tuple[Tensor, int]:
    """Mean next-token cross-entropy over non-padding target positions.

    ``lm_logits[b, t]`` scores the token at ``targets[b, t]`` under teacher
    forcing. Raises on an effectively empty target.
    """
    flat_logits = lm_logits.reshape(-1, lm_logits.shape[-1])
    flat_targets = targets.reshape(-1)
    mask = flat_targets != pad_id
    count = int(mask.sum().item())
    if count == 0:
        raise LossError("generation loss over an empty target")
    log_probs = torch.log_softmax(flat_logits[mask], dim=-1)
    picked = log_probs.gather(1, flat_targets[mask].unsqueeze(1)).squeeze(1)
    return -picked.mean(), count


def combined_loss(l_ner, l_gen, lambda_ner: float, lambda_gen: float):
    """Weighted sum of the two task losses: exactly λ_ner·L_ner + λ_gen·L_gen."""
    return lambda_ner * l_ner + lambda_gen * l_gen


def sequence_log_prob(lm_logits: Tensor, targets: Tensor, pad_id: int) -> Tensor:
    """Sum of target log-probabilities per sequence (scoring path).

    Consistent with :func:`gen_loss`: the mean of ``-sequence_log_prob``
    over all non-pad positions equals the loss.
    """
    log_probs = torch.log_softmax(lm_logits, dim=-1)
    picked = log_probs.gather(2, targets.unsqueeze(2)).squeeze(2)
    mask = (targets != pad_id).to(picked.dtype)
    return (picked * mask).sum(dim=1)
