"""Compact encoder-decoder transformer with two output heads.

The encoder consumes knowledge + separator + hypothesis and feeds both a
token-classification head (entity mining over the knowledge segment) and,
through cross-attention, the decoder's language-modeling head. Written with
explicit attention math so the whole network runs in float64 for gradient
checks and stays bit-deterministic on CPU.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from ..entities import BIO_LABELS
from .config import RefinerConfig

NEG_INF = float("-inf")


def _attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None) -> Tensor:
    # q, k, v: [B, H, T, Dh]; mask: [B, 1, Tq, Tk] boolean, True = keep
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, NEG_INF)
    return torch.softmax(scores, dim=-1) @ v


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: Tensor, keyval: Tensor, mask: Tensor | None) -> Tensor:
        b, tq, d = query.shape
        tk = keyval.shape[1]
        dh = d // self.heads

        def split(x: Tensor, t: int) -> Tensor:
            return x.view(b, t, self.heads, dh).transpose(1, 2)

        out = _attention(
            split(self.q_proj(query), tq),
            split(self.k_proj(keyval), tk),
            split(self.v_proj(keyval), tk),
            mask,
        )
        out = out.transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(torch.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor, pad_mask: Tensor) -> Tensor:
        attn_mask = pad_mask[:, None, None, :]  # [B, 1, 1, S]
        h = self.norm1(x)
        x = x + self.self_attn(h, h, attn_mask)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(
        self, x: Tensor, memory: Tensor, causal: Tensor, mem_mask: Tensor
    ) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal)
        x = x + self.cross_attn(self.norm2(x), memory, mem_mask)
        return x + self.ffn(self.norm3(x))


class RefinerModel(nn.Module):
    """Encoder-decoder with an entity-mining head and a tied LM head."""

    def __init__(self, config: RefinerConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        d = config.hidden_dim
        self.token_emb = nn.Embedding(vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_positions, d)
        self.encoder = nn.ModuleList(
            EncoderLayer(d, config.num_heads, config.ffn_dim)
            for _ in range(config.num_layers)
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(d, config.num_heads, config.ffn_dim)
            for _ in range(config.num_layers)
        )
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.ner_head = nn.Linear(d, len(BIO_LABELS))
        # LM head shares the embedding matrix; only the bias is its own.
        self.lm_bias = nn.Parameter(torch.zeros(vocab_size))

    def _embed(self, ids: Tensor) -> Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.token_emb(ids) + self.pos_emb(positions)[None, :, :]

    def encode(self, src: Tensor, src_pad_mask: Tensor) -> Tensor:
        """src: [B, S] ids; src_pad_mask: [B, S] boolean, True = real token."""
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, src_pad_mask)
        return self.enc_norm(x)

    def ner_logits(self, memory: Tensor) -> Tensor:
        return self.ner_head(memory)

    def decode(self, tgt_in: Tensor, memory: Tensor, src_pad_mask: Tensor) -> Tensor:
        """Teacher-forced LM logits for each target position.

        tgt_in: [B, T] decoder input ids (begin marker + shifted target).
        """
        b, t = tgt_in.shape
        causal = torch.tril(
            torch.ones(t, t, dtype=torch.bool, device=tgt_in.device)
        )[None, None, :, :]
        mem_mask = src_pad_mask[:, None, None, :]
        x = self._embed(tgt_in)
        for layer in self.decoder:
            x = layer(x, memory, causal, mem_mask)
        x = self.dec_norm(x)
        return torch.nn.functional.linear(x, self.token_emb.weight, self.lm_bias)

    def forward(
        self, src: Tensor, src_pad_mask: Tensor, tgt_in: Tensor
    ) -> tuple[Tensor, Tensor]:
        memory = self.encode(src, src_pad_mask)
        return self.ner_logits(memory), self.decode(tgt_in, memory, src_pad_mask)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(config: RefinerConfig, vocab_size: int) -> RefinerModel:
    """Construct with deterministic initialization from the config seed."""
    generator_state = torch.get_rng_state()
    torch.manual_seed(config.seed)
    try:
        model = RefinerModel(config, vocab_size)
    finally:
        torch.set_rng_state(generator_state)
    return model
