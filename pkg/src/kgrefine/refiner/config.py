"""Refiner hyperparameters and decoding constraints."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding constraints: beam width, length window, n-gram blocking.

    ``top_k`` applies to sampling mode only; beam search ignores it.
    """

    beam_size: int = 5
    min_length: int = 32
    max_length: int = 512
    top_k: int = 50
    no_repeat_ngram: int = 2
    sampling: bool = False

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError("need 1 <= min_length <= max_length")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.no_repeat_ngram < 0:
            raise ConfigError("no_repeat_ngram must be >= 0")


@dataclass(frozen=True)
class RefinerConfig:
    """Model size, loss weights, and optimization settings."""

    vocab_size: int = 0  # 0 = build from corpus
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    ffn_dim: int = 128
    max_positions: int = 512
    lambda_ner: float = 0.5
    lambda_gen: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 8
    max_steps: int | None = None
    val_fraction: float = 0.0
    early_stopping_patience: int = 2
    seed: int = 13
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self) -> None:
        if self.lambda_ner < 0 or self.lambda_gen < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lambda_ner == 0 and self.lambda_gen == 0:
            raise ConfigError("loss weights must not both be 0")
        for name in ("num_layers", "num_heads", "hidden_dim", "ffn_dim",
                     "max_positions", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: Mapping) -> "RefinerConfig":
        payload = dict(d)
        decode = payload.pop("decode", {})
        if not isinstance(decode, DecodeConfig):
            decode = DecodeConfig(**decode)
        return RefinerConfig(decode=decode, **payload)
