"""Corpus-built token vocabulary for the refiner.

Tokens come from the same whitespace/punctuation tokenizer the entity stack
uses, so BIO labels and encoder positions line up by construction.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from ..entities import tokenize_with_spans

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<s>", "</s>", "<sep>"
SPECIALS = (PAD, UNK, BOS, EOS, SEP)


class Vocabulary:
    def __init__(self, tokens: list[str]):
        if list(tokens[: len(SPECIALS)]) != list(SPECIALS):
            raise ValueError("vocabulary must start with the special tokens")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate token in vocabulary")

    @staticmethod
    def build(texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            tokens, _ = tokenize_with_spans(text)
            seen.update(tokens)
        return Vocabulary(list(SPECIALS) + sorted(seen))

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def id_to_token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, text: str) -> list[int]:
        tokens, _ = tokenize_with_spans(text)
        return [self.token_to_id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> str:
        specials = {self.pad_id, self.bos_id, self.eos_id, self.sep_id}
        return " ".join(self._tokens[i] for i in ids if i not in specials)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "\n".join(self._tokens) + "\n", encoding="utf-8"
        )

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return Vocabulary(lines)
