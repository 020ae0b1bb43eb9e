"""Word-level toy tokenizer with dedicated task-identifier tokens."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

PAD, UNK, EOS = "<pad>", "<unk>", "<eos>"
VID = "[Vid]"
THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
TASK_TOKENS = {"recognition": "<recognition>", "reasoning": "<reasoning>"}

SPECIALS = (PAD, UNK, EOS, VID, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE,
            *TASK_TOKENS.values())

_SPLIT = re.compile(
    "|".join(re.escape(s) for s in sorted(SPECIALS, key=len, reverse=True))
    + r"|\w+(?:'\w+)?|[^\w\s]"
)


def split_words(text: str) -> list[str]:
    """Split on whitespace and punctuation, keeping special tokens whole."""
    return [w if w in SPECIALS else w.lower() for w in _SPLIT.findall(text)]


class Tokenizer:
    def __init__(self, vocab: Sequence[str]):
        if tuple(vocab[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(vocab)) != len(vocab):
            raise ValueError("duplicate vocabulary entries")
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Tokenizer":
        words = set()
        for t in texts:
            words.update(split_words(t))
        words -= set(SPECIALS)
        return cls([*SPECIALS, *sorted(words)])

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    def task_id(self, task: str) -> int:
        try:
            return self.index[TASK_TOKENS[task]]
        except KeyError:
            raise ValueError(f"unknown task identifier {task!r}") from None

    def encode(self, text: str) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(w, unk) for w in split_words(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.vocab[i] for i in ids)
