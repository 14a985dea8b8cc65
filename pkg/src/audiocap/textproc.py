"""Caption normalization, vocabularies and token sequences.

Index layout is fixed: ``<pad>`` = 0, ``<sos>`` = 1, ``<eos>`` = 2,
``<unk>`` = 3, content words from 4 upward in first-occurrence order.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
RESERVED = (PAD, SOS, EOS, UNK)
PAD_ID, SOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_APOSTROPHES = re.compile(r"['‘’ʼ`]")
_NON_WORD = re.compile(r"[^a-z0-9\s]")
_CONTENT_WORD = re.compile(r"[a-z0-9]+")


class SequenceError(ValueError):
    """A token sequence is malformed or references ids outside the vocabulary."""


def normalize_and_tokenize(raw: str) -> list[str]:
    """Lowercase ``raw``, drop punctuation and split on whitespace.

    Apostrophes are deleted outright (``it's`` -> ``its``); every other
    character outside ``[a-z0-9]`` acts as a word separator.  Accented
    letters are folded to their ASCII base first.
    """
    text = unicodedata.normalize("NFKD", raw.lower())
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = _APOSTROPHES.sub("", text)
    text = _NON_WORD.sub(" ", text)
    return text.split()


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.words[:4]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        index = {}
        for i, w in enumerate(self.words):
            if w in index:
                raise ValueError(f"duplicate word {w!r}")
            if i >= 4 and not _CONTENT_WORD.fullmatch(w):
                raise ValueError(f"content word {w!r} is not normalized")
            index[w] = i
        object.__setattr__(self, "index", index)

    @classmethod
    def from_content_words(cls, content: Iterable[str]) -> "Vocabulary":
        seen = dict.fromkeys(content)
        return cls(RESERVED + tuple(seen))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @property
    def content_words(self) -> tuple[str, ...]:
        return self.words[4:]

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def sos_id(self) -> int:
        return SOS_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    def save(self, path) -> None:
        """One word per line, reserved block first, ``\\n`` line endings."""
        Path(path).write_bytes(("\n".join(self.words) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_bytes().decode("utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocabulary(captions: Iterable[Sequence[str]]) -> Vocabulary:
    return Vocabulary.from_content_words(w for caption in captions for w in caption)


def merge_vocabularies(a: Vocabulary, b: Vocabulary) -> Vocabulary:
    """Union of content words; ``a`` keeps its indices, ``b``'s new words are appended."""
    return Vocabulary.from_content_words(a.content_words + b.content_words)


def encode(words: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [SOS_ID] + [vocab.index.get(w, UNK_ID) for w in words] + [EOS_ID]


def check_sequence(ids: Sequence[int], vocab_size: int) -> None:
    if len(ids) < 2 or ids[0] != SOS_ID or ids[-1] != EOS_ID:
        raise SequenceError(f"sequence must be framed by <sos> ... <eos>: {list(ids)}")
    for t in ids[1:-1]:
        if t in (PAD_ID, SOS_ID, EOS_ID):
            raise SequenceError(f"special token {t} inside sequence {list(ids)}")
        if not 0 <= t < vocab_size:
            raise SequenceError(f"token id {t} outside vocabulary of size {vocab_size}")


def decode_to_words(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    check_sequence(ids, len(vocab))
    return [vocab.words[t] for t in ids[1:-1]]


def strip_special(ids: Sequence[int]) -> list[int]:
    """Interior of a framed sequence; tolerates a missing trailing ``<eos>``."""
    ids = list(ids)
    if ids and ids[0] == SOS_ID:
        ids = ids[1:]
    if ids and ids[-1] == EOS_ID:
        ids = ids[:-1]
    return ids
