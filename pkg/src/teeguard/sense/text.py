"""Transcription stub and tokenization for the trusted application's ML stage."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property

from ..driver import EncodedBlock
from ..words import split_words

UNKNOWN_INDEX = 0
UNKNOWN_WORD = "unk"  # reserved: never enters a vocabulary, so it maps back to index 0


class MissingPayload(ValueError):
    """Block carries no transcription payload."""


@dataclass(frozen=True)
class Vocab:
    """Word-to-index map with index 0 reserved for unknown words.

    Built deterministically: words ranked by descending corpus frequency,
    ties broken lexicographically.
    """

    index: dict[str, int]

    def __post_init__(self) -> None:
        values = sorted(self.index.values())
        if values != list(range(1, len(values) + 1)):
            raise ValueError("vocab indices must be exactly 1..V-1")
        if UNKNOWN_WORD in self.index:
            raise ValueError(f"{UNKNOWN_WORD!r} is reserved for index 0")

    @property
    def size(self) -> int:
        return len(self.index) + 1

    @cached_property
    def _reverse(self) -> tuple[str, ...]:
        ordered = [UNKNOWN_WORD] * self.size
        for word, i in self.index.items():
            ordered[i] = word
        return tuple(ordered)

    def word_for(self, idx: int) -> str:
        return self._reverse[idx]

    @classmethod
    def from_texts(cls, texts: Iterable[str], max_size: int | None = None) -> "Vocab":
        counts: dict[str, int] = {}
        for text in texts:
            for word in split_words(text):
                if word != UNKNOWN_WORD:
                    counts[word] = counts.get(word, 0) + 1
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        if max_size is not None:
            ranked = ranked[: max_size - 1]
        return cls({word: i + 1 for i, word in enumerate(ranked)})


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Lowercase, split on non-alphanumeric runs, map via vocab (unknown -> 0)."""
    return [vocab.index.get(word, UNKNOWN_INDEX) for word in split_words(text)]


def detokenize(tokens: Sequence[int], vocab: Vocab) -> str:
    return " ".join(vocab.word_for(t) for t in tokens)


@dataclass(frozen=True)
class Transcript:
    text: str
    tokens: tuple[int, ...]


def transcribe(block: EncodedBlock, vocab: Vocab) -> Transcript:
    """Deterministic ASR stand-in: the block's attached payload is the transcript."""
    if not block.attached_text:
        raise MissingPayload(f"block {block.sequence} has no transcription payload")
    return Transcript(block.attached_text, tuple(tokenize(block.attached_text, vocab)))
