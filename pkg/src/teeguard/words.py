"""Word segmentation and the keyword ground-truth rule shared across the pipeline."""

from __future__ import annotations

import enum
import re
from collections.abc import Iterable

_WORD_RUN = re.compile(r"[a-z0-9]+")


class Label(enum.Enum):
    SENSITIVE = "sensitive"
    BENIGN = "benign"


def split_words(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric run."""
    return _WORD_RUN.findall(text.lower())


def keyword_label(text: str, keywords: Iterable[str]) -> Label:
    """Ground-truth rule: sensitive iff any word of `text` is a keyword."""
    keyword_set = {k.lower() for k in keywords}
    if any(word in keyword_set for word in split_words(text)):
        return Label.SENSITIVE
    return Label.BENIGN
