"""Small text helpers shared by the mock backends and the graph code."""

from __future__ import annotations

import re

_WORD = re.compile(r"\w+", re.UNICODE)
_SPACE = re.compile(r"\s+")


def word_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def normalize_name(name: str) -> str:
    """Trim and collapse internal whitespace, keeping display casing."""
    return _SPACE.sub(" ", name).strip()


def match_key(name: str) -> str:
    """Case-insensitive key used when comparing entity names."""
    return normalize_name(name).casefold()


def jaccard(a: str, b: str) -> float:
    sa, sb = set(word_tokens(a)), set(word_tokens(b))
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def truncate(text: str, budget: int) -> str:
    return text if len(text) <= budget else text[:budget]
