"""Lenient parsing of JSON embedded in model replies."""

from __future__ import annotations

import json
import re
from typing import Any

from bookindex.errors import MalformedVerdict

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_json_reply(text: str) -> Any:
    """Return the first JSON value found in ``text``.

    Accepts bare JSON, fenced ```json blocks, and JSON surrounded by chatter.
    """
    if text is None or not text.strip():
        raise MalformedVerdict("empty model reply")
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    decoder = json.JSONDecoder()
    for cand in candidates:
        cand = cand.strip()
        try:
            return json.loads(cand)
        except json.JSONDecodeError:
            pass
        for i, ch in enumerate(cand):
            if ch in "[{":
                try:
                    value, _ = decoder.raw_decode(cand, i)
                    return value
                except json.JSONDecodeError:
                    continue
    raise MalformedVerdict(f"no JSON found in reply: {text[:80]!r}")
