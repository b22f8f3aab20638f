"""Deterministic offline backends.

``MockLLM`` answers from a script table keyed ``"<template>:<key>"`` (the key
is the template's salient slot, e.g. the query for ``classify``). A scripted
value of ``"!error"`` makes the call fail with :class:`GatewayError`. Prompts
without a script entry fall through to a small rule-based responder per
template so that any document can be indexed and queried offline; the rules
are crude on purpose and exist only to keep the pipeline runnable.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from bookindex.errors import GatewayError
from bookindex.gateway.base import ModelGateway, RetryPolicy
from bookindex.gateway.prompts import Prompt
from bookindex.textutil import jaccard, match_key, word_tokens

ERROR_MARKER = "!error"


class HashingEmbedder:
    """Feature-hashed bag of words, L2-normalised."""

    def __init__(self, dimension: int = 64):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
        return h % self.dimension, 1.0 if (h >> 40) & 1 else -1.0

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        tokens = word_tokens(text) or [text]
        for tok in tokens:
            idx, sign = self._bucket(tok)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # colliding tokens cancelled out; fall back to the whole string
            idx, sign = self._bucket("\x00" + text)
            vec[idx] = sign
            norm = 1.0
        return vec / norm


class JaccardReranker:
    """Score = |q ∩ c| / |q ∪ c| over lowercase word tokens."""

    def rerank(self, query: str, candidates: Sequence[str]) -> list[float]:
        return [jaccard(query, c) for c in candidates]


_ENTITY_RENDER = re.compile(r"^(.+?) \(([A-Z][A-Z_]*)\): (.*)$", re.S)


class EntityAwareReranker:
    """Jaccard overlap, with a special case for pairs of entity renders.

    Plain text is scored exactly like :class:`JaccardReranker`. When query and
    candidate both look like entity renders (``"name (TYPE): description"``)
    the score leans on the names, so two entities lifted from the same
    sentence do not look like duplicates, and is lifted by a floor that keeps
    unrelated candidates on a flat run of near-equal scores.
    """

    def __init__(self, floor: float = 0.25, name_weight: float = 0.75):
        if not 0.0 <= floor < 1.0 or not 0.0 <= name_weight <= 1.0:
            raise ValueError("floor must lie in [0, 1) and name_weight in [0, 1]")
        self.floor = floor
        self.name_weight = name_weight

    def _score(self, query: str, cand: str) -> float:
        mq, mc = _ENTITY_RENDER.match(query), _ENTITY_RENDER.match(cand)
        if mq and mc:
            names = 1.0 if match_key(mq.group(1)) == match_key(mc.group(1)) else jaccard(mq.group(1), mc.group(1))
            raw = self.name_weight * names + (1.0 - self.name_weight) * jaccard(mq.group(3), mc.group(3))
            return self.floor + (1.0 - self.floor) * raw
        return jaccard(query, cand)

    def rerank(self, query: str, candidates: Sequence[str]) -> list[float]:
        return [self._score(query, c) for c in candidates]


def _json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


_STOP_CAPS = {
    "what", "which", "who", "whom", "whose", "when", "where", "why", "how", "is", "are", "the", "a", "an",
    "in", "on", "of", "for", "to", "and", "or", "does", "do", "did", "can", "according", "this", "that",
    "these", "those", "it", "its", "there", "we", "our", "they", "from", "by", "with", "as", "at", "if",
}
_CAP_SPAN = re.compile(r"\b([A-Z][\w\-]*(?:\s+[A-Z][\w\-]*)*)")
_QUOTED = re.compile(r"[\"“']([^\"”']{2,80})[\"”']")
_SENTENCE = re.compile(r"(?<=[.!?])\s+")


def _capitalised_spans(text: str) -> list[str]:
    found: list[str] = []
    for m in _QUOTED.finditer(text):
        found.append(m.group(1).strip())
    for m in _CAP_SPAN.finditer(text):
        words = m.group(1).split()
        while words and words[0].lower() in _STOP_CAPS:
            words = words[1:]
        span = " ".join(words)
        if len(span) >= 2:
            found.append(span)
    out: list[str] = []
    seen: set[str] = set()
    for f in found:
        k = match_key(f)
        if k not in seen:
            seen.add(k)
            out.append(f)
    return out


class MockLLM:
    """Scripted text model; also serves as the mock VLM."""

    def __init__(self, script: Mapping[str, str] | None = None):
        self.script: dict[str, str] = dict(script or {})
        self.calls: list[Prompt] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockLLM":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _lookup(self, key: str) -> str | None:
        value = self.script.get(key)
        if value == ERROR_MARKER:
            raise GatewayError(f"scripted failure for {key!r}")
        return value

    def complete(self, prompt: Prompt) -> str:
        self.calls.append(prompt)
        if prompt.name:
            scripted = self._lookup(f"{prompt.name}:{prompt.key}")
            if scripted is not None:
                return scripted
            handler = getattr(self, f"_default_{prompt.name}", None)
            if handler is not None:
                return handler(prompt)
        scripted = self._lookup(prompt.text)
        if scripted is not None:
            return scripted
        raise GatewayError(f"mock has no response for prompt {prompt.name or prompt.text[:40]!r}")

    def complete_vision(self, prompt: Prompt, image: bytes) -> str:
        return self.complete(prompt)

    # fallback responders, one per template

    def _default_classify(self, p: Prompt) -> str:
        q = str(p.slots.get("query", "")).lower()
        if re.search(r"\bhow many\b|\bcount\b|\bnumber of\b|\blist (all|the|every)\b|\bsummari[sz]e\b", q):
            cat = "global"
        elif re.search(r"\bcompare\b|\bdiffer|\bgreater\b|\blarger\b|\bsmaller\b|\bmore than\b|\bless than\b|\bboth\b|\band what\b", q):
            cat = "multi-hop"
        else:
            cat = "single-hop"
        return _json({"category": cat})

    def _default_decompose(self, p: Prompt) -> str:
        q = str(p.slots.get("query", "")).strip()
        parts = [s.strip(" ,?") for s in re.split(r",? and (?=what|which|who|how|when|where)", q, flags=re.I)]
        parts = [s for s in parts if s]
        subs = [{"question": s + "?", "type": "retrieval"} for s in parts] or [{"question": q, "type": "retrieval"}]
        if len(subs) > 1:
            subs.append({"question": f"Combine the findings to answer: {q}", "type": "synthesis"})
        return _json({"sub_questions": subs})

    def _default_filter_spec(self, p: Prompt) -> str:
        q = str(p.slots.get("query", ""))
        ql = q.lower()
        filters: list[dict] = []
        m = re.search(r"pages?\s+(\d+)\s*(?:-|to|through|and)\s*(?:page\s+)?(\d+)", ql)
        if m:
            filters.append({"filter_type": "page", "filter_value": f"{m.group(1)}-{m.group(2)}"})
        elif m := re.search(r"\bfirst\s+(\d+)\s+pages\b", ql):
            filters.append({"filter_type": "page", "filter_value": f"1-{m.group(1)}"})
        elif m := re.search(r"\bpage\s+(\d+)", ql):
            filters.append({"filter_type": "page", "filter_value": m.group(1)})
        m = re.search(r"\b(?:section|chapter)\s+[\"'“]?([^\"'”?,]+?)[\"'”]?(?:[?,]|$)", q, flags=re.I)
        if m and not re.match(r"(are|is|in|of)\b", m.group(1).strip(), flags=re.I):
            filters.append({"filter_type": "section", "filter_value": m.group(1).strip()})
        if re.search(r"\b(figure|image|picture|plot|chart|photo)s?\b", ql):
            filters.append({"filter_type": "image", "filter_value": None})
        elif re.search(r"\btables?\b", ql):
            filters.append({"filter_type": "table", "filter_value": None})
        if not filters:
            filters.append({"filter_type": "section", "filter_value": None})
        if re.search(r"\bhow many\b|\bcount\b|\bnumber of\b", ql):
            op = "COUNT"
        elif re.search(r"\blist\b|\bwhich\b|\bwhat are\b|\benumerate\b", ql):
            op = "LIST"
        elif re.search(r"\bsummar", ql):
            op = "SUMMARIZE"
        else:
            op = "ANALYZE"
        return _json({"filters": filters, "operation": op})

    def _default_query_entities(self, p: Prompt) -> str:
        spans = _capitalised_spans(str(p.slots.get("query", "")))
        return _json({"entities": [{"entity_name": s, "entity_type": "CONCEPT"} for s in spans]})

    def _default_select_sections(self, p: Prompt) -> str:
        titles = [ln[2:] for ln in str(p.slots.get("sections", "")).splitlines() if ln.startswith("- ")]
        if not titles:
            return _json({"sections": []})
        q = str(p.slots.get("query", ""))
        scored = [(jaccard(q, t), -i, t) for i, t in enumerate(titles)]
        best = max(scored)
        return _json({"sections": [best[2]]})

    def _default_section_filter(self, p: Prompt) -> str:
        candidates = [json.loads(ln) for ln in str(p.slots.get("candidates", "")).splitlines() if ln.strip()]
        sizes = sorted({c.get("font_size") for c in candidates if c.get("font_size") is not None}, reverse=True)
        verdicts = []
        for c in candidates:
            scripted = self._lookup(f"section_filter:{c['block_id']}")
            if scripted is not None:
                level = None if scripted.strip().lower() in ("null", "none", "text") else int(scripted)
            else:
                fs = c.get("font_size")
                level = sizes.index(fs) + 1 if fs is not None else 1
            verdicts.append({"block_id": c["block_id"], "level": level, "type": "Section" if level else "Text"})
        return _json(verdicts)

    def _default_extract_text(self, p: Prompt) -> str:
        content = str(p.slots.get("content", ""))
        entities: list[dict] = []
        relations: list[dict] = []
        seen: set[str] = set()
        for sentence in _SENTENCE.split(content):
            names = []
            for span in _capitalised_spans(sentence):
                k = match_key(span)
                names.append(span)
                if k not in seen:
                    seen.add(k)
                    entities.append({"name": span, "type": "CONCEPT", "description": sentence.strip()[:200]})
            for a, b in zip(names, names[1:]):
                if match_key(a) != match_key(b):
                    relations.append({"source": a, "target": b, "description": sentence.strip()[:200]})
        return _json({"entities": entities, "relations": relations})

    def _default_extract_vision(self, p: Prompt) -> str:
        caption = str(p.slots.get("caption", "")).strip()
        if not caption:
            return _json({"entities": [], "relations": []})
        return _json({"entities": [{"name": caption[:80], "type": "FIGURE", "description": caption}], "relations": []})

    def _default_er_adjudicate(self, p: Prompt) -> str:
        new_name = str(p.slots.get("new_name", ""))
        best_id, best = -1, 0.5
        for ln in str(p.slots.get("candidates", "")).splitlines():
            if not ln.strip():
                continue
            cand = json.loads(ln)
            score = 1.0 if match_key(cand["name"]) == match_key(new_name) else jaccard(cand["name"], new_name)
            if score >= best and (best_id == -1 or score > best):
                best_id, best = cand["id"], score
        return _json({"select_id": best_id, "explanation": "name overlap" if best_id != -1 else "no close name"})

    def _default_map(self, p: Prompt) -> str:
        question = str(p.slots.get("question", ""))
        evidence = [ln for ln in str(p.slots.get("evidence", "")).splitlines() if ln.strip()]
        if not evidence:
            return "No evidence found."
        best = max(evidence, key=lambda ln: (jaccard(question, ln), -evidence.index(ln)))
        return best.split("] ", 1)[-1][:300]

    def _default_reduce(self, p: Prompt) -> str:
        parts = [ln.strip() for ln in str(p.slots.get("parts", "")).splitlines() if ln.strip()]
        body = "; ".join(ln.split("] ", 1)[-1] for ln in parts)[:600]
        return f"Answer: {body}" if body else "Answer: not found in the document."

    def _default_answer_extract(self, p: Prompt) -> str:
        raw = str(p.slots.get("raw", "")).strip()
        raw = re.sub(r"^(the )?(final )?answer( is)?\s*[:\-]?\s*", "", raw, flags=re.I)
        first = _SENTENCE.split(raw, maxsplit=1)[0] if raw else ""
        return first.rstrip(". ")


def mock_gateway(
    script: Mapping[str, str] | None = None,
    *,
    dimension: int = 64,
    reranker=None,
    embedder=None,
) -> ModelGateway:
    """Gateway wired entirely to deterministic in-process backends."""
    llm = MockLLM(script)
    return ModelGateway(
        llm=llm,
        vlm=llm,
        embedder=embedder or HashingEmbedder(dimension),
        reranker=reranker or EntityAwareReranker(),
        retry=RetryPolicy(attempts=3, base_delay=0.0),
    )
