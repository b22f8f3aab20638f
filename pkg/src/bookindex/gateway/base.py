"""The four model roles behind one object, with retries and token accounting."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Protocol, Sequence, Union

import numpy as np

from bookindex.errors import DimensionMismatch, GatewayError
from bookindex.gateway.prompts import Prompt

logger = logging.getLogger(__name__)

PromptLike = Union[str, Prompt]


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class TextModel(Protocol):
    def complete(self, prompt: Prompt) -> str | Completion: ...


class VisionModel(Protocol):
    def complete_vision(self, prompt: Prompt, image: bytes) -> str | Completion: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> Sequence[float]: ...


class Reranker(Protocol):
    def rerank(self, query: str, candidates: Sequence[str]) -> Sequence[float]: ...


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 0.5
    factor: float = 2.0

    def delays(self):
        for i in range(self.attempts - 1):
            yield self.base_delay * self.factor**i


@dataclass
class TokenUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def _as_prompt(prompt: PromptLike) -> Prompt:
    if isinstance(prompt, Prompt):
        return prompt
    return Prompt(name="", text=prompt)


def _rough_tokens(text: str) -> int:
    return len(text.split())


class ModelGateway:
    """LLM, VLM, embedder and reranker behind a single retrying facade.

    Backends are plain objects exposing ``complete``, ``complete_vision``,
    ``embed`` and ``rerank``; see :mod:`bookindex.gateway.mock` and
    :mod:`bookindex.gateway.http`. Token usage is counted here, using the
    backend's own numbers when it reports them and a whitespace token count
    otherwise.
    """

    def __init__(
        self,
        llm: TextModel,
        vlm: VisionModel | None,
        embedder: Embedder,
        reranker: Reranker,
        retry: RetryPolicy | None = None,
    ):
        self.llm = llm
        self.vlm = vlm
        self.embedder = embedder
        self.reranker = reranker
        self.retry = retry or RetryPolicy()
        self._lock = threading.Lock()
        self._usage = TokenUsage()

    def scoped(self) -> "ModelGateway":
        """Same backends, separate token counter (for per-task accounting under concurrency)."""
        return ModelGateway(self.llm, self.vlm, self.embedder, self.reranker, self.retry)

    @property
    def dimension(self) -> int:
        return int(self.embedder.dimension)

    @property
    def usage(self) -> TokenUsage:
        with self._lock:
            return TokenUsage(self._usage.calls, self._usage.prompt_tokens, self._usage.completion_tokens)

    def _record(self, prompt_text: str, result: str | Completion) -> str:
        if isinstance(result, Completion):
            text = result.text
            p = result.prompt_tokens if result.prompt_tokens is not None else _rough_tokens(prompt_text)
            c = result.completion_tokens if result.completion_tokens is not None else _rough_tokens(text)
        else:
            text = result
            p, c = _rough_tokens(prompt_text), _rough_tokens(text)
        with self._lock:
            self._usage.calls += 1
            self._usage.prompt_tokens += p
            self._usage.completion_tokens += c
        return text

    def _call(self, what: str, fn, *args):
        delays = list(self.retry.delays())
        last: Exception | None = None
        for attempt in range(self.retry.attempts):
            try:
                return fn(*args)
            except GatewayError as exc:
                last = exc
                if attempt < len(delays):
                    logger.warning("%s failed (attempt %d/%d): %s", what, attempt + 1, self.retry.attempts, exc)
                    if delays[attempt] > 0:
                        time.sleep(delays[attempt])
        raise GatewayError(f"{what} failed after {self.retry.attempts} attempts: {last}") from last

    def complete(self, prompt: PromptLike) -> str:
        p = _as_prompt(prompt)
        if not p.text.strip():
            raise ValueError("prompt must be non-empty")
        result = self._call(f"llm[{p.name or 'raw'}]", self.llm.complete, p)
        return self._record(p.text, result)

    def complete_vision(self, prompt: PromptLike, image: bytes) -> str:
        p = _as_prompt(prompt)
        if not p.text.strip():
            raise ValueError("prompt must be non-empty")
        if not image:
            raise ValueError("image must be non-empty bytes")
        if self.vlm is None:
            raise GatewayError("no vision model configured")
        result = self._call(f"vlm[{p.name or 'raw'}]", self.vlm.complete_vision, p, image)
        return self._record(p.text, result)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.asarray(self._call("embed", self.embedder.embed, text), dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(f"embedder returned shape {vec.shape}, expected ({self.dimension},)")
        with self._lock:
            self._usage.calls += 1
            self._usage.prompt_tokens += _rough_tokens(text)
        return vec

    def rerank(self, query: str, candidates: Sequence[str]) -> list[float]:
        if not candidates:
            raise ValueError("rerank needs at least one candidate")
        scores = [float(s) for s in self._call("rerank", self.reranker.rerank, query, list(candidates))]
        if len(scores) != len(candidates):
            raise GatewayError(f"reranker returned {len(scores)} scores for {len(candidates)} candidates")
        with self._lock:
            self._usage.calls += 1
            self._usage.prompt_tokens += _rough_tokens(query) + sum(_rough_tokens(c) for c in candidates)
        return scores
