"""Live backends speaking the common hosted chat-completion / embedding / rerank JSON protocol."""

from __future__ import annotations

import base64
from typing import Any, Sequence

import httpx

from bookindex.errors import GatewayError, GatewayTimeout
from bookindex.gateway.base import Completion, ModelGateway, RetryPolicy
from bookindex.gateway.prompts import Prompt


class _HttpClient:
    def __init__(self, url: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(f"{self.url}{path}", json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"{self.url}{path} timed out") from exc
        except httpx.HTTPError as exc:
            raise GatewayError(f"{self.url}{path}: {exc}") from exc
        except ValueError as exc:
            raise GatewayError(f"{self.url}{path}: response is not JSON") from exc


class HttpChatModel(_HttpClient):
    def _chat(self, content: Any) -> Completion:
        data = self._post(
            "/chat/completions",
            {"model": self.model, "messages": [{"role": "user", "content": content}], "temperature": 0},
        )
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("malformed chat completion response") from exc
        usage = data.get("usage") or {}
        return Completion(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))

    def complete(self, prompt: Prompt) -> Completion:
        return self._chat(prompt.text)

    def complete_vision(self, prompt: Prompt, image: bytes) -> Completion:
        url = "data:image/png;base64," + base64.b64encode(image).decode("ascii")
        return self._chat([{"type": "text", "text": prompt.text}, {"type": "image_url", "image_url": {"url": url}}])


class HttpEmbedder(_HttpClient):
    def __init__(self, url: str, model: str, dimension: int, api_key: str | None = None, timeout: float = 60.0):
        super().__init__(url, model, api_key, timeout)
        self.dimension = dimension

    def embed(self, text: str) -> list[float]:
        data = self._post("/embeddings", {"model": self.model, "input": text})
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("malformed embedding response") from exc


class HttpReranker(_HttpClient):
    def rerank(self, query: str, candidates: Sequence[str]) -> list[float]:
        data = self._post("/rerank", {"model": self.model, "query": query, "documents": list(candidates)})
        scores = [0.0] * len(candidates)
        try:
            for item in data["results"]:
                scores[int(item["index"])] = float(item["relevance_score"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError("malformed rerank response") from exc
        return scores


def http_gateway(cfg, retry: RetryPolicy | None = None) -> ModelGateway:
    """Build a live gateway from a :class:`bookindex.config.GatewayConfig`."""
    key = cfg.api_key
    llm = HttpChatModel(cfg.llm_url, cfg.llm_model, key, cfg.timeout)
    vlm = HttpChatModel(cfg.vlm_url or cfg.llm_url, cfg.vlm_model or cfg.llm_model, key, cfg.timeout)
    embedder = HttpEmbedder(cfg.embed_url or cfg.llm_url, cfg.embed_model, cfg.dimension, key, cfg.timeout)
    reranker = HttpReranker(cfg.rerank_url or cfg.llm_url, cfg.rerank_model, key, cfg.timeout)
    return ModelGateway(llm, vlm, embedder, reranker, retry=retry)
