from bookindex.gateway.base import Completion, ModelGateway, RetryPolicy, TokenUsage
from bookindex.gateway.mock import EntityAwareReranker, HashingEmbedder, JaccardReranker, MockLLM, mock_gateway
from bookindex.gateway.prompts import Prompt, PromptTemplate, get_template, render

__all__ = [
    "Completion",
    "HashingEmbedder",
    "EntityAwareReranker",
    "JaccardReranker",
    "MockLLM",
    "ModelGateway",
    "Prompt",
    "PromptTemplate",
    "RetryPolicy",
    "TokenUsage",
    "get_template",
    "mock_gateway",
    "render",
]
