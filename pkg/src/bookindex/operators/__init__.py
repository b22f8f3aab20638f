"""Operator library and the plan executor."""

from bookindex.operators.executor import ExecConfig, ExecutionResult, StepRecord, Trace, execute
from bookindex.operators.formulators import THETA_LINK, decompose, extract_entities, link_mentions
from bookindex.operators.reasoners import (
    RetrievalSet,
    ScoredNode,
    graph_reasoning,
    pareto_mask,
    personalized_pagerank,
    skyline,
    text_reasoning,
)
from bookindex.operators.selectors import (
    PageRange,
    SectionRange,
    filter_modal,
    filter_range,
    select_by_entity,
    select_by_section,
    target_section,
)
from bookindex.operators.synthesizers import SubAnswer, map_synthesize, reduce_synthesize

__all__ = [
    "THETA_LINK",
    "ExecConfig",
    "ExecutionResult",
    "PageRange",
    "RetrievalSet",
    "ScoredNode",
    "SectionRange",
    "StepRecord",
    "SubAnswer",
    "Trace",
    "decompose",
    "execute",
    "extract_entities",
    "filter_modal",
    "filter_range",
    "graph_reasoning",
    "link_mentions",
    "map_synthesize",
    "pareto_mask",
    "personalized_pagerank",
    "reduce_synthesize",
    "select_by_entity",
    "select_by_section",
    "skyline",
    "target_section",
    "text_reasoning",
]
