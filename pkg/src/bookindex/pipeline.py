"""Plan-then-execute for one question."""

from __future__ import annotations

from bookindex.gateway import ModelGateway
from bookindex.index import BookIndex
from bookindex.operators import ExecConfig, ExecutionResult, execute
from bookindex.planner import DEFAULT_SECTION_DEPTH, QueryPlan, plan_query


def answer_question(
    question: str,
    index: BookIndex,
    gateway: ModelGateway,
    exec_cfg: ExecConfig | None = None,
    section_depth: int = DEFAULT_SECTION_DEPTH,
) -> tuple[QueryPlan, ExecutionResult]:
    plan = plan_query(question, gateway, section_depth)
    return plan, execute(plan, index, gateway, exec_cfg)
