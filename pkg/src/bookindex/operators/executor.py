"""Run a :class:`QueryPlan` over a :class:`BookIndex`."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from bookindex.errors import BookIndexError, GatewayError, PlanValidationError, UnknownEntity
from bookindex.gateway import ModelGateway
from bookindex.index import BookIndex
from bookindex.operators import formulators, reasoners, selectors, synthesizers
from bookindex.operators.reasoners import RetrievalSet, ScoredNode
from bookindex.operators.synthesizers import SubAnswer
from bookindex.planner import Operation, OperatorCall, QueryCategory, QueryPlan, validate_plan

logger = logging.getLogger(__name__)

MAP_CHUNK = 8


@dataclass(frozen=True)
class ExecConfig:
    theta_link: float = formulators.THETA_LINK
    damping: float = reasoners.DAMPING
    tol: float = reasoners.TOLERANCE
    max_iter: int = reasoners.MAX_ITER
    text_cap: int = reasoners.TEXT_CAP
    parallel: bool = False
    timings: bool = True
    clock: Callable[[], float] = time.perf_counter


@dataclass
class StepRecord:
    operator: str
    input_size: int
    output_size: int
    duration_ms: float | None = None
    tokens: int | None = None
    scope: str = ""
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "operator": self.operator,
            "scope": self.scope,
            "input_size": self.input_size,
            "output_size": self.output_size,
            "duration_ms": self.duration_ms,
            "tokens": self.tokens,
            "note": self.note,
        }


@dataclass
class Trace:
    category: str
    steps: list[StepRecord] = field(default_factory=list)
    retrievals: list[dict[str, Any]] = field(default_factory=list)
    total_tokens: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "steps": [s.to_dict() for s in self.steps],
            "retrievals": list(self.retrievals),
            "total_tokens": self.total_tokens,
        }


@dataclass
class ExecutionResult:
    answer: str
    retrieval: RetrievalSet
    trace: Trace
    sub_answers: list[SubAnswer] = field(default_factory=list)

    def __iter__(self) -> Iterator[Any]:
        return iter((self.answer, self.retrieval, self.trace))

    def to_dict(self) -> dict[str, Any]:
        return {
            "answer": self.answer,
            "retrieved": [
                {"node_id": n.node_id, "s_graph": n.s_graph, "s_text": n.s_text} for n in self.retrieval.nodes
            ],
            "sub_answers": [s.to_dict() for s in self.sub_answers],
            "trace": self.trace.to_dict(),
        }


class _Run:
    """Per-query state: records steps and measures time and tokens around each."""

    def __init__(self, index: BookIndex, gateway: ModelGateway, cfg: ExecConfig, category: str):
        self.index = index
        self.gateway = gateway
        self.cfg = cfg
        self.trace = Trace(category=category)

    def step(self, operator: str, input_size: int, scope: str, fn: Callable[[], Any], size: Callable[[Any], int] = len):
        t0 = self.cfg.clock()
        tok0 = self.gateway.usage.total
        rec = StepRecord(operator, input_size, 0, scope=scope)
        self.trace.steps.append(rec)
        try:
            out = fn()
        finally:
            if self.cfg.timings:
                rec.duration_ms = round((self.cfg.clock() - t0) * 1000.0, 3)
            rec.tokens = self.gateway.usage.total - tok0
        rec.output_size = size(out)
        return out

    # single-hop retrieval (also each multi-hop sub-plan)

    def retrieve(self, steps: list[OperatorCall], question: str, scope: str) -> RetrievalSet:
        index = self.index
        all_nodes = [n.id for n in index.tree.content_nodes()]
        extract, select, parallel, _sky = steps

        mentions = extract.params.get("mentions")
        entity_ids = self.step(
            "Extract",
            len(mentions or []),
            scope,
            lambda: formulators.extract_entities(question, index, self.gateway, self.cfg.theta_link, mentions),
        )

        depth = int(select.params.get("depth", 1))
        selected: list[str] | None = None
        if select.operator == "Select_by_Entity" and entity_ids:
            try:
                selected = self.step(
                    "Select_by_Entity", len(all_nodes), scope, lambda: selectors.select_by_entity(index, entity_ids, depth)
                )
            except UnknownEntity as exc:
                self.trace.steps[-1].note = f"failed: {exc}"
        if selected is None:
            note = "" if select.operator == "Select_by_Section" else "fallback: no linked entity"
            selected = self.step(
                "Select_by_Section",
                len(all_nodes),
                scope,
                lambda: selectors.select_by_section(index, question, self.gateway, depth),
            )
            self.trace.steps[-1].note = note

        s_graph: dict[str, float] = {}
        s_text: dict[str, float] = {}
        if selected:
            query = next((c.params.get("query") for c in parallel.children if c.operator == "Text_Reasoning"), question)

            def graph():
                return reasoners.graph_reasoning(
                    index, entity_ids, selected, self.cfg.damping, self.cfg.tol, self.cfg.max_iter
                )

            def text():
                return reasoners.text_reasoning(index, query, selected, self.gateway, self.cfg.text_cap)

            if self.cfg.parallel:
                def both():
                    with ThreadPoolExecutor(max_workers=2) as pool:
                        fg, ft = pool.submit(graph), pool.submit(text)
                        return fg.result(), ft.result()

                s_graph, s_text = self.step("Parallel", len(selected), scope, both, size=lambda r: len(r[0]))
            else:
                s_graph = self.step("Graph_Reasoning", len(selected), scope, graph)
                s_text = self.step("Text_Reasoning", len(selected), scope, text)

        points = [ScoredNode(nid, s_graph[nid], s_text[nid]) for nid in selected]
        result = self.step("Skyline_Ranker", len(points), scope, lambda: reasoners.skyline(points), size=lambda r: len(r.nodes))
        sizes = {
            "question": question,
            "scope": scope,
            "n_total": len(all_nodes),
            "n_selected": len(selected),
            "n_retrieved": len(result.nodes),
        }
        result.trace.append(sizes)
        self.trace.retrievals.append(sizes)
        return result


def _single_hop(run: _Run, plan: QueryPlan) -> ExecutionResult:
    retrieval = run.retrieve(plan.steps[:-1], plan.query, "")
    ids = retrieval.ids
    answer = run.step(
        "Reduce",
        len(ids),
        "",
        lambda: synthesizers.reduce_synthesize(plan.query, ids, run.gateway, run.index),
        size=lambda a: 1,
    )
    return ExecutionResult(answer, retrieval, run.trace)


def _multi_hop(run: _Run, plan: QueryPlan) -> ExecutionResult:
    decomposed = plan.steps[0].params.get("sub_questions", [])
    run.trace.steps.append(StepRecord("Decompose", 1, len(decomposed), 0.0 if run.cfg.timings else None, 0, note="planned"))
    subplans = [s for s in plan.steps if s.operator == "SubPlan"]
    per_question: list[tuple[str, RetrievalSet | None, str]] = []
    for i, sub in enumerate(subplans):
        question = sub.params["question"]
        try:
            per_question.append((question, run.retrieve(sub.children, question, f"sub[{i}]"), ""))
        except (BookIndexError, GatewayError, ValueError) as exc:
            logger.warning("sub-plan %d (%r) failed: %s", i, question, exc)
            run.trace.steps.append(StepRecord("SubPlan", 0, 0, scope=f"sub[{i}]", note=f"failed: {exc}"))
            per_question.append((question, None, str(exc)))

    ok = [(q, r.ids) for q, r, _ in per_question if r is not None]
    mapped = iter(run.step("Map", len(ok), "", lambda: synthesizers.map_synthesize(ok, run.index, run.gateway)))
    subs: list[SubAnswer] = []
    for question, r, err in per_question:
        subs.append(next(mapped) if r is not None else SubAnswer(question, err, [], failed=True))

    instruction = plan.steps[-1].params.get("instruction")
    answer = run.step(
        "Reduce",
        len(subs),
        "",
        lambda: synthesizers.reduce_synthesize(plan.query, subs, run.gateway, run.index, instruction=instruction),
        size=lambda a: 1,
    )
    merged: dict[str, ScoredNode] = {}
    for _, r, _ in per_question:
        for n in r.nodes if r is not None else []:
            merged.setdefault(n.node_id, n)
    retrieval = RetrievalSet(nodes=list(merged.values()), trace=list(run.trace.retrievals))
    return ExecutionResult(answer, retrieval, run.trace, subs)


def _global(run: _Run, plan: QueryPlan) -> ExecutionResult:
    tree = run.index.tree
    all_nodes = [n.id for n in tree.content_nodes()]
    nodes = list(all_nodes)
    for st in plan.steps[:-2]:
        p = st.params
        current = nodes
        if st.operator == "Filter_Modal":
            depth = p.get("depth")
            fn = lambda current=current, p=p, depth=depth: selectors.filter_modal(tree, current, p["modal_type"], depth)
        elif p.get("kind") == "page":
            rng = selectors.PageRange(int(p["start"]), int(p["end"]))
            fn = lambda current=current, rng=rng: selectors.filter_range(tree, current, rng)
        else:
            rng = selectors.SectionRange(str(p["section"]))
            fn = lambda current=current, rng=rng: selectors.filter_range(tree, current, rng)
        nodes = run.step(st.operator, len(current), "", fn)

    operation = Operation(plan.steps[-1].params.get("operation") or Operation.SUMMARIZE)
    subs: list[SubAnswer] = []
    if operation in (Operation.COUNT, Operation.LIST):
        run.trace.steps.append(StepRecord("Map", len(nodes), len(nodes), 0.0 if run.cfg.timings else None, 0, note="pass-through"))
        parts: list = list(nodes)
    else:
        chunks = [(plan.query, nodes[i : i + MAP_CHUNK]) for i in range(0, len(nodes), MAP_CHUNK)]
        subs = run.step("Map", len(nodes), "", lambda: synthesizers.map_synthesize(chunks, run.index, run.gateway))
        parts = subs
    answer = run.step(
        "Reduce",
        len(parts),
        "",
        lambda: synthesizers.reduce_synthesize(plan.query, parts, run.gateway, run.index, operation=operation),
        size=lambda a: 1,
    )
    sizes = {"question": plan.query, "scope": "", "n_total": len(all_nodes), "n_selected": len(nodes), "n_retrieved": len(nodes)}
    run.trace.retrievals.append(sizes)
    retrieval = RetrievalSet(nodes=[ScoredNode(n) for n in nodes], trace=[sizes])
    return ExecutionResult(answer, retrieval, run.trace, subs)


def execute(
    plan: QueryPlan, index: BookIndex, gateway: ModelGateway, cfg: ExecConfig | None = None
) -> ExecutionResult:
    """Run the plan's operators in template order and collect a step trace.

    Unpacks as ``answer, retrieval, trace``.
    """
    cfg = cfg or ExecConfig()
    validate_plan(plan)
    run = _Run(index, gateway, cfg, plan.category.value)
    tok0 = gateway.usage.total
    if plan.category is QueryCategory.SINGLE_HOP:
        result = _single_hop(run, plan)
    elif plan.category is QueryCategory.MULTI_HOP:
        result = _multi_hop(run, plan)
    elif plan.category is QueryCategory.GLOBAL:
        result = _global(run, plan)
    else:  # pragma: no cover
        raise PlanValidationError(f"unknown category {plan.category}")
    run.trace.total_tokens = gateway.usage.total - tok0
    return result

