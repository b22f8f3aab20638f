"""Query classification and operator-plan construction.

Plans are flat lists of :class:`OperatorCall`. Two composite operators keep
the structure explicit: ``Parallel`` (its children may run concurrently) and
``SubPlan`` (the retrieval part of a single-hop plan, used once per
sub-question of a multi-hop plan). The grammars enforced by
:func:`validate_plan` are::

    single-hop: Extract (Select_by_Entity | Select_by_Section)
                Parallel[Graph_Reasoning, Text_Reasoning] Skyline_Ranker Reduce
    multi-hop:  Decompose SubPlan+ Map Reduce
                (SubPlan = the single-hop plan without its Reduce)
    global:     (Filter_Modal | Filter_Range)+ Map Reduce
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any

from bookindex.errors import MalformedVerdict, PlanValidationError
from bookindex.gateway import ModelGateway, render
from bookindex.jsonreply import parse_json_reply

logger = logging.getLogger(__name__)

DEFERRED = "<runtime>"
DEFAULT_SECTION_DEPTH = 1


class QueryCategory(str, enum.Enum):
    SINGLE_HOP = "single-hop"
    MULTI_HOP = "multi-hop"
    GLOBAL = "global"

    @classmethod
    def parse(cls, raw: str) -> "QueryCategory":
        key = re.sub(r"[\s_]+", "-", str(raw).strip().lower())
        aliases = {
            "single-hop": cls.SINGLE_HOP,
            "singlehop": cls.SINGLE_HOP,
            "simple": cls.SINGLE_HOP,
            "single": cls.SINGLE_HOP,
            "multi-hop": cls.MULTI_HOP,
            "multihop": cls.MULTI_HOP,
            "complex": cls.MULTI_HOP,
            "global": cls.GLOBAL,
            "global-aggregation": cls.GLOBAL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise MalformedVerdict(f"unknown query category {raw!r}") from None


class FilterType(str, enum.Enum):
    SECTION = "section"
    IMAGE = "image"
    TABLE = "table"
    PAGE = "page"


class Operation(str, enum.Enum):
    COUNT = "COUNT"
    LIST = "LIST"
    SUMMARIZE = "SUMMARIZE"
    ANALYZE = "ANALYZE"


@dataclass(frozen=True)
class FilterSpec:
    filter_type: FilterType
    filter_value: str | None
    operation: Operation

    def __post_init__(self):
        if self.filter_type in (FilterType.IMAGE, FilterType.TABLE) and self.filter_value is not None:
            raise ValueError(f"{self.filter_type.value} filters take no value")


@dataclass
class OperatorCall:
    operator: str
    params: dict[str, Any] = field(default_factory=dict)
    children: list["OperatorCall"] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"operator": self.operator, "params": self.params}
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d


@dataclass
class QueryPlan:
    query: str
    category: QueryCategory
    steps: list[OperatorCall]
    provenance: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "category": self.category.value,
            "steps": [s.to_dict() for s in self.steps],
            "provenance": self.provenance,
        }

    def operators(self) -> list[str]:
        return [s.operator for s in self.steps]


# classification


def classify(q: str, gateway: ModelGateway, provenance: dict[str, str] | None = None) -> QueryCategory:
    """Category of ``q``; a malformed reply is retried once before giving up."""
    if not q or not q.strip():
        raise ValueError("query must be non-empty")
    prompt = render("classify", query=q)
    last: MalformedVerdict | None = None
    for _ in range(2):
        reply = gateway.complete(prompt)
        if provenance is not None:
            provenance["classify"] = reply
        try:
            data = parse_json_reply(reply)
            raw = data.get("category") if isinstance(data, dict) else data
            return QueryCategory.parse(raw)
        except MalformedVerdict as exc:
            try:
                return QueryCategory.parse(reply)
            except MalformedVerdict:
                last = exc
    raise MalformedVerdict(f"could not classify query: {last}")


# filter specs

_PAGE_RANGE = re.compile(r"^\s*(\d+)\s*(?:-\s*(\d+)\s*)?$")


def parse_page_range(value: str) -> tuple[int, int]:
    """``"a-b"`` or ``"a"`` to an inclusive (start, end)."""
    m = _PAGE_RANGE.match(str(value))
    if not m:
        raise MalformedVerdict(f"bad page range {value!r}")
    start = int(m.group(1))
    end = int(m.group(2)) if m.group(2) else start
    return start, end


def parse_filter_spec(reply: str) -> list[FilterSpec]:
    """Validate the filter/operation JSON produced for a global query."""
    data = parse_json_reply(reply)
    if not isinstance(data, dict):
        raise MalformedVerdict("filter spec must be a JSON object")
    try:
        operation = Operation(str(data.get("operation", "")).strip().upper())
    except ValueError:
        raise MalformedVerdict(f"unknown operation {data.get('operation')!r}") from None
    raw_filters = data.get("filters")
    if not isinstance(raw_filters, list) or not raw_filters:
        raise MalformedVerdict("filter spec needs a non-empty 'filters' list")
    specs = []
    for item in raw_filters:
        if not isinstance(item, dict):
            raise MalformedVerdict(f"filter entry {item!r} is not an object")
        try:
            ftype = FilterType(str(item.get("filter_type", "")).strip().lower())
        except ValueError:
            raise MalformedVerdict(f"unknown filter_type {item.get('filter_type')!r}") from None
        value = item.get("filter_value")
        if value is not None:
            value = str(value).strip() or None
        if ftype in (FilterType.IMAGE, FilterType.TABLE) and value is not None:
            logger.warning("%s filter carried value %r; dropped", ftype.value, value)
            value = None
        if ftype is FilterType.PAGE:
            if value is None:
                raise MalformedVerdict("page filter needs a value")
            parse_page_range(value)
        specs.append(FilterSpec(ftype, value, operation))
    return specs


# plan construction


def _query_mentions(q: str, gateway: ModelGateway, provenance: dict[str, str], tag: str) -> list[str]:
    reply = gateway.complete(render("query_entities", query=q))
    provenance[tag] = reply
    try:
        data = parse_json_reply(reply)
    except MalformedVerdict:
        logger.warning("entity extraction reply unparsable for %r", q)
        return []
    items = data.get("entities", []) if isinstance(data, dict) else data
    names = []
    for item in items if isinstance(items, list) else []:
        name = item.get("entity_name") if isinstance(item, dict) else item
        if isinstance(name, str) and name.strip() and name.strip() not in names:
            names.append(name.strip())
    return names


def _retrieval_steps(q: str, mentions: list[str], section_depth: int) -> list[OperatorCall]:
    extract = OperatorCall("Extract", {"query": q, "mentions": mentions})
    if mentions:
        select = OperatorCall(
            "Select_by_Entity",
            {"entity_names": mentions, "entity_ids": DEFERRED, "depth": section_depth, "on_fail": "Select_by_Section"},
        )
    else:
        select = OperatorCall("Select_by_Section", {"query": q, "depth": section_depth, "sections": DEFERRED})
    reason = OperatorCall(
        "Parallel",
        children=[
            OperatorCall("Graph_Reasoning", {"start_entities": DEFERRED}),
            OperatorCall("Text_Reasoning", {"query": q}),
        ],
    )
    skyline = OperatorCall("Skyline_Ranker", {"criteria": ["s_graph", "s_text"]})
    return [extract, select, reason, skyline]


def parse_decomposition(reply: str) -> list[tuple[str, str]]:
    data = parse_json_reply(reply)
    items = data.get("sub_questions") if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise MalformedVerdict("decomposition has no sub_questions")
    out = []
    for item in items:
        if not isinstance(item, dict) or not str(item.get("question", "")).strip():
            raise MalformedVerdict(f"bad sub-question {item!r}")
        kind = str(item.get("type", "retrieval")).strip().lower()
        if kind not in ("retrieval", "synthesis"):
            raise MalformedVerdict(f"unknown sub-question type {kind!r}")
        out.append((str(item["question"]).strip(), kind))
    return out


def decompose(q: str, gateway: ModelGateway, provenance: dict[str, str] | None = None) -> list[tuple[str, str]]:
    """Sub-questions of ``q`` as ``(question, "retrieval" | "synthesis")`` pairs."""
    if not q or not q.strip():
        raise ValueError("query must be non-empty")
    reply = gateway.complete(render("decompose", query=q))
    if provenance is not None:
        provenance["decompose"] = reply
    return parse_decomposition(reply)


def make_plan(
    q: str,
    c: QueryCategory,
    gateway: ModelGateway,
    section_depth: int = DEFAULT_SECTION_DEPTH,
    provenance: dict[str, str] | None = None,
) -> QueryPlan:
    """Instantiate the category's operator template for ``q``.

    Model calls made here (entity mentions, decomposition, filter spec) are
    recorded verbatim in ``plan.provenance``. Entity linking against the index
    happens at execution time.
    """
    prov: dict[str, str] = dict(provenance or {})
    c = QueryCategory(c)

    if c is QueryCategory.SINGLE_HOP:
        mentions = _query_mentions(q, gateway, prov, "extract")
        steps = _retrieval_steps(q, mentions, section_depth) + [
            OperatorCall("Reduce", {"query": q, "operation": None})
        ]

    elif c is QueryCategory.MULTI_HOP:
        subs = decompose(q, gateway, prov)
        retrieval = [s for s, kind in subs if kind == "retrieval"]
        synthesis = [s for s, kind in subs if kind == "synthesis"]
        if not retrieval:
            retrieval = [q]
        steps = [OperatorCall("Decompose", {"query": q, "sub_questions": [{"question": s, "type": k} for s, k in subs]})]
        for i, sq in enumerate(retrieval):
            mentions = _query_mentions(sq, gateway, prov, f"extract[{i}]")
            steps.append(OperatorCall("SubPlan", {"question": sq}, children=_retrieval_steps(sq, mentions, section_depth)))
        steps.append(OperatorCall("Map", {"questions": retrieval}))
        steps.append(OperatorCall("Reduce", {"query": q, "instruction": " ".join(synthesis) or None, "operation": None}))

    else:
        reply = gateway.complete(render("filter_spec", query=q))
        prov["filter_spec"] = reply
        specs = parse_filter_spec(reply)
        steps = []
        for spec in specs:
            if spec.filter_type is FilterType.IMAGE:
                steps.append(OperatorCall("Filter_Modal", {"modal_type": "Image"}))
            elif spec.filter_type is FilterType.TABLE:
                steps.append(OperatorCall("Filter_Modal", {"modal_type": "Table"}))
            elif spec.filter_type is FilterType.PAGE:
                start, end = parse_page_range(spec.filter_value)
                steps.append(OperatorCall("Filter_Range", {"kind": "page", "start": start, "end": end}))
            elif spec.filter_value:
                steps.append(OperatorCall("Filter_Range", {"kind": "section", "section": spec.filter_value}))
            else:
                steps.append(OperatorCall("Filter_Modal", {"modal_type": "Section", "depth": section_depth}))
        operation = specs[0].operation.value
        steps.append(OperatorCall("Map", {"operation": operation}))
        steps.append(OperatorCall("Reduce", {"query": q, "operation": operation}))

    plan = QueryPlan(query=q, category=c, steps=steps, provenance=prov)
    validate_plan(plan)
    return plan


def plan_query(q: str, gateway: ModelGateway, section_depth: int = DEFAULT_SECTION_DEPTH) -> QueryPlan:
    prov: dict[str, str] = {}
    c = classify(q, gateway, prov)
    return make_plan(q, c, gateway, section_depth, prov)


# grammar check

_SELECTORS = {"Select_by_Entity", "Select_by_Section"}
_FILTERS = {"Filter_Modal", "Filter_Range"}


def _check_retrieval(steps: list[OperatorCall], where: str) -> None:
    ops = [s.operator for s in steps]
    if len(ops) != 4 or ops[0] != "Extract" or ops[1] not in _SELECTORS or ops[2] != "Parallel" or ops[3] != "Skyline_Ranker":
        raise PlanValidationError(f"{where}: expected Extract, Select_*, Parallel, Skyline_Ranker; got {ops}")
    branch = sorted(c.operator for c in steps[2].children)
    if branch != ["Graph_Reasoning", "Text_Reasoning"]:
        raise PlanValidationError(f"{where}: Parallel must hold Graph_Reasoning and Text_Reasoning, got {branch}")


def validate_plan(plan: QueryPlan) -> None:
    steps = plan.steps
    ops = [s.operator for s in steps]
    if not ops or ops[-1] != "Reduce" or ops.count("Reduce") != 1:
        raise PlanValidationError(f"plan must end in exactly one Reduce: {ops}")
    if plan.category is QueryCategory.SINGLE_HOP:
        _check_retrieval(steps[:-1], "single-hop plan")
    elif plan.category is QueryCategory.MULTI_HOP:
        if ops[0] != "Decompose" or len(ops) < 4 or ops[-2] != "Map":
            raise PlanValidationError(f"multi-hop plan must be Decompose, SubPlan+, Map, Reduce: {ops}")
        middle = steps[1:-2]
        if not middle or any(s.operator != "SubPlan" for s in middle):
            raise PlanValidationError(f"multi-hop plan needs one or more SubPlan steps: {ops}")
        for i, sub in enumerate(middle):
            _check_retrieval(sub.children, f"sub-plan {i}")
    else:
        if len(ops) < 3 or ops[-2] != "Map" or any(o not in _FILTERS for o in ops[:-2]):
            raise PlanValidationError(f"global plan must be Filter+, Map, Reduce: {ops}")


def plan_to_json(plan: QueryPlan) -> str:
    return json.dumps(plan.to_dict(), ensure_ascii=False, indent=2)
