import copy
import json
import random

import pytest

from bookindex.errors import GatewayError, MalformedVerdict, PlanValidationError
from bookindex.gateway import mock_gateway
from bookindex.planner import (
    DEFERRED,
    FilterSpec,
    FilterType,
    Operation,
    QueryCategory,
    classify,
    make_plan,
    parse_decomposition,
    parse_filter_spec,
    parse_page_range,
    plan_query,
    plan_to_json,
    validate_plan,
)

from helpers import FIG8_QUERY, FIG8_REPLY, FIG9_PAYLOADS, category_queries


@pytest.mark.parametrize(
    "q, expected",
    [
        ("What is the title of Figure 2?", QueryCategory.SINGLE_HOP),
        ("Is the flow at Vienna greater than at Budapest?", QueryCategory.MULTI_HOP),
        ("How many tables are in the document?", QueryCategory.GLOBAL),
    ],
)
def test_mock_classification(q, expected):
    assert classify(q, mock_gateway()) is expected


@pytest.mark.parametrize("reply", ['{"category": "complex"}', "Global", '"simple"', "multi_hop"])
def test_classify_accepts_aliases(reply):
    assert classify("q", mock_gateway({"classify:q": reply}))


def test_classify_retries_once_then_fails():
    gw = mock_gateway({"classify:q": "I am not sure"})
    with pytest.raises(MalformedVerdict):
        classify("q", gw)
    assert len(gw.llm.calls) == 2


def test_classify_rejects_empty():
    with pytest.raises(ValueError):
        classify("  ", mock_gateway())


def test_filter_payloads_parse_to_expected_specs():
    assert parse_filter_spec(FIG9_PAYLOADS[0]) == [
        FilterSpec(FilterType.PAGE, "3-10", Operation.COUNT),
        FilterSpec(FilterType.IMAGE, None, Operation.COUNT),
    ]
    assert parse_filter_spec(FIG9_PAYLOADS[1]) == [FilterSpec(FilterType.SECTION, "Methodology", Operation.SUMMARIZE)]
    assert parse_filter_spec(FIG9_PAYLOADS[2]) == [FilterSpec(FilterType.SECTION, None, Operation.COUNT)]


def test_image_value_dropped_with_warning(caplog):
    specs = parse_filter_spec('{"filters": [{"filter_type": "image", "filter_value": "x"}], "operation": "LIST"}')
    assert specs == [FilterSpec(FilterType.IMAGE, None, Operation.LIST)]
    assert "dropped" in caplog.text


@pytest.mark.parametrize(
    "reply",
    [
        '{"filters": [{"filter_type": "figure"}], "operation": "COUNT"}',
        '{"filters": [], "operation": "COUNT"}',
        '{"filters": [{"filter_type": "page"}], "operation": "COUNT"}',
        '{"filters": [{"filter_type": "page", "filter_value": "three"}], "operation": "COUNT"}',
        '{"filters": [{"filter_type": "table"}], "operation": "AVERAGE"}',
        "[]",
        "nonsense",
    ],
)
def test_bad_filter_specs(reply):
    with pytest.raises(MalformedVerdict):
        parse_filter_spec(reply)


@pytest.mark.parametrize("value, expected", [("3-10", (3, 10)), ("5", (5, 5)), (" 2 - 4 ", (2, 4))])
def test_page_range(value, expected):
    assert parse_page_range(value) == expected


@pytest.mark.parametrize("value", ["3..10", "p3", "", "3-"])
def test_page_range_rejects(value):
    with pytest.raises(MalformedVerdict):
        parse_page_range(value)


def test_global_plan_from_payload():
    q = "How many figures are there from Page 3 to Page 10?"
    plan = make_plan(q, QueryCategory.GLOBAL, mock_gateway({f"filter_spec:{q}": FIG9_PAYLOADS[0]}))
    assert plan.operators() == ["Filter_Range", "Filter_Modal", "Map", "Reduce"]
    assert plan.steps[0].params == {"kind": "page", "start": 3, "end": 10}
    assert plan.steps[1].params == {"modal_type": "Image"}
    assert plan.steps[-1].params["operation"] == "COUNT"
    assert plan.provenance["filter_spec"] == FIG9_PAYLOADS[0]


def test_section_count_plan_uses_depth():
    q = "How many chapters are there?"
    plan = make_plan(q, QueryCategory.GLOBAL, mock_gateway({f"filter_spec:{q}": FIG9_PAYLOADS[2]}), section_depth=2)
    assert plan.steps[0].params == {"modal_type": "Section", "depth": 2}


def test_multi_hop_plan_from_decomposition():
    gw = mock_gateway({f"decompose:{FIG8_QUERY}": FIG8_REPLY})
    plan = make_plan(FIG8_QUERY, QueryCategory.MULTI_HOP, gw)
    assert plan.operators() == ["Decompose", "SubPlan", "SubPlan", "Map", "Reduce"]
    subs = [s.params["question"] for s in plan.steps[1:3]]
    assert "foreign born Latinos" in subs[0] and "cellphone" in subs[1]
    assert plan.steps[-1].params["instruction"] == "Which of the two population counts is greater?"
    for sp in plan.steps[1:3]:
        assert [c.operator for c in sp.children] == ["Extract", "Select_by_Entity", "Parallel", "Skyline_Ranker"]


def test_parse_decomposition_examples():
    assert [k for _, k in parse_decomposition(FIG8_REPLY)] == ["retrieval", "retrieval", "synthesis"]
    with pytest.raises(MalformedVerdict):
        parse_decomposition('{"sub_questions": []}')
    with pytest.raises(MalformedVerdict):
        parse_decomposition('{"sub_questions": [{"question": "x", "type": "lookup"}]}')


def test_single_hop_without_mentions_uses_section_selector():
    q = "what is discussed here?"
    plan = make_plan(q, QueryCategory.SINGLE_HOP, mock_gateway({f"query_entities:{q}": '{"entities": []}'}))
    assert plan.operators()[:2] == ["Extract", "Select_by_Section"]


def test_single_hop_with_mentions():
    plan = make_plan("What is the reward model of Danube?", QueryCategory.SINGLE_HOP, mock_gateway())
    assert plan.operators() == ["Extract", "Select_by_Entity", "Parallel", "Skyline_Ranker", "Reduce"]
    assert plan.steps[1].params["entity_ids"] == DEFERRED


def test_gateway_error_propagates():
    with pytest.raises(GatewayError):
        plan_query("q", mock_gateway({"classify:q": "!error"}))


def test_plans_are_deterministic_and_serialisable():
    q = "What is the length of the Danube?"
    a, b = plan_query(q, mock_gateway()), plan_query(q, mock_gateway())
    assert plan_to_json(a) == plan_to_json(b)
    assert json.loads(plan_to_json(a))["category"] == "single-hop"


@pytest.mark.parametrize("category", ["single-hop", "multi-hop", "global"])
def test_random_queries_conform(category):
    for q in category_queries(random.Random(category), category, 15):
        plan = plan_query(q, mock_gateway())
        assert plan.category.value == category, q
        validate_plan(plan)


def _mutations(plan):
    p = copy.deepcopy(plan)
    p.steps = p.steps[:-1]
    yield p
    p = copy.deepcopy(plan)
    p.steps = p.steps + [copy.deepcopy(plan.steps[-1])]
    yield p
    p = copy.deepcopy(plan)
    p.steps = p.steps[1:]
    yield p


@pytest.mark.parametrize(
    "q", ["What is the length of the Danube?", "Compare Vienna with Budapest.", "How many tables are in the document?"]
)
def test_validate_rejects_broken_plans(q):
    plan = plan_query(q, mock_gateway())
    for bad in _mutations(plan):
        with pytest.raises(PlanValidationError):
            validate_plan(bad)


def test_parallel_branch_checked():
    plan = plan_query("What is the length of the Danube?", mock_gateway())
    plan.steps[2].children = plan.steps[2].children[:1]
    with pytest.raises(PlanValidationError):
        validate_plan(plan)
