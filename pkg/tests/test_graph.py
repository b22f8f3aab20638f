import json

import numpy as np
import pytest

from bookindex.errors import EmptyExtraction, UnknownEntity
from bookindex.gateway import mock_gateway
from bookindex.graph import (
    CONTAINED_IN,
    Entity,
    KnowledgeGraph,
    Relation,
    embed_entity,
    extract_node_subgraph,
    merge_descriptions,
    table_headers,
)
from bookindex.tree import NodeType, TreeNode

from helpers import write_png


def _node(nid="n1", node_type=NodeType.TEXT, content="", **features):
    return TreeNode(id=nid, node_type=node_type, content=content, page=1, order=1, features=features)


def test_text_node_with_scripted_extraction():
    script = {
        "extract_text:n1": json.dumps(
            {
                "entities": [
                    {"name": "Alice", "type": "PERSON", "description": "founder"},
                    {"name": "Acme", "type": "ORG", "description": "a company"},
                    {"name": "Acme founding", "type": "EVENT", "description": "2001"},
                ],
                "relations": [{"source": "Alice", "target": "Acme", "description": "founded"}],
            }
        )
    }
    entities, relations = extract_node_subgraph(_node(content="Alice founded Acme in 2001"), mock_gateway(script), image_root=None)
    assert [e.name for e in entities] == ["Alice", "Acme", "Acme founding"]
    assert all(e.origins == {"n1"} for e in entities)
    assert [(r.source, r.target, r.description) for r in relations] == [("n1#0", "n1#1", "founded")]


def test_table_node_yields_primary_and_header_star():
    node = _node("tab", NodeType.TABLE, "| Model | Accuracy |\n|---|---|\n| A | 0.9 |", caption="Table 2: Scores")
    entities, relations = extract_node_subgraph(node, mock_gateway({"extract_text:tab": '{"entities": []}'}), image_root=None)
    primary = [e for e in entities if e.entity_type == "TABLE"]
    assert len(primary) == 1
    names = {e.name for e in entities}
    assert {"Model", "Accuracy"} <= names
    others = [e for e in entities if e is not primary[0]]
    assert {(r.source, r.target, r.kind) for r in relations} == {(e.id, primary[0].id, CONTAINED_IN) for e in others}


def test_formula_node_has_primary_entity():
    node = _node("f", NodeType.FORMULA, "E = m c^2")
    entities, relations = extract_node_subgraph(node, mock_gateway(), image_root=None)
    assert sum(e.entity_type == "FORMULA" for e in entities) == 1
    assert all(r.kind == CONTAINED_IN for r in relations)
    assert len(relations) == len(entities) - 1


def test_empty_text_raises():
    with pytest.raises(EmptyExtraction):
        extract_node_subgraph(_node(content="   "), mock_gateway(), image_root=None)


def test_nothing_extracted_raises():
    with pytest.raises(EmptyExtraction):
        extract_node_subgraph(_node(content="lower case only"), mock_gateway(), image_root=None)


def test_section_node_yields_single_section_entity():
    gw = mock_gateway()
    node = TreeNode(id="s", node_type=NodeType.SECTION, content="Related  Work", page=1, order=1, level=1)
    entities, relations = extract_node_subgraph(node, gw, image_root=None)
    assert [(e.name, e.entity_type) for e in entities] == [("Related Work", "SECTION")]
    assert relations == [] and gw.llm.calls == []


def test_image_node_goes_to_vision_model(tmp_path):
    write_png(tmp_path / "a.png")
    gw = mock_gateway()
    node = _node("img", NodeType.IMAGE, "a.png", caption="Figure 1: Flow chart")
    entities, _ = extract_node_subgraph(node, gw, image_root=tmp_path)
    assert gw.llm.calls[-1].name == "extract_vision"
    assert entities[0].entity_type == "FIGURE"


@pytest.mark.parametrize(
    "content, expected",
    [
        ("| Model | Accuracy |\n|---|---|\n| A | 1 |", ["Model", "Accuracy"]),
        ("<table><tr><th>x</th><th>y</th></tr><tr><td>1</td><td>2</td></tr></table>", ["x", "y"]),
        ("a\tb\n1\t2", ["a", "b"]),
        ("| | c1 | c2 |\n|---|---|---|\n| r1 | 1 | 2 |\n| r2 | 3 | 4 |", ["c1", "c2", "r1", "r2"]),
    ],
)
def test_table_headers(content, expected):
    assert table_headers(content) == expected


def test_embedding_deterministic_and_distinct():
    gw = mock_gateway()
    a = embed_entity(Entity("a", "Danube", "PLACE", "river", {"n"}), gw)
    b = embed_entity(Entity("a", "Danube", "PLACE", "river", {"n"}), gw)
    c = embed_entity(Entity("c", "Rhine", "PLACE", "river", {"n"}), gw)
    assert a.embedding.tobytes() == b.embedding.tobytes()
    assert a.embedding.shape == (gw.dimension,)
    cos = float(np.dot(a.embedding, c.embedding))
    assert cos < 1.0


def test_entity_requires_name():
    with pytest.raises(ValueError):
        Entity("x", "   ", "T", "", {"n"})


def test_merge_descriptions_dedups_lines():
    assert merge_descriptions("a\nb", "b\nc", "") == "a\nb\nc"


def test_graph_integrity_and_lookup():
    g = KnowledgeGraph()
    g.add_entity(Entity("a", "A", "T", "", {"n"}))
    g.add_entity(Entity("b", "B", "T", "", {"n"}))
    g.add_relation(Relation("a", "b", "r"))
    g.add_relation(Relation("a", "a", "self"))  # self loops are dropped
    assert len(g.relations) == 1
    assert g.integrity_problems() == []
    assert g.find_by_name(" a ") == ["a"]
    with pytest.raises(UnknownEntity):
        g.entity("zzz")
    assert KnowledgeGraph.from_dict(g.to_dict()) == g
