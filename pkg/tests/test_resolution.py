import json
import random

import numpy as np
import pytest

from bookindex.errors import DimensionMismatch, UnknownEntity
from bookindex.gateway import mock_gateway
from bookindex.graph import Entity, KnowledgeGraph, Relation, embed_entity
from bookindex.resolution import (
    Decision,
    ResolutionConfig,
    VectorStore,
    gradient_select,
    merge_entities,
    nearest,
    resolve,
)

from helpers import AliasReranker, alias_corpus, closure_partition


class FixedReranker:
    """Returns preset scores in candidate order."""

    def __init__(self, scores):
        self.scores = list(scores)

    def rerank(self, query, candidates):
        return self.scores[: len(candidates)]


def _seeded(n, gw):
    store, graph = VectorStore(gw.dimension), KnowledgeGraph()
    for i in range(n):
        e = embed_entity(Entity(f"c{i}", f"Candidate {i}", "CONCEPT", f"item {i}", {f"n{i}"}), gw)
        graph.add_entity(e)
        store.add(e.id, e.embedding)
    return store, graph


def _new(gw, name="Newcomer"):
    return embed_entity(Entity("new", name, "CONCEPT", "fresh", {"nx"}), gw)


@pytest.mark.parametrize(
    "scores, kept",
    [
        ([0.92, 0.60, 0.20, 0.18, 0.15], 2),
        ([0.30, 0.29, 0.28, 0.27, 0.26], 5),
        ([0.95, 0.10, 0.09], 1),
        ([], 0),
        ([0.0, 0.0, 0.0], 3),
        ([1.0, 0.6, 0.36], 1),  # equality with s_prev * g is a drop
    ],
)
def test_gradient_select(scores, kept):
    assert gradient_select(scores, 0.6) == kept


def test_empty_store_adds_new():
    gw = mock_gateway()
    store, graph = VectorStore(gw.dimension), KnowledgeGraph()
    out = resolve(_new(gw), store, graph, gw)
    assert out.decision is Decision.ADDED_NEW and out.canonical == "new"
    assert "new" in store and "new" in graph.entities


def test_sharp_drop_after_two_goes_to_adjudication():
    scores = [0.92, 0.60, 0.20, 0.18, 0.15]
    gw = mock_gateway({"er_adjudicate:Newcomer": json.dumps({"select_id": 1, "explanation": "same"})}, reranker=FixedReranker(scores))
    store, graph = _seeded(5, gw)
    out = resolve(_new(gw), store, graph, gw, ResolutionConfig(top_k=10))
    assert len(out.selected_set) == 2
    assert out.selected_set == [cid for cid, _ in out.candidates_considered[:2]]
    assert out.decision is Decision.MERGED and out.canonical == out.selected_set[1]
    assert [c.name for c in gw.llm.calls] == ["er_adjudicate"]
    assert "nx" in graph.entity(out.canonical).origins
    assert len(store) == len(graph.entities) == 5


def test_uniform_scores_add_new():
    gw = mock_gateway(reranker=FixedReranker([0.30, 0.29, 0.28, 0.27, 0.26]))
    store, graph = _seeded(5, gw)
    out = resolve(_new(gw), store, graph, gw)
    assert out.decision is Decision.ADDED_NEW and len(out.selected_set) == 5
    assert gw.llm.calls == []
    assert len(store) == len(graph.entities) == 6


def test_single_selection_merges_without_llm():
    gw = mock_gateway(reranker=FixedReranker([0.95, 0.10, 0.09]))
    store, graph = _seeded(3, gw)
    before = store.get(store.ids()[0]).copy()
    out = resolve(_new(gw), store, graph, gw)
    top = out.candidates_considered[0][0]
    assert out.decision is Decision.MERGED and out.canonical == top
    assert gw.llm.calls == []
    assert graph.entity(top).origins >= {"nx"}
    assert "new" not in graph.entities and "new" not in store
    if store.ids()[0] == top:
        assert not np.array_equal(before, store.get(top))


def test_adjudication_minus_one_adds_new():
    gw = mock_gateway({"er_adjudicate:Newcomer": '{"select_id": -1, "explanation": "none"}'}, reranker=FixedReranker([0.9, 0.8, 0.1]))
    store, graph = _seeded(3, gw)
    out = resolve(_new(gw), store, graph, gw)
    assert out.decision is Decision.ADDED_NEW and out.canonical == "new"


def test_tau_min_forces_add_new():
    gw = mock_gateway(reranker=FixedReranker([0.3, 0.01]))
    store, graph = _seeded(2, gw)
    out = resolve(_new(gw), store, graph, gw, ResolutionConfig(tau_min=0.5))
    assert out.decision is Decision.ADDED_NEW


@pytest.mark.parametrize("kwargs", [{"top_k": 0}, {"g": 0.0}, {"g": 1.5}, {"tau_min": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ResolutionConfig(**kwargs)


def test_nearest_orthogonal_with_id_tiebreak():
    store = VectorStore(3)
    store.add("b", [1, 0, 0])
    store.add("c", [0, 1, 0])
    store.add("a", [0, 0, 1])
    assert nearest(store, [1, 0, 0], 3) == [("b", 1.0), ("a", 0.0), ("c", 0.0)]
    assert nearest(store, [0, 1, 0], 1) == [("c", 1.0)]
    with pytest.raises(DimensionMismatch):
        nearest(store, [1, 0], 2)


def test_nearest_single_entry():
    store = VectorStore(2)
    store.add("x", [0.3, 0.4])
    assert [eid for eid, _ in nearest(store, [1, 0], 10)] == ["x"]


def test_merge_entities_examples():
    g = KnowledgeGraph()
    g.add_entity(Entity("a", "A", "T", "from a", {"n1"}))
    g.add_entity(Entity("c", "C", "T", "from c", {"n2"}))
    g.add_entity(Entity("x", "X", "T", "", {"n3"}))
    g.add_entity(Entity("y", "Y", "T", "", {"n3"}))
    g.add_relation(Relation("a", "c", "alias edge"))
    g.add_relation(Relation("a", "x", "r1"))
    g.add_relation(Relation("y", "a", "r2"))
    merge_entities(g, "a", "c")
    assert g.entity("c").origins == {"n1", "n2"}
    assert "from a" in g.entity("c").description and "from c" in g.entity("c").description
    assert {(r.source, r.target) for r in g.relations} == {("c", "x"), ("y", "c")}
    with pytest.raises(UnknownEntity):
        merge_entities(g, "a", "c")
    with pytest.raises(ValueError):
        merge_entities(g, "c", "c")


def _resolve_corpus(names, cluster_of, seed):
    gw = mock_gateway(reranker=AliasReranker(cluster_of))
    store, graph = VectorStore(gw.dimension), KnowledgeGraph()
    cfg = ResolutionConfig(top_k=64)
    covered = set()
    for i, name in enumerate(names):
        e = embed_entity(Entity(f"e{i:03d}", name, "CONCEPT", f"record {i}", {f"n{i:03d}"}), gw)
        resolve(e, store, graph, gw, cfg)
        assert len(store) == len(graph.entities)
        now = set().union(*(x.origins for x in graph.entities.values()))
        assert covered <= now
        covered = now
    return graph


def test_alias_corpus_matches_closure_oracle():
    rng = random.Random(7)
    for seed in range(20):
        names, cluster_of = alias_corpus(rng, 30)
        graph = _resolve_corpus(names, cluster_of, seed)
        nodes = [f"n{i:03d}" for i in range(len(names))]
        pairs = [(nodes[i], nodes[j]) for i in range(len(names)) for j in range(i) if cluster_of[names[i]] == cluster_of[names[j]]]
        assert {frozenset(e.origins) for e in graph.entities.values()} == closure_partition(nodes, pairs)


def test_resolution_is_deterministic():
    names, cluster_of = alias_corpus(random.Random(3), 25)
    assert _resolve_corpus(names, cluster_of, 0) == _resolve_corpus(names, cluster_of, 0)
