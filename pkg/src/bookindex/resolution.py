"""Incremental entity resolution driven by the drop-off in sorted rerank scores.

Each new entity is compared with its nearest stored entities. The reranked
scores are walked in descending order and a candidate stays in the selection
while its score is above ``g`` times the previous one. A walk that never
breaks means the scores carry no signal and the entity is added as new; a
break after one candidate merges into it; a break after several hands the
choice to the model.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from bookindex.errors import DimensionMismatch, MalformedVerdict, UnknownEntity
from bookindex.gateway import ModelGateway, render
from bookindex.graph import Entity, KnowledgeGraph, Relation, embed_entity, merge_descriptions
from bookindex.jsonreply import parse_json_reply

logger = logging.getLogger(__name__)


class VectorStore:
    """Exact cosine-similarity store keyed by entity id."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._vectors

    def ids(self) -> list[str]:
        return sorted(self._vectors)

    def get(self, entity_id: str) -> np.ndarray:
        return self._vectors[entity_id]

    def _check(self, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.dimension,):
            raise DimensionMismatch(f"vector shape {arr.shape} != ({self.dimension},)")
        return arr

    def add(self, entity_id: str, vec) -> None:
        if entity_id in self._vectors:
            raise ValueError(f"duplicate id {entity_id!r}")
        self._vectors[entity_id] = self._check(vec)

    def update(self, entity_id: str, vec) -> None:
        if entity_id not in self._vectors:
            raise UnknownEntity(entity_id)
        self._vectors[entity_id] = self._check(vec)

    def remove(self, entity_id: str) -> None:
        del self._vectors[entity_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VectorStore):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self._vectors.keys() == other._vectors.keys()
            and all(self._vectors[k].tobytes() == other._vectors[k].tobytes() for k in self._vectors)
        )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def nearest(store: VectorStore, query, k: int) -> list[tuple[str, float]]:
    """The ``k`` most cosine-similar entries, ties broken by id ascending."""
    q = store._check(query)
    scored = [(eid, _cosine(q, vec)) for eid, vec in store._vectors.items()]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


class Decision(str, enum.Enum):
    ADDED_NEW = "AddedNew"
    MERGED = "Merged"


@dataclass(frozen=True)
class ResolutionConfig:
    top_k: int = 10
    g: float = 0.6
    tau_min: float = 0.0
    embed_budget: int = 512

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 < self.g <= 1.0:
            raise ValueError("g must lie in (0, 1]")
        if self.tau_min < 0:
            raise ValueError("tau_min must be >= 0")


@dataclass
class ResolutionOutcome:
    decision: Decision
    canonical: str
    candidates_considered: list[tuple[str, float]] = field(default_factory=list)
    selected_set: list[str] = field(default_factory=list)


def gradient_select(scores: list[float], g: float) -> int:
    """Length of the leading run of descending ``scores`` with no sharp drop.

    A score survives when it is above ``g`` times its predecessor. An exact tie
    is never a drop, which matters when both scores are zero.
    """
    if not scores:
        return 0
    kept, prev = 1, scores[0]
    for s in scores[1:]:
        if s > prev * g or s == prev:
            kept += 1
            prev = s
        else:
            break
    return kept


def merge_entities(graph: KnowledgeGraph, absorbed: str, canonical: str) -> KnowledgeGraph:
    """Fold ``absorbed`` into ``canonical``: union origins, join descriptions, re-point relations."""
    if absorbed == canonical:
        raise ValueError("cannot merge an entity into itself")
    a = graph.entity(absorbed)
    c = graph.entity(canonical)
    c.origins |= a.origins
    c.description = merge_descriptions(c.description, a.description)
    remapped: list[Relation] = []
    for r in graph.relations:
        s = canonical if r.source == absorbed else r.source
        t = canonical if r.target == absorbed else r.target
        if s == t:
            continue
        remapped.append(r if (s, t) == (r.source, r.target) else Relation(s, t, r.description, r.kind))
    graph.relations = remapped
    del graph.entities[absorbed]
    return graph


def _adjudicate(v_n: Entity, selected: list[str], graph: KnowledgeGraph, gateway: ModelGateway) -> str | None:
    lines = []
    for i, eid in enumerate(selected):
        e = graph.entity(eid)
        lines.append(
            json.dumps(
                {"id": i, "name": e.name, "type": e.entity_type, "description": e.description[:300]},
                ensure_ascii=False,
            )
        )
    new_entity = json.dumps(
        {"name": v_n.name, "type": v_n.entity_type, "description": v_n.description[:300]}, ensure_ascii=False
    )
    reply = gateway.complete(
        render("er_adjudicate", new_entity=new_entity, candidates="\n".join(lines), new_name=v_n.name)
    )
    try:
        data = parse_json_reply(reply)
        pick = int(data["select_id"])
    except (MalformedVerdict, KeyError, TypeError, ValueError):
        logger.warning("entity %s: unreadable adjudication %r, treating as no match", v_n.id, reply[:80])
        return None
    if pick == -1:
        return None
    if not 0 <= pick < len(selected):
        logger.warning("entity %s: adjudicator picked unknown id %r, treating as no match", v_n.id, pick)
        return None
    return selected[pick]


def _add_new(v_n: Entity, store: VectorStore, graph: KnowledgeGraph) -> None:
    graph.add_entity(v_n)
    store.add(v_n.id, v_n.embedding)


def resolve(
    v_n: Entity,
    store: VectorStore,
    graph: KnowledgeGraph,
    gateway: ModelGateway,
    cfg: ResolutionConfig | None = None,
) -> ResolutionOutcome:
    """Add ``v_n`` to the graph and store, or merge it into an existing entity."""
    cfg = cfg or ResolutionConfig()
    if v_n.embedding is None:
        raise ValueError(f"entity {v_n.id} has no embedding")
    vec = store._check(v_n.embedding)

    near = nearest(store, vec, cfg.top_k)
    if not near:
        _add_new(v_n, store, graph)
        return ResolutionOutcome(Decision.ADDED_NEW, v_n.id)

    cand_ids = [eid for eid, _ in near]
    scores = gateway.rerank(v_n.render(), [graph.entity(eid).render() for eid in cand_ids])
    ranked = sorted(zip(cand_ids, scores), key=lambda t: -t[1])  # stable: vector order breaks ties
    ranked_scores = [s for _, s in ranked]

    if cfg.tau_min > 0 and ranked_scores[0] < cfg.tau_min:
        _add_new(v_n, store, graph)
        return ResolutionOutcome(Decision.ADDED_NEW, v_n.id, ranked, [ranked[0][0]])

    n_sel = gradient_select(ranked_scores, cfg.g)
    selected = [eid for eid, _ in ranked[:n_sel]]

    if n_sel == len(ranked):
        _add_new(v_n, store, graph)
        return ResolutionOutcome(Decision.ADDED_NEW, v_n.id, ranked, selected)

    canonical = selected[0] if n_sel == 1 else _adjudicate(v_n, selected, graph, gateway)
    if canonical is None:
        _add_new(v_n, store, graph)
        return ResolutionOutcome(Decision.ADDED_NEW, v_n.id, ranked, selected)

    graph.add_entity(v_n)
    merge_entities(graph, v_n.id, canonical)
    merged = graph.entity(canonical)
    embed_entity(merged, gateway, cfg.embed_budget)
    store.update(canonical, merged.embedding)
    return ResolutionOutcome(Decision.MERGED, canonical, ranked, selected)
