"""Reasoners: graph importance, text relevance, and Pareto (skyline) filtering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from bookindex.errors import MissingScore
from bookindex.gateway import ModelGateway
from bookindex.index import BookIndex
from bookindex.textutil import truncate
from bookindex.tree import NodeType, TreeNode

logger = logging.getLogger(__name__)

DAMPING = 0.85
TOLERANCE = 1e-8
MAX_ITER = 200
TEXT_CAP = 1024


@dataclass(frozen=True)
class ScoredNode:
    node_id: str
    s_graph: float | None = None
    s_text: float | None = None


@dataclass
class RetrievalSet:
    nodes: list[ScoredNode] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]


def personalized_pagerank(
    n: int,
    edges: Iterable[tuple[int, int]],
    personalization: np.ndarray | None = None,
    damping: float = DAMPING,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
) -> np.ndarray:
    """Random walk with restart on an undirected unit-weight graph of ``n`` vertices.

    ``personalization`` is the restart distribution (any non-negative vector
    with positive mass; it is normalised). Dangling vertices restart. The
    loop stops once the change between iterates bounds the distance to the
    fixed point by ``tol`` in L1.
    """
    if n == 0:
        return np.zeros(0)
    if personalization is None:
        p = np.full(n, 1.0 / n)
    else:
        p = np.asarray(personalization, dtype=np.float64)
        if p.shape != (n,) or (p < 0).any() or p.sum() <= 0:
            raise ValueError("personalization must be a non-negative length-n vector with positive mass")
        p = p / p.sum()

    pairs = {(min(a, b), max(a, b)) for a, b in edges if a != b}
    if pairs:
        rows = np.fromiter((x for a, b in pairs for x in (a, b)), dtype=np.int64)
        cols = np.fromiter((x for a, b in pairs for x in (b, a)), dtype=np.int64)
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    else:
        adj = sp.csr_matrix((n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    dangling = deg == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / deg[~dangling]
    walk_t = (sp.diags(inv) @ adj).T.tocsr()

    bound = damping / (1.0 - damping) if damping < 1 else float("inf")
    r = p.copy()
    for _ in range(max_iter):
        nxt = damping * (walk_t @ r + r[dangling].sum() * p) + (1.0 - damping) * p
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta * bound < tol:
            break
    else:
        logger.warning("pagerank did not reach tol %g in %d iterations", tol, max_iter)
    return r / r.sum()


def graph_reasoning(
    index: BookIndex,
    start_entities: Sequence[str],
    scope: Sequence[str],
    damping: float = DAMPING,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
) -> dict[str, float]:
    """Node scores from personalized PageRank over the entities rooted in ``scope``.

    The subgraph holds the entities with at least one origin in scope and the
    relations between them. Each node's score is the summed importance of the
    subgraph entities that originate in it.
    """
    if not scope:
        raise ValueError("scope must be non-empty")
    scope_set = set(scope)
    sub = sorted(eid for eid, e in index.graph.entities.items() if e.origins & scope_set)
    scores = {nid: 0.0 for nid in scope}
    if not sub:
        logger.warning("graph reasoning: no entities inside a scope of %d nodes", len(scope))
        return scores
    pos = {eid: i for i, eid in enumerate(sub)}
    edges = [(pos[r.source], pos[r.target]) for r in index.graph.relations if r.source in pos and r.target in pos]
    starts = [pos[e] for e in dict.fromkeys(start_entities) if e in pos]
    p = None
    if starts:
        p = np.zeros(len(sub))
        p[starts] = 1.0
    importance = personalized_pagerank(len(sub), edges, p, damping, tol, max_iter)
    for eid, weight in zip(sub, importance):
        for origin in index.graph.entities[eid].origins:
            if origin in scope_set:
                scores[origin] += float(weight)
    return scores


def render_node(node: TreeNode, cap: int = TEXT_CAP) -> str:
    if node.node_type is NodeType.IMAGE:
        text = node.caption or node.features.get("alt") or "[image]"
    else:
        text = node.content
    return truncate(text, cap)


def text_reasoning(
    index: BookIndex, q: str, scope: Sequence[str], gateway: ModelGateway, cap: int = TEXT_CAP
) -> dict[str, float]:
    """Reranker relevance of each node's text to the query."""
    if not scope:
        raise ValueError("scope must be non-empty")
    texts = [render_node(index.tree.node(nid), cap) for nid in scope]
    scores = gateway.rerank(q, texts)
    return dict(zip(scope, scores))


# skyline


def pareto_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of points not dominated by any other (maximising every column).

    Two columns use an O(n log n) sweep; more columns fall back to pairwise checks.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise ValueError("points must be an (n, k>=2) array")
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    if n <= 1:
        return keep
    if pts.shape[1] == 2:
        x, y = pts[:, 0], pts[:, 1]
        order = np.lexsort((-y, -x))  # x desc, then y desc
        best_y_before = -np.inf  # max y among strictly larger x
        i = 0
        while i < n:
            j = i
            gx = x[order[i]]
            while j < n and x[order[j]] == gx:
                j += 1
            group = order[i:j]
            top_y = y[group[0]]  # group sorted y desc
            for idx in group:
                if best_y_before >= y[idx] or top_y > y[idx]:
                    keep[idx] = False
            best_y_before = max(best_y_before, top_y)
            i = j
        return keep
    for i in range(n):
        ge = (pts >= pts[i]).all(axis=1)
        gt = (pts > pts[i]).any(axis=1)
        if (ge & gt).any():
            keep[i] = False
    return keep


def skyline(points: Sequence[ScoredNode]) -> RetrievalSet:
    """Nodes on the (s_graph, s_text) Pareto frontier.

    Ties are all kept. Output is ordered by s_text, then s_graph (both
    descending), then node id.
    """
    for p in points:
        if p.s_graph is None or p.s_text is None:
            raise MissingScore(f"node {p.node_id} lacks a score")
    if not points:
        return RetrievalSet()
    mask = pareto_mask(np.array([[p.s_graph, p.s_text] for p in points]))
    kept = [p for p, m in zip(points, mask) if m]
    kept.sort(key=lambda p: (-p.s_text, -p.s_graph, p.node_id))
    return RetrievalSet(nodes=kept)
