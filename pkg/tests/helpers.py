"""Fixture builders and independent oracles shared by the test modules."""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import deque
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bookindex.graph import Entity, KnowledgeGraph, Relation
from bookindex.ingest import DocumentSource, parse_blocks

DATA = Path(__file__).parent / "data"
SYNTHETIC = DATA / "synthetic" / "blocks.jsonl"


def make_source(blocks: Sequence[dict], doc_id: str = "doc", base_dir: Path | None = None) -> DocumentSource:
    """DocumentSource from block dicts; ``order`` defaults to list position."""
    lines = [json.dumps({"format_version": "1", "doc_id": doc_id})]
    for i, b in enumerate(blocks, 1):
        rec = {"order": i, "page": 1, **b}
        lines.append(json.dumps(rec))
    return parse_blocks(lines, base_dir=base_dir, check_images=base_dir is not None)


def write_png(path: Path, seed: int = 0) -> Path:
    import struct
    import zlib

    raw = b"".join(b"\x00" + bytes([(seed * 37) % 256, (seed * 91) % 256, 40]) * 2 for _ in range(2))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", struct.pack(">IIBBBBB", 2, 2, 8, 2, 0, 0, 0))
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )
    return path


# figure-2 style document: two level-2 sections and a mis-tagged title


FIG2_BLOCKS = [
    {"id": "b-title", "type": "Title", "content": "Sparse Experts for Vision", "font_size": 24, "page": 1},
    {"id": "b-intro", "type": "Text", "content": "We study sparse mixtures of experts.", "page": 1},
    {"id": "b-method", "type": "Title", "content": "Method", "font_size": 14, "page": 2},
    {"id": "b-m1", "type": "Text", "content": "Each token is routed to two experts.", "page": 2},
    {"id": "b-moe", "type": "Title", "content": "MOE Layer", "font_size": 20, "page": 2},
    {"id": "b-m2", "type": "Text", "content": "The router uses a softmax gate.", "page": 2},
    {"id": "b-exp", "type": "Title", "content": "Experiment", "font_size": 14, "page": 3},
    {"id": "b-tab", "type": "Table", "content": "| Model | Top-1 |\n|---|---|\n| Dense | 76.1 |\n| Sparse | 78.4 |", "page": 3},
    {"id": "b-e1", "type": "Text", "content": "Sparse routing improves accuracy.", "page": 3},
]
FIG2_SCRIPT = {
    "section_filter:b-title": "1",
    "section_filter:b-method": "2",
    "section_filter:b-moe": "null",
    "section_filter:b-exp": "2",
}


def fig2_source() -> DocumentSource:
    return make_source(FIG2_BLOCKS, "fig2")


# global-aggregation document: images on pages 3, 5, 6, 8, 9 inside the first ten pages, two after


GLOBAL_IMAGE_PAGES = [3, 5, 6, 8, 9]


def global_blocks() -> list[dict]:
    blocks: list[dict] = [
        {"id": "g-h1", "type": "Title", "content": "Introduction", "font_size": 18, "page": 1},
        {"id": "g-t1", "type": "Text", "content": "Charts summarise the survey results.", "page": 1},
    ]
    for i, page in enumerate([2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]):
        blocks.append({"id": f"g-t{page}", "type": "Text", "content": f"Discussion on page {page}.", "page": page})
        if page in GLOBAL_IMAGE_PAGES or page in (11, 12):
            blocks.append(
                {"id": f"g-img{page}", "type": "Image", "content": f"img/{page}.png", "page": page, "caption": f"Chart {i}"}
            )
        if page == 7:
            blocks.append({"id": "g-tab7", "type": "Table", "content": "| a | b |\n|---|---|\n| 1 | 2 |", "page": 7})
        if page == 6:
            blocks.append({"id": "g-h2", "type": "Title", "content": "Results", "font_size": 18, "page": 6})
    return blocks


# oracles


class UnionFind:
    def __init__(self, items: Iterable):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def partition(self) -> set[frozenset]:
        groups: dict = {}
        for x in self.parent:
            groups.setdefault(self.find(x), set()).add(x)
        return {frozenset(g) for g in groups.values()}


def closure_partition(items: Sequence, pairs: Iterable[tuple]) -> set[frozenset]:
    """Transitive closure of an alias relation, by brute force over all pairs."""
    uf = UnionFind(items)
    for a, b in pairs:
        uf.union(a, b)
    return uf.partition()


def dominance_front(points: np.ndarray, chunk: int = 512) -> np.ndarray:
    """O(n^2) mask of non-dominated rows (maximising every column)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    for start in range(0, n, chunk):
        block = pts[start : start + chunk]
        ge = np.ones((len(block), n), dtype=bool)
        gt = np.zeros((len(block), n), dtype=bool)
        for c in range(pts.shape[1]):
            col, own = pts[:, c][None, :], block[:, c][:, None]
            ge &= col >= own
            gt |= col > own
        keep[start : start + chunk] = ~(ge & gt).any(axis=1)
    return keep


def power_iteration(n: int, edges: Sequence[tuple[int, int]], personal: Sequence[float], damping: float, iters: int) -> list[float]:
    """Plain-Python random walk with restart on an undirected unit-weight graph."""
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    total = sum(personal)
    p = [x / total for x in personal]
    r = list(p)
    for _ in range(iters):
        nxt = [(1 - damping) * p[i] for i in range(n)]
        dangling = sum(r[i] for i in range(n) if not nbrs[i])
        for i in range(n):
            nxt[i] += damping * dangling * p[i]
            for j in nbrs[i]:
                nxt[j] += damping * r[i] / len(nbrs[i])
        r = nxt
    return r


def pagerank_solve(n: int, edges: Sequence[tuple[int, int]], personal: Sequence[float], damping: float) -> np.ndarray:
    """Closed form: r = (1-d) p + d (W^T r + (dangling . r) p), solved as a linear system."""
    a = np.zeros((n, n))
    for u, v in edges:
        if u != v:
            a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    w = np.zeros((n, n))
    for i in range(n):
        if deg[i]:
            w[i] = a[i] / deg[i]
    p = np.asarray(personal, dtype=float)
    p = p / p.sum()
    dang = (deg == 0).astype(float)
    m = damping * (w.T + np.outer(p, dang))
    return np.linalg.solve(np.eye(n) - m, (1 - damping) * p)


def bfs_diameter(nodes: Sequence[str], edges: Iterable[tuple[str, str]]) -> tuple[int, int]:
    """(diameter of the largest undirected component, number of components) by repeated BFS."""
    adj: dict[str, set[str]] = {v: set() for v in nodes}
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    seen: set[str] = set()
    comps: list[list[str]] = []
    for v in sorted(nodes):
        if v in seen:
            continue
        comp, queue = [], deque([v])
        seen.add(v)
        while queue:
            x = queue.popleft()
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        comps.append(comp)
    if not comps:
        return 0, 0
    largest = min(comps, key=lambda c: (-len(c), min(c)))
    best = 0
    for s in largest:
        dist = {s: 0}
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        best = max(best, max(dist.values()))
    return best, len(comps)


def toy_graph(names: Sequence[str], origins: Sequence[set[str]], edges: Sequence[tuple[int, int]] = ()) -> KnowledgeGraph:
    g = KnowledgeGraph()
    for i, (name, orig) in enumerate(zip(names, origins)):
        g.add_entity(Entity(f"e{i}", name, "CONCEPT", f"about {name}", set(orig)))
    for a, b in edges:
        g.add_relation(Relation(f"e{a}", f"e{b}", "linked"))
    return g


def random_text(rng: random.Random, words: int = 6) -> str:
    vocab = ["river", "delta", "basin", "flow", "gauge", "dam", "port", "canal", "lock", "flood", "survey", "chart"]
    return " ".join(rng.choice(vocab) for _ in range(words))


# entity-resolution corpora with scripted alias structure

_RENDER = re.compile(r"^(.+?) \(([A-Z][A-Z_]*)\): ")


class AliasReranker:
    """Scores 1.0 when two renders name members of the same alias cluster, else a fixed value in [0.15, 0.2].

    Non-alias scores stay within a ratio of 0.75 of each other, so with g=0.6 a
    run of them never shows a gradient while the 1.0 -> 0.2 step always does.
    """

    def __init__(self, cluster_of: dict[str, int]):
        self.cluster_of = cluster_of

    def _name(self, render: str) -> str:
        m = _RENDER.match(render)
        return m.group(1) if m else render

    def rerank(self, query: str, candidates: Sequence[str]) -> list[float]:
        qn = self._name(query)
        out = []
        for c in candidates:
            cn = self._name(c)
            if self.cluster_of[qn] == self.cluster_of[cn]:
                out.append(1.0)
            else:
                h = int.from_bytes(hashlib.blake2b(f"{qn}|{cn}".encode(), digest_size=4).digest(), "little")
                out.append(0.15 + 0.05 * (h / 0xFFFFFFFF))
        return out


def alias_corpus(rng: random.Random, max_entities: int = 50) -> tuple[list[str], dict[str, int]]:
    """Entity names in resolution order plus their cluster labels.

    The first two names always come from different clusters: with a single
    stored entity there is no second score to drop to, so a lone alias could
    not be merged.
    """
    n = rng.randint(2, max_entities)
    n_clusters = rng.randint(2, n)
    labels = [0, 1] + [rng.randrange(n_clusters) for _ in range(n - 2)]
    rest = labels[2:]
    rng.shuffle(rest)
    labels[2:] = rest
    names = [f"Entity{i:03d} Z{labels[i]}" for i in range(n)]
    return names, dict(zip(names, labels))


# planner payloads (decomposition example with two retrieval steps and one synthesis step; filter-spec examples)

FIG8_QUERY = (
    "According to the report, which one is greater in population in the survey? "
    "Foreign born Latinos, or the Latinos interviewed by cellphone?"
)
FIG8_REPLY = json.dumps(
    {
        "sub_questions": [
            {"question": "According to the report, what is the population of foreign born Latinos in the survey?", "type": "retrieval"},
            {"question": "According to the report, what is the population of Latinos interviewed by cellphone in the survey?", "type": "retrieval"},
            {"question": "Which of the two population counts is greater?", "type": "synthesis"},
        ]
    }
)
FIG9_PAYLOADS = [
    '{"filters": [{"filter_type": "page", "filter_value": "3-10"}, {"filter_type": "image"}], "operation": "COUNT"}',
    '{"filters": [{"filter_type": "section", "filter_value": "Methodology"}], "operation": "SUMMARIZE"}',
    '{"filters": [{"filter_type": "section"}], "operation": "COUNT"}',
]

_SUBJECTS = ["the Danube", "the Iron Gate", "the Sulina channel", "Vienna", "the delta", "the sturgeon", "Budapest", "the Black Sea"]
_ASPECTS = ["length", "discharge", "history", "role", "depth", "population", "main use", "status"]


def category_queries(rng: random.Random, category: str, n: int) -> list[str]:
    """Random queries phrased so the rule-based mock classifier puts them in ``category``."""
    out = []
    for _ in range(n):
        a, b = rng.sample(_SUBJECTS, 2)
        asp = rng.choice(_ASPECTS)
        if category == "single-hop":
            q = rng.choice([f"What is the {asp} of {a}?", f"Where is {a} described?", f"Who manages {a}?"])
        elif category == "multi-hop":
            q = rng.choice(
                [
                    f"Is the {asp} of {a} greater than that of {b}?",
                    f"What is the {asp} of {a}, and what is the {asp} of {b}?",
                    f"Compare {a} with {b} in terms of {asp}.",
                ]
            )
        else:
            lo = rng.randint(1, 5)
            q = rng.choice(
                [
                    f"How many figures are on pages {lo} to {lo + rng.randint(0, 6)}?",
                    "How many tables are in the document?",
                    f"Summarize the section {rng.choice(['Hydrology', 'Ecology', 'Navigation'])}.",
                    "List all the charts in the document.",
                    "How many sections does the report have?",
                ]
            )
        out.append(q)
    return out


# queries over the synthetic fixture, one or more per category

SYNTHETIC_QUERIES = [
    "What is the mean discharge at the Iron Gate?",
    "Where does the Rhine Main Danube Canal lead?",
    "Which city hosts the largest river port in Hungary?",
    "What blocks Sturgeon migration upstream?",
    "What is the discharge at Vienna, and what is the discharge at the Iron Gate?",
    "Compare the Sturgeon population with the 2002 Flood damage.",
    "How many figures are on pages 3 to 9?",
    "How many tables are in the document?",
    "List all the charts in the document.",
    "Summarize the section Ecology.",
]
