"""The assembled index: section tree, entity graph, vector store, and the entity-node links."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np

from bookindex.errors import (
    CorruptIndex,
    EmptyDocument,
    EmptyExtraction,
    GatewayError,
    IndexIOError,
    MalformedVerdict,
    UnresolvableImage,
    VersionMismatch,
)
from bookindex.gateway import ModelGateway
from bookindex.graph import KnowledgeGraph, Relation, embed_entity, extract_node_subgraph
from bookindex.ingest import DocumentSource
from bookindex.resolution import Decision, ResolutionConfig, VectorStore, resolve
from bookindex.tree import DEFAULT_BATCH_SIZE, DocTree, assemble_tree, check_tree, filter_sections

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
TREE_FILE = "tree.json"
GRAPH_FILE = "graph.json"
VECTORS_FILE = "vectors.bin"
VECTOR_IDS_FILE = "vectors.ids.json"
MANIFEST_FILE = "manifest.json"
VECTOR_DTYPE = "<f8"


@dataclass(frozen=True)
class BuildConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    resolution: ResolutionConfig = field(default_factory=ResolutionConfig)
    workers: int = 1


@dataclass
class BuildReport:
    nodes: int = 0
    extracted: int = 0
    entities: int = 0
    merges: int = 0
    relations: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": self.nodes,
            "extracted_entities": self.extracted,
            "entities": self.entities,
            "merges": self.merges,
            "relations": self.relations,
            "warnings": list(self.warnings),
        }


@dataclass
class BookIndex:
    tree: DocTree
    graph: KnowledgeGraph
    store: VectorStore
    doc_id: str
    report: BuildReport | None = field(default=None, compare=False)

    def problems(self) -> list[str]:
        out = check_tree(self.tree) + self.graph.integrity_problems()
        for e in self.graph.entities.values():
            for n in e.origins:
                if n not in self.tree.nodes:
                    out.append(f"entity {e.id}: origin {n} not in tree")
        if set(self.store.ids()) != set(self.graph.entities):
            out.append("vector store ids differ from graph entity ids")
        return out


@dataclass(frozen=True)
class GtLinkView:
    entity_to_nodes: dict[str, frozenset[str]]
    node_to_entities: dict[str, frozenset[str]]

    def nodes_of(self, entity_id: str) -> frozenset[str]:
        return self.entity_to_nodes.get(entity_id, frozenset())

    def entities_of(self, node_id: str) -> frozenset[str]:
        return self.node_to_entities.get(node_id, frozenset())


def gt_link(index: BookIndex) -> GtLinkView:
    """Both directions of the entity <-> tree-node mapping, derived from entity origins."""
    e2n: dict[str, frozenset[str]] = {}
    n2e: dict[str, set[str]] = {}
    for eid, e in index.graph.entities.items():
        e2n[eid] = frozenset(e.origins)
        for n in e.origins:
            n2e.setdefault(n, set()).add(eid)
    return GtLinkView(e2n, {n: frozenset(s) for n, s in n2e.items()})


def build_index(src: DocumentSource, gateway: ModelGateway, cfg: BuildConfig | None = None) -> BookIndex:
    """Tree construction, per-node extraction in document order, then entity resolution.

    Nodes whose extraction fails are skipped with a warning in the build report.
    """
    cfg = cfg or BuildConfig()
    if not src.blocks:
        raise EmptyDocument(f"document {src.doc_id!r} has no blocks")
    report = BuildReport()

    verdicts = filter_sections(src, gateway, cfg.batch_size, report.warnings)
    tree = assemble_tree(src, verdicts)
    report.warnings.extend(tree.warnings)
    nodes = tree.content_nodes()
    report.nodes = len(nodes)

    def extract(node):
        try:
            return extract_node_subgraph(node, gateway, image_root=src.base_dir)
        except (EmptyExtraction, MalformedVerdict, GatewayError, UnresolvableImage) as exc:
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(extract, nodes))
    else:
        results = [extract(n) for n in nodes]

    graph = KnowledgeGraph()
    store = VectorStore(gateway.dimension)
    # resolution is order dependent, so it always runs in document order
    for node, result in zip(nodes, results):
        if isinstance(result, Exception):
            report.warnings.append(f"node {node.id}: {type(result).__name__}: {result}")
            continue
        entities, relations = result
        report.extracted += len(entities)
        canonical: dict[str, str] = {}
        for e in entities:
            try:
                embed_entity(e, gateway, cfg.resolution.embed_budget)
                outcome = resolve(e, store, graph, gateway, cfg.resolution)
            except GatewayError as exc:
                report.warnings.append(f"entity {e.id} ({e.name}): {exc}")
                continue
            canonical[e.id] = outcome.canonical
            if outcome.decision is Decision.MERGED:
                report.merges += 1
        for r in relations:
            s, t = canonical.get(r.source), canonical.get(r.target)
            if s is None or t is None or s == t:
                continue
            graph.add_relation(Relation(s, t, r.description, r.kind))

    for w in report.warnings:
        logger.warning(w)
    report.entities = len(graph.entities)
    report.relations = len(graph.relations)
    return BookIndex(tree=tree, graph=graph, store=store, doc_id=src.doc_id, report=report)


# persistence


def _dump_json(obj: Any) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n").encode("utf-8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save(index: BookIndex, directory: str | Path) -> Path:
    """Write the index as tree/graph/vector files plus a checksummed manifest."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IndexIOError(f"cannot create {directory}: {exc}") from exc

    ids = index.store.ids()
    matrix = np.zeros((len(ids), index.store.dimension), dtype=VECTOR_DTYPE)
    for i, eid in enumerate(ids):
        matrix[i] = index.store.get(eid)
    payloads = {
        TREE_FILE: _dump_json(index.tree.to_dict()),
        GRAPH_FILE: _dump_json(index.graph.to_dict()),
        VECTORS_FILE: matrix.tobytes(order="C"),
        VECTOR_IDS_FILE: _dump_json(ids),
    }
    manifest = {
        "format_version": INDEX_FORMAT_VERSION,
        "doc_id": index.doc_id,
        "dimension": index.store.dimension,
        "vector_dtype": VECTOR_DTYPE,
        "entity_count": len(index.graph.entities),
        "node_count": len(index.tree.nodes),
        "relation_count": len(index.graph.relations),
        "files": {name: _sha256(data) for name, data in payloads.items()},
    }
    try:
        for name, data in payloads.items():
            (directory / name).write_bytes(data)
        (directory / MANIFEST_FILE).write_bytes(_dump_json(manifest))
    except OSError as exc:
        raise IndexIOError(f"cannot write index to {directory}: {exc}") from exc
    return directory


def load(directory: str | Path) -> BookIndex:
    directory = Path(directory)
    if not directory.is_dir():
        raise IndexIOError(f"index directory {directory} does not exist")
    try:
        manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptIndex(f"{directory}: missing {MANIFEST_FILE}") from None
    except (OSError, ValueError) as exc:
        raise CorruptIndex(f"{directory}: unreadable manifest ({exc})") from exc

    version = manifest.get("format_version")
    if not isinstance(version, int):
        raise CorruptIndex("manifest has no integer format_version")
    if version != INDEX_FORMAT_VERSION:
        raise VersionMismatch(f"index format_version {version}, this build reads {INDEX_FORMAT_VERSION}")

    blobs: dict[str, bytes] = {}
    for name in (TREE_FILE, GRAPH_FILE, VECTORS_FILE, VECTOR_IDS_FILE):
        expected = manifest.get("files", {}).get(name)
        try:
            data = (directory / name).read_bytes()
        except FileNotFoundError:
            raise CorruptIndex(f"{directory}: missing {name}") from None
        if expected is None or _sha256(data) != expected:
            raise CorruptIndex(f"{directory}: checksum mismatch for {name}")
        blobs[name] = data

    try:
        tree = DocTree.from_dict(json.loads(blobs[TREE_FILE]))
        graph = KnowledgeGraph.from_dict(json.loads(blobs[GRAPH_FILE]))
        ids = json.loads(blobs[VECTOR_IDS_FILE])
        dim = int(manifest["dimension"])
        matrix = np.frombuffer(blobs[VECTORS_FILE], dtype=manifest.get("vector_dtype", VECTOR_DTYPE))
        matrix = matrix.reshape(len(ids), dim).astype(np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptIndex(f"{directory}: {exc}") from exc

    store = VectorStore(dim)
    for eid, row in zip(ids, matrix):
        store.add(eid, row.copy())
        if eid in graph.entities:
            graph.entities[eid].embedding = store.get(eid)
    index = BookIndex(tree=tree, graph=graph, store=store, doc_id=str(manifest.get("doc_id", "")))
    problems = index.problems()
    if problems:
        raise CorruptIndex(f"{directory}: " + "; ".join(problems[:5]))
    return index


# statistics


@dataclass(frozen=True)
class GraphStats:
    entities: int
    relations: int
    density: float
    diameter: int
    components: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def graph_stats(graph: KnowledgeGraph) -> GraphStats:
    """Entity count, directed density, diameter of the largest component, and component count.

    Density counts distinct directed (source, target) pairs over |V|(|V|-1).
    The diameter is taken on the undirected largest connected component; ties
    go to the component holding the smallest entity id.
    """
    g = nx.DiGraph()
    g.add_nodes_from(graph.entities)
    g.add_edges_from((r.source, r.target) for r in graph.relations if r.source != r.target)
    n = g.number_of_nodes()
    density = g.number_of_edges() / (n * (n - 1)) if n > 1 else 0.0
    und = g.to_undirected()
    comps = list(nx.connected_components(und))
    diameter = 0
    if comps:
        largest = min(comps, key=lambda c: (-len(c), min(c)))
        diameter = nx.diameter(und.subgraph(largest)) if len(largest) > 1 else 0
    return GraphStats(n, len(graph.relations), density, diameter, len(comps))
