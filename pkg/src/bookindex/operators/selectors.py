"""Selectors: narrow the node set by predicate or by section subtrees."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from bookindex.errors import InvalidRange, MalformedVerdict, NoSectionSelected
from bookindex.gateway import ModelGateway, render
from bookindex.index import BookIndex
from bookindex.jsonreply import parse_json_reply
from bookindex.textutil import match_key
from bookindex.tree import DocTree, NodeType, subtree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PageRange:
    start: int
    end: int

    def __post_init__(self):
        if self.start < 1 or self.end < 1:
            raise InvalidRange(f"page numbers must be positive: {self.start}-{self.end}")
        if self.start > self.end:
            raise InvalidRange(f"page range start {self.start} > end {self.end}")

    def __contains__(self, page: int) -> bool:
        return self.start <= page <= self.end


@dataclass(frozen=True)
class SectionRange:
    title: str


def _in_doc_order(tree: DocTree, ids: Iterable[str]) -> list[str]:
    return sorted((i for i in ids if i != tree.root), key=lambda i: tree.nodes[i].order)


def filter_modal(tree: DocTree, nodes: Sequence[str], modal_type: str | NodeType, depth: int | None = None) -> list[str]:
    """Nodes of the given type, optionally restricted to one tree depth."""
    try:
        wanted = NodeType(modal_type) if not isinstance(modal_type, NodeType) else modal_type
    except ValueError:
        raise InvalidRange(f"unknown modal type {modal_type!r}") from None
    out = []
    for nid in nodes:
        n = tree.node(nid)
        if n.node_type is wanted and (depth is None or tree.depth(nid) == depth):
            out.append(nid)
    return _in_doc_order(tree, out)


def sections_titled(tree: DocTree, title: str) -> list[str]:
    """Sections whose heading matches ``title`` exactly (case-insensitive), else by containment."""
    key = match_key(title)
    exact = [n.id for n in tree.sections() if match_key(n.content) == key]
    if exact:
        return exact
    return [n.id for n in tree.sections() if key and key in match_key(n.content)]


def filter_range(tree: DocTree, nodes: Sequence[str], rng: PageRange | SectionRange) -> list[str]:
    """Nodes on the given pages, or inside the subtree of the named section."""
    if isinstance(rng, PageRange):
        return _in_doc_order(tree, (n for n in nodes if tree.node(n).page in rng))
    targets = sections_titled(tree, rng.title)
    if not targets:
        logger.warning("no section titled %r", rng.title)
        return []
    allowed: set[str] = set()
    for t in targets:
        allowed |= subtree(tree, t)
    return _in_doc_order(tree, (n for n in nodes if n in allowed))


def target_section(tree: DocTree, node_id: str, depth: int) -> str:
    """The Section at ``depth`` on the path to ``node_id``.

    When the path holds no Section that deep, the deepest Section on it (the
    node itself if it is one) is used, and the root when there is none.
    """
    path = tree.ancestors(node_id) + [node_id]
    if depth < len(path) and tree.nodes[path[depth]].is_section:
        return path[depth]
    for nid in reversed(path):
        if tree.nodes[nid].is_section:
            return nid
    return tree.root


def select_by_entity(index: BookIndex, entity_ids: str | Sequence[str], depth: int = 1) -> list[str]:
    """Union of the section subtrees that contain any origin of the given entities."""
    if isinstance(entity_ids, str):
        entity_ids = [entity_ids]
    tree = index.tree
    targets: set[str] = set()
    for eid in entity_ids:
        for origin in index.graph.entity(eid).origins:
            targets.add(target_section(tree, origin, depth))
    selected: set[str] = set()
    for t in targets:
        selected |= subtree(tree, t)
    return _in_doc_order(tree, selected)


def candidate_sections(tree: DocTree, depth: int) -> list[str]:
    found = [n.id for n in tree.sections() if tree.depth(n.id) == depth]
    if found:
        return found
    # shallower documents: fall back to the deepest level that has sections
    depths = sorted({tree.depth(n.id) for n in tree.sections()})
    usable = [d for d in depths if d < depth]
    if usable:
        return [n.id for n in tree.sections() if tree.depth(n.id) == usable[-1]]
    return []


def select_by_section(
    index: BookIndex,
    q: str,
    gateway: ModelGateway,
    depth: int = 1,
    provenance: dict[str, str] | None = None,
) -> list[str]:
    """Let the model pick relevant sections at ``depth`` and return their subtrees."""
    tree = index.tree
    candidates = candidate_sections(tree, depth)
    if not candidates:
        return _in_doc_order(tree, tree.nodes)
    titles = {nid: tree.nodes[nid].content for nid in candidates}
    listing = "\n".join(f"- {t}" for t in titles.values())
    reply = gateway.complete(render("select_sections", query=q, sections=listing))
    if provenance is not None:
        provenance["select_sections"] = reply
    try:
        data = parse_json_reply(reply)
    except MalformedVerdict as exc:
        raise NoSectionSelected(f"section selection unparsable: {exc}") from exc
    picked = data.get("sections", []) if isinstance(data, dict) else data
    if not isinstance(picked, list):
        raise NoSectionSelected("section selection is not a list")
    by_key: dict[str, list[str]] = {}
    for nid, t in titles.items():
        by_key.setdefault(match_key(t), []).append(nid)
    chosen: list[str] = []
    for title in picked:
        ids = by_key.get(match_key(str(title)))
        if not ids:
            logger.warning("model picked unknown section %r", title)
            continue
        chosen.extend(i for i in ids if i not in chosen)
    if not chosen:
        raise NoSectionSelected(f"none of {picked!r} is a section title")
    selected: set[str] = set()
    for nid in chosen:
        selected |= subtree(tree, nid)
    return _in_doc_order(tree, selected)
