"""Section tree construction: title filtering with a model, then level-driven assembly."""

from __future__ import annotations

import enum
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from bookindex.errors import LevelJumpWarning, MalformedVerdict, UnknownNode
from bookindex.gateway import ModelGateway, render
from bookindex.ingest import DocumentSource, LayoutType
from bookindex.jsonreply import parse_json_reply

logger = logging.getLogger(__name__)

ROOT_ID = "_root"
DEFAULT_BATCH_SIZE = 20


class NodeType(str, enum.Enum):
    SECTION = "Section"
    TEXT = "Text"
    TABLE = "Table"
    IMAGE = "Image"
    FORMULA = "Formula"


_FROM_LAYOUT = {
    LayoutType.TEXT: NodeType.TEXT,
    LayoutType.TABLE: NodeType.TABLE,
    LayoutType.IMAGE: NodeType.IMAGE,
    LayoutType.FORMULA: NodeType.FORMULA,
}


@dataclass
class TreeNode:
    id: str
    node_type: NodeType
    content: str
    page: int
    order: int
    level: int | None = None
    parent: str | None = None
    children: list[str] = field(default_factory=list)
    features: dict[str, Any] = field(default_factory=dict)

    @property
    def is_section(self) -> bool:
        return self.node_type is NodeType.SECTION

    @property
    def caption(self) -> str | None:
        return self.features.get("caption")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "node_type": self.node_type.value,
            "content": self.content,
            "page": self.page,
            "order": self.order,
            "level": self.level,
            "parent": self.parent,
            "children": list(self.children),
            "features": self.features,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TreeNode":
        return cls(
            id=d["id"],
            node_type=NodeType(d["node_type"]),
            content=d["content"],
            page=d["page"],
            order=d["order"],
            level=d["level"],
            parent=d["parent"],
            children=list(d["children"]),
            features=dict(d.get("features", {})),
        )


@dataclass
class DocTree:
    root: str
    nodes: dict[str, TreeNode]
    warnings: list[str] = field(default_factory=list, compare=False)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def walk(self, start: str | None = None) -> Iterator[TreeNode]:
        """Pre-order traversal, children in document order."""
        stack = [self.node(start or self.root)]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(self.nodes[c] for c in reversed(n.children))

    def content_nodes(self) -> list[TreeNode]:
        """All nodes except the synthetic root, in document order."""
        return sorted((n for n in self.nodes.values() if n.id != self.root), key=lambda n: n.order)

    def sections(self) -> list[TreeNode]:
        return [n for n in self.content_nodes() if n.is_section]

    def ancestors(self, node_id: str) -> list[str]:
        """Ids from the root down to (excluding) ``node_id``."""
        path = []
        cur = self.node(node_id).parent
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur].parent
        return path[::-1]

    def depth(self, node_id: str) -> int:
        return len(self.ancestors(node_id))

    def to_dict(self) -> dict[str, Any]:
        ordered = sorted(self.nodes.values(), key=lambda n: (n.id != self.root, n.order, n.id))
        return {"root": self.root, "nodes": [n.to_dict() for n in ordered]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DocTree":
        nodes = {nd["id"]: TreeNode.from_dict(nd) for nd in d["nodes"]}
        return cls(root=d["root"], nodes=nodes)


@dataclass(frozen=True)
class SectionVerdict:
    block_id: str
    level: int | None
    node_type: NodeType


def subtree(tree: DocTree, section: str) -> set[str]:
    """The node plus all of its transitive descendants."""
    return {n.id for n in tree.walk(section)}


def _context_lines(resolved: list[tuple[str, int]]) -> str:
    lines = [f"- {title} -> {level}" for title, level in resolved if level <= 2]
    return "\n".join(lines) if lines else "(none yet)"


def _parse_verdicts(reply: str, batch_ids: list[str], sink: list[str]) -> dict[str, SectionVerdict]:
    try:
        data = parse_json_reply(reply)
    except MalformedVerdict as exc:
        sink.append(f"section filter reply unparsable ({exc}); batch {batch_ids} kept as Text")
        return {}
    if isinstance(data, dict):
        data = data.get("verdicts", data.get("sections", []))
    if not isinstance(data, list):
        sink.append(f"section filter reply is not a list; batch {batch_ids} kept as Text")
        return {}
    wanted = set(batch_ids)
    out: dict[str, SectionVerdict] = {}
    for item in data:
        if not isinstance(item, dict) or str(item.get("block_id")) not in wanted:
            sink.append(f"ignoring stray section verdict {item!r}")
            continue
        bid = str(item["block_id"])
        level = item.get("level")
        kind = str(item.get("type") or ("Section" if level is not None else "Text")).strip().lower()
        if isinstance(level, str) and level.strip().lower() in ("none", "null", ""):
            level = None
        try:
            level = None if level is None else int(level)
        except (TypeError, ValueError):
            sink.append(f"block {bid}: malformed level {level!r}, kept as Text")
            out[bid] = SectionVerdict(bid, None, NodeType.TEXT)
            continue
        if kind == "section" and level is not None and level >= 1:
            out[bid] = SectionVerdict(bid, level, NodeType.SECTION)
        elif kind == "text" and level is None:
            out[bid] = SectionVerdict(bid, None, NodeType.TEXT)
        else:
            sink.append(f"block {bid}: inconsistent verdict type={kind!r} level={level!r}, kept as Text")
            out[bid] = SectionVerdict(bid, None, NodeType.TEXT)
    return out


def filter_sections(
    src: DocumentSource,
    gateway: ModelGateway,
    batch_size: int = DEFAULT_BATCH_SIZE,
    warnings_sink: list[str] | None = None,
) -> list[SectionVerdict]:
    """Ask the model which Title blocks are real headings and at what level.

    Titles are sent in batches of ``batch_size``; every batch prompt carries
    the level-1 and level-2 headings confirmed by earlier batches. Titles the
    model rejects, or whose verdict cannot be parsed, become Text. Non-title
    blocks are passed through with their layout type.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sink = warnings_sink if warnings_sink is not None else []
    titles = [b for b in src.blocks if b.layout_type is LayoutType.TITLE]
    decided: dict[str, SectionVerdict] = {}
    resolved: list[tuple[str, int]] = []

    for start in range(0, len(titles), batch_size):
        batch = titles[start : start + batch_size]
        ids = [b.id for b in batch]
        candidates = "\n".join(
            json.dumps({"block_id": b.id, "text": b.content, "font_size": b.font_size, "page": b.page}, ensure_ascii=False)
            for b in batch
        )
        prompt = render(
            "section_filter",
            context=_context_lines(resolved),
            candidates=candidates,
            batch_ids=",".join(ids),
        )
        reply = gateway.complete(prompt)  # GatewayError propagates
        parsed = _parse_verdicts(reply, ids, sink)
        for b in batch:
            v = parsed.get(b.id)
            if v is None:
                sink.append(f"block {b.id}: no verdict returned, kept as Text")
                v = SectionVerdict(b.id, None, NodeType.TEXT)
            decided[b.id] = v
            if v.level is not None:
                resolved.append((b.content, v.level))

    for w in sink:
        logger.warning(w)

    verdicts = []
    for b in src.blocks:
        if b.layout_type is LayoutType.TITLE:
            verdicts.append(decided[b.id])
        else:
            verdicts.append(SectionVerdict(b.id, None, _FROM_LAYOUT[b.layout_type]))
    return verdicts


def assemble_tree(
    src: DocumentSource,
    verdicts: Iterable[SectionVerdict],
    root_id: str = ROOT_ID,
) -> DocTree:
    """Link blocks into a tree from their levels and document order.

    A Section hangs under the closest preceding Section with a smaller level
    (or the root); any other node hangs under the closest preceding Section.
    """
    by_id = {v.block_id: v for v in verdicts}
    missing = [b.id for b in src.blocks if b.id not in by_id]
    if missing:
        raise ValueError(f"no verdict for blocks {missing}")
    if root_id in by_id:
        raise ValueError(f"block id {root_id!r} collides with the root id")

    root = TreeNode(id=root_id, node_type=NodeType.SECTION, content=src.doc_id, page=0, order=-1, level=0)
    nodes: dict[str, TreeNode] = {root_id: root}
    tree_warnings: list[str] = []
    stack: list[TreeNode] = [root]  # open sections, strictly increasing level
    last_level = 0

    for b in src.blocks:
        v = by_id[b.id]
        features = {k: val for k, val in b.features.items() if k != "page"}
        node = TreeNode(
            id=b.id,
            node_type=v.node_type,
            content=b.content,
            page=b.page,
            order=b.order,
            level=v.level if v.node_type is NodeType.SECTION else None,
            features=features,
        )
        if node.is_section:
            assert node.level is not None
            if node.level > last_level + 1:
                msg = f"section {b.id!r} jumps from level {last_level} to {node.level}"
                tree_warnings.append(msg)
                warnings.warn(msg, LevelJumpWarning, stacklevel=2)
            while stack[-1].level >= node.level:
                stack.pop()
            parent = stack[-1]
            stack.append(node)
            last_level = node.level
        else:
            parent = stack[-1]
        node.parent = parent.id
        parent.children.append(node.id)
        nodes[node.id] = node

    return DocTree(root=root_id, nodes=nodes, warnings=tree_warnings)


def check_tree(tree: DocTree) -> list[str]:
    """Structural invariant violations (empty when the tree is well formed)."""
    problems = []
    roots = [n.id for n in tree.nodes.values() if n.parent is None]
    if roots != [tree.root]:
        problems.append(f"expected single root {tree.root!r}, found {roots}")
    for n in tree.nodes.values():
        if n.is_section != (n.level is not None):
            problems.append(f"{n.id}: section/level mismatch")
        if n.parent is not None:
            p = tree.nodes.get(n.parent)
            if p is None or n.id not in p.children:
                problems.append(f"{n.id}: parent link broken")
        orders = [tree.nodes[c].order for c in n.children]
        if orders != sorted(orders):
            problems.append(f"{n.id}: children out of document order")
        if n.is_section and n.id != tree.root:
            for a in tree.ancestors(n.id):
                if tree.nodes[a].level is not None and tree.nodes[a].level >= n.level:
                    problems.append(f"{n.id}: level not deeper than ancestor {a}")
    if len(subtree(tree, tree.root)) != len(tree.nodes):
        problems.append("tree is not connected")
    return problems
