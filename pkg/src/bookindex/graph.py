"""Entity graph types and per-node extraction."""

from __future__ import annotations

import html
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from bookindex.errors import EmptyExtraction, MalformedVerdict, UnknownEntity, UnresolvableImage
from bookindex.gateway import ModelGateway, render
from bookindex.jsonreply import parse_json_reply
from bookindex.textutil import match_key, normalize_name, truncate
from bookindex.tree import NodeType, TreeNode

logger = logging.getLogger(__name__)

CONTAINED_IN = "ContainedIn"
RELATED = "RelatedTo"
EMBED_CHAR_BUDGET = 512


@dataclass
class Entity:
    id: str
    name: str
    entity_type: str
    description: str
    origins: set[str]
    embedding: np.ndarray | None = None

    def __post_init__(self):
        self.name = normalize_name(self.name)
        if not self.name:
            raise ValueError("entity name must be non-empty")

    @property
    def key(self) -> str:
        return match_key(self.name)

    def render(self, budget: int = EMBED_CHAR_BUDGET) -> str:
        """Text used for both embedding and reranking."""
        return truncate(f"{self.name} ({self.entity_type}): {self.description}", budget)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Entity):
            return NotImplemented
        same_vec = (self.embedding is None and other.embedding is None) or (
            self.embedding is not None
            and other.embedding is not None
            and self.embedding.shape == other.embedding.shape
            and self.embedding.tobytes() == other.embedding.tobytes()
        )
        return (
            self.id == other.id
            and self.name == other.name
            and self.entity_type == other.entity_type
            and self.description == other.description
            and self.origins == other.origins
            and same_vec
        )


@dataclass(frozen=True)
class Relation:
    source: str
    target: str
    description: str = ""
    kind: str = RELATED


def merge_descriptions(*texts: str) -> str:
    """Newline-join, dropping exact duplicate lines and keeping first-seen order."""
    seen: list[str] = []
    for t in texts:
        for line in t.splitlines():
            line = line.strip()
            if line and line not in seen:
                seen.append(line)
    return "\n".join(seen)


@dataclass
class KnowledgeGraph:
    entities: dict[str, Entity] = field(default_factory=dict)
    relations: list[Relation] = field(default_factory=list)

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise UnknownEntity(entity_id) from None

    def add_entity(self, e: Entity) -> None:
        if e.id in self.entities:
            raise ValueError(f"duplicate entity id {e.id!r}")
        self.entities[e.id] = e

    def add_relation(self, r: Relation) -> None:
        if r.source not in self.entities or r.target not in self.entities:
            raise UnknownEntity(f"relation endpoint missing: {r.source} -> {r.target}")
        if r.source == r.target:
            return
        self.relations.append(r)

    def find_by_name(self, name: str) -> list[str]:
        k = match_key(name)
        return [eid for eid, e in self.entities.items() if e.key == k]

    def integrity_problems(self) -> list[str]:
        problems = []
        for r in self.relations:
            if r.source not in self.entities or r.target not in self.entities:
                problems.append(f"dangling relation {r.source}->{r.target}")
            if r.source == r.target:
                problems.append(f"self-loop on {r.source}")
        for e in self.entities.values():
            if not e.origins:
                problems.append(f"entity {e.id} has no origin")
        return problems

    def to_dict(self) -> dict[str, Any]:
        return {
            "entities": [
                {
                    "id": e.id,
                    "name": e.name,
                    "entity_type": e.entity_type,
                    "description": e.description,
                    "origins": sorted(e.origins),
                }
                for e in sorted(self.entities.values(), key=lambda e: e.id)
            ],
            "relations": [
                {"source": r.source, "target": r.target, "description": r.description, "kind": r.kind}
                for r in self.relations
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KnowledgeGraph":
        g = cls()
        for ed in d["entities"]:
            g.add_entity(Entity(ed["id"], ed["name"], ed["entity_type"], ed["description"], set(ed["origins"])))
        for rd in d["relations"]:
            g.add_relation(Relation(rd["source"], rd["target"], rd.get("description", ""), rd.get("kind", RELATED)))
        return g


# table header parsing

_HTML_ROW = re.compile(r"<tr[^>]*>(.*?)</tr>", re.S | re.I)
_HTML_CELL = re.compile(r"<t([hd])[^>]*>(.*?)</t[hd]>", re.S | re.I)
_TAG = re.compile(r"<[^>]+>")


def _rows(content: str) -> list[list[str]]:
    if "<tr" in content.lower():
        rows = []
        for row in _HTML_ROW.findall(content):
            rows.append([html.unescape(_TAG.sub("", cell)).strip() for _, cell in _HTML_CELL.findall(row)])
        return [r for r in rows if r]
    rows = []
    for line in content.splitlines():
        line = line.strip()
        if not line:
            continue
        if "|" in line:
            cells = [c.strip() for c in line.strip("|").split("|")]
            if all(re.fullmatch(r":?-{2,}:?", c) for c in cells if c):
                continue  # markdown separator row
        elif "\t" in line:
            cells = [c.strip() for c in line.split("\t")]
        else:
            continue
        rows.append(cells)
    return rows


def table_headers(content: str) -> list[str]:
    """Column headers (first row), plus row labels when the top-left cell is blank."""
    rows = _rows(content)
    if not rows:
        return []
    headers = [c for c in rows[0] if c]
    if rows[0] and not rows[0][0]:
        headers += [r[0] for r in rows[1:] if r and r[0]]
    out: list[str] = []
    for h in headers:
        h = normalize_name(h)
        if h and match_key(h) not in {match_key(o) for o in out}:
            out.append(h)
    return out


# extraction


def _primary_name(node: TreeNode, label: str) -> str:
    if node.caption and normalize_name(node.caption):
        return normalize_name(node.caption)
    return f"{label} on page {node.page} ({node.id})"


def _parse_extraction(reply: str) -> tuple[list[dict], list[dict]]:
    data = parse_json_reply(reply)
    if not isinstance(data, dict):
        raise MalformedVerdict("extraction reply must be a JSON object")
    ents = data.get("entities") or []
    rels = data.get("relations") or []
    if not isinstance(ents, list) or not isinstance(rels, list):
        raise MalformedVerdict("entities/relations must be lists")
    return ents, rels


def extract_node_subgraph(
    node: TreeNode,
    gateway: ModelGateway,
    *,
    image_root: Path | None = None,
) -> tuple[list[Entity], list[Relation]]:
    """Entities and relations found in one tree node.

    Entity ids are ``"<node id>#<i>"`` and every entity's origin is the node.
    Section nodes yield a single SECTION entity without a model call. Table
    and Formula nodes get a primary typed entity that every other entity of
    the node points to with a ``ContainedIn`` relation; table headers become
    entities of their own.
    """
    if node.node_type is NodeType.SECTION:
        heading = normalize_name(node.content)
        if not heading:
            raise EmptyExtraction(f"section {node.id} has an empty heading")
        e = Entity(f"{node.id}#0", heading, "SECTION", f"Section heading (level {node.level})", {node.id})
        return [e], []

    caption = node.caption or ""
    caption_line = f"Caption: {caption}" if caption else ""
    if node.node_type is NodeType.IMAGE:
        if image_root is None:
            raise UnresolvableImage(f"image node {node.id}: no image root to load {node.content!r}")
        path = image_root / node.content
        try:
            image = path.read_bytes()
        except OSError as exc:
            raise UnresolvableImage(f"image node {node.id}: cannot read {path}") from exc
        prompt = render("extract_vision", node_id=node.id, caption_line=caption_line, caption=caption)
        reply = gateway.complete_vision(prompt, image)
    else:
        if not node.content.strip():
            raise EmptyExtraction(f"node {node.id} has no content")
        prompt = render(
            "extract_text",
            node_id=node.id,
            node_type=node.node_type.value,
            caption_line=caption_line,
            content=node.content,
        )
        reply = gateway.complete(prompt)

    raw_entities, raw_relations = _parse_extraction(reply)

    entities: list[Entity] = []
    by_key: dict[str, Entity] = {}

    def add(name: str, etype: str, desc: str) -> Entity | None:
        name = normalize_name(str(name or ""))
        if not name:
            return None
        k = match_key(name)
        if k in by_key:
            existing = by_key[k]
            existing.description = merge_descriptions(existing.description, desc)
            return existing
        e = Entity(f"{node.id}#{len(entities)}", name, etype or "CONCEPT", merge_descriptions(desc), {node.id})
        entities.append(e)
        by_key[k] = e
        return e

    primary: Entity | None = None
    headers: list[Entity] = []
    if node.node_type in (NodeType.TABLE, NodeType.FORMULA):
        label = "Table" if node.node_type is NodeType.TABLE else "Formula"
        desc = caption or truncate(node.content, 200)
        primary = add(_primary_name(node, label), label.upper(), desc)
        if node.node_type is NodeType.TABLE:
            for h in table_headers(node.content):
                he = add(h, "HEADER", f"Header of {primary.name}")
                if he is not None and he is not primary:
                    headers.append(he)

    for item in raw_entities:
        if not isinstance(item, dict):
            continue
        add(item.get("name", ""), str(item.get("type") or "CONCEPT").upper(), str(item.get("description") or ""))

    if not entities:
        raise EmptyExtraction(f"node {node.id}: model returned no entities")

    relations: list[Relation] = []
    for item in raw_relations:
        if not isinstance(item, dict):
            continue
        s = by_key.get(match_key(str(item.get("source", ""))))
        t = by_key.get(match_key(str(item.get("target", ""))))
        if s is None or t is None or s is t:
            logger.debug("node %s: dropping relation %r", node.id, item)
            continue
        relations.append(Relation(s.id, t.id, str(item.get("description") or ""), RELATED))

    if primary is not None:
        relations = [r for r in relations if primary.id not in (r.source, r.target) or r.kind == CONTAINED_IN]
        for e in entities:
            if e is not primary:
                desc = "header of" if e in headers else "appears in"
                relations.append(Relation(e.id, primary.id, f"{e.name} {desc} {primary.name}", CONTAINED_IN))
    return entities, relations


def embed_entity(e: Entity, gateway: ModelGateway, budget: int = EMBED_CHAR_BUDGET) -> Entity:
    if not e.name:
        raise ValueError("entity name must be non-empty")
    e.embedding = gateway.embed(e.render(budget))
    return e
