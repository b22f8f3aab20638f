"""Load layout-parser output into an ordered sequence of blocks.

The on-disk format is line-delimited JSON. The first record is a header
carrying ``format_version`` (must be ``"1"``) and optionally ``doc_id`` and
``page_count``; every following record is one block::

    {"format_version": "1", "doc_id": "paper-7", "page_count": 12}
    {"id": "b1", "type": "Title", "content": "Method", "page": 2, "order": 1, "font_size": 14}
    {"id": "b2", "type": "Image", "image_path": "img/fig1.png", "page": 2, "order": 2}

Keys other than the documented ones are kept in ``Block.features``.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from bookindex.errors import FormatError, MissingField, UnresolvableImage

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"

_RESERVED = {"id", "type", "content", "image_path", "page", "order"}


class LayoutType(str, enum.Enum):
    TITLE = "Title"
    TEXT = "Text"
    TABLE = "Table"
    IMAGE = "Image"
    FORMULA = "Formula"

    @classmethod
    def coerce(cls, raw: Any, block_id: str = "?") -> "LayoutType":
        for member in cls:
            if isinstance(raw, str) and raw.strip().lower() == member.value.lower():
                return member
        logger.warning("block %s: unknown layout type %r, treated as Text", block_id, raw)
        return cls.TEXT


@dataclass(frozen=True)
class Block:
    id: str
    content: str
    layout_type: LayoutType
    order: int
    features: dict[str, Any] = field(default_factory=dict)

    @property
    def page(self) -> int:
        return self.features.get("page", 0)

    @property
    def font_size(self) -> float | None:
        return self.features.get("font_size")

    @property
    def bbox(self) -> list[float] | None:
        return self.features.get("bbox")

    @property
    def caption(self) -> str | None:
        return self.features.get("caption")


@dataclass(frozen=True)
class DocumentSource:
    doc_id: str
    page_count: int
    blocks: tuple[Block, ...]
    base_dir: Path | None = field(default=None, compare=False)

    def block(self, block_id: str) -> Block:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(block_id)


def _parse_record(rec: dict[str, Any], lineno: int, base_dir: Path | None, check_images: bool) -> Block:
    for key in ("id", "type", "page", "order"):
        if key not in rec:
            raise MissingField(f"line {lineno}: missing field {key!r}")
    block_id = str(rec["id"])
    layout_type = LayoutType.coerce(rec["type"], block_id)
    try:
        order = int(rec["order"])
        page = int(rec["page"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"line {lineno}: order/page must be integers") from exc

    if layout_type is LayoutType.IMAGE:
        if "image_path" not in rec and "content" not in rec:
            raise MissingField(f"line {lineno}: image block {block_id} has no image_path")
        content = str(rec.get("image_path", rec.get("content")))
        if check_images and base_dir is not None and not (base_dir / content).is_file():
            raise UnresolvableImage(f"block {block_id}: image {content!r} not found under {base_dir}")
    else:
        if "content" not in rec:
            raise MissingField(f"line {lineno}: missing field 'content'")
        content = rec["content"]
        if not isinstance(content, str):
            raise FormatError(f"line {lineno}: content must be a string")

    features: dict[str, Any] = {"page": page}
    for key, value in rec.items():
        if key not in _RESERVED:
            features[key] = value
    return Block(id=block_id, content=content, layout_type=layout_type, order=order, features=features)


def parse_blocks(
    lines: Iterable[str], *, base_dir: Path | None = None, check_images: bool = True
) -> DocumentSource:
    header: dict[str, Any] | None = None
    blocks: list[Block] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise FormatError(f"line {lineno}: record must be an object")
        if header is None:
            if "format_version" not in rec:
                raise FormatError("first record must be a header with format_version")
            if str(rec["format_version"]) != FORMAT_VERSION:
                raise FormatError(f"unsupported format_version {rec['format_version']!r}")
            header = rec
            continue
        blocks.append(_parse_record(rec, lineno, base_dir, check_images))

    if header is None:
        raise FormatError("empty block-list file")

    seen: dict[int, str] = {}
    for b in blocks:
        if b.order in seen:
            raise FormatError(f"duplicate order {b.order} (blocks {seen[b.order]} and {b.id})")
        seen[b.order] = b.id
    ids = [b.id for b in blocks]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate block ids")

    blocks.sort(key=lambda b: b.order)
    max_page = max((b.page for b in blocks), default=0)
    page_count = int(header.get("page_count", max_page))
    return DocumentSource(
        doc_id=str(header.get("doc_id", "doc")),
        page_count=page_count,
        blocks=tuple(blocks),
        base_dir=base_dir,
    )


def load_blocks(path: str | Path, *, check_images: bool = True) -> DocumentSource:
    """Read a block-list file and return its blocks sorted by ``order``."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        src = parse_blocks(fh, base_dir=path.parent, check_images=check_images)
    if not src.blocks:
        return src
    problems = validate_source(src, check_images=check_images)
    if problems:
        raise FormatError("; ".join(problems))
    return src


def block_to_record(b: Block) -> dict[str, Any]:
    rec: dict[str, Any] = {"id": b.id, "type": b.layout_type.value}
    if b.layout_type is LayoutType.IMAGE:
        rec["image_path"] = b.content
    else:
        rec["content"] = b.content
    rec["order"] = b.order
    rec.update(b.features)
    return rec


def dump_blocks(src: DocumentSource, path: str | Path) -> None:
    header = {"format_version": FORMAT_VERSION, "doc_id": src.doc_id, "page_count": src.page_count}
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for b in src.blocks:
            fh.write(json.dumps(block_to_record(b), ensure_ascii=False) + "\n")


def validate_source(src: DocumentSource, *, check_images: bool = True) -> list[str]:
    """Describe every invariant the source violates; empty means valid."""
    problems: list[str] = []
    if not src.blocks:
        return ["no blocks"]
    prev: int | None = None
    for b in src.blocks:
        if prev is not None and b.order <= prev:
            problems.append(f"block {b.id}: order {b.order} not strictly increasing")
        prev = b.order
        if b.page < 1:
            problems.append(f"block {b.id}: page {b.page} < 1")
        bbox = b.bbox
        if bbox is not None and any(c < 0 for c in bbox):
            problems.append(f"block {b.id}: negative bbox coordinate")
        if b.layout_type in (LayoutType.TEXT, LayoutType.TITLE) and not b.content.strip():
            problems.append(f"block {b.id}: empty content")
        if check_images and b.layout_type is LayoutType.IMAGE and src.base_dir is not None:
            if not (src.base_dir / b.content).is_file():
                problems.append(f"block {b.id}: image {b.content!r} unresolvable")
    max_page = max(b.page for b in src.blocks)
    if src.page_count < max_page:
        problems.append(f"page_count {src.page_count} < max referenced page {max_page}")
    return problems
