"""Synthesizers: per-item partial answers (Map) and the final answer (Reduce)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from bookindex.gateway import ModelGateway, render
from bookindex.index import BookIndex
from bookindex.operators.reasoners import TEXT_CAP, render_node
from bookindex.planner import Operation

NO_EVIDENCE = "No relevant content was found in the document."


@dataclass
class SubAnswer:
    question: str
    answer: str
    evidence: list[str] = field(default_factory=list)
    failed: bool = False

    def to_dict(self) -> dict:
        return {"question": self.question, "answer": self.answer, "evidence": list(self.evidence), "failed": self.failed}


def render_evidence(index: BookIndex, node_ids: Sequence[str], cap: int = TEXT_CAP) -> str:
    lines = []
    for nid in node_ids:
        n = index.tree.node(nid)
        text = " ".join(render_node(n, cap).split())
        lines.append(f"[{nid} p{n.page}] {text}")
    return "\n".join(lines)


def map_synthesize(
    items: Sequence[tuple[str, Sequence[str]]], index: BookIndex, gateway: ModelGateway
) -> list[SubAnswer]:
    """One partial answer per (question, evidence node ids) pair."""
    out = []
    for question, evidence in items:
        reply = gateway.complete(render("map", question=question, evidence=render_evidence(index, evidence)))
        out.append(SubAnswer(question, reply.strip(), list(evidence)))
    return out


def _render_parts(parts: Sequence[SubAnswer]) -> str:
    lines = []
    for i, p in enumerate(parts, 1):
        if p.failed:
            lines.append(f"[{i}: {p.question}] (no answer: this sub-question failed)")
        else:
            lines.append(f"[{i}: {p.question}] {' '.join(p.answer.split())}")
    return "\n".join(lines)


def _describe(index: BookIndex, nid: str) -> str:
    n = index.tree.node(nid)
    label = n.caption or " ".join(n.content.split())
    return f"{nid} (page {n.page})" + (f": {label[:120]}" if label else "")


def reduce_synthesize(
    q: str,
    parts: Sequence[SubAnswer] | Sequence[str],
    gateway: ModelGateway,
    index: BookIndex | None = None,
    operation: Operation | str | None = None,
    instruction: str | None = None,
) -> str:
    """Final answer from sub-answers or from evidence node ids.

    Global COUNT and LIST are answered directly from the filtered node ids;
    every other case asks the model.
    """
    op = Operation(operation) if operation else None
    node_parts = [p for p in parts if isinstance(p, str)]
    if op is Operation.COUNT and len(node_parts) == len(parts):
        n = len(node_parts)
        return f"Found {n} matching item{'s' if n != 1 else ''}."
    if op is Operation.LIST and len(node_parts) == len(parts) and index is not None:
        if not node_parts:
            return "Found 0 matching items."
        listing = "\n".join(f"{i}. {_describe(index, nid)}" for i, nid in enumerate(node_parts, 1))
        return f"Found {len(node_parts)} matching item{'s' if len(node_parts) != 1 else ''}:\n{listing}"
    if not parts:
        return NO_EVIDENCE
    if node_parts:
        if index is None:
            raise ValueError("evidence node ids need the index to render")
        body = render_evidence(index, node_parts)
    else:
        body = _render_parts(parts)  # type: ignore[arg-type]
    head = f"Instruction: {instruction}\n" if instruction else ""
    return gateway.complete(render("reduce", instruction=head, question=q, parts=body)).strip()
