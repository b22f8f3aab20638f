"""Formulators: query decomposition and query-entity linking."""

from __future__ import annotations

import logging
from typing import Sequence

from bookindex.gateway import ModelGateway
from bookindex.index import BookIndex
from bookindex.planner import _query_mentions, decompose
from bookindex.resolution import nearest
from bookindex.textutil import match_key, normalize_name

logger = logging.getLogger(__name__)

THETA_LINK = 0.75

__all__ = ["THETA_LINK", "decompose", "extract_entities", "link_mentions", "query_mentions"]


def query_mentions(q: str, gateway: ModelGateway) -> list[str]:
    """Entity names the model finds in ``q``."""
    return _query_mentions(q, gateway, {}, "extract")


def link_mentions(
    mentions: Sequence[str], index: BookIndex, gateway: ModelGateway, theta_link: float = THETA_LINK
) -> list[str]:
    """Map each mention to a graph entity id, dropping the ones that do not link.

    An exact match on the normalised name wins; otherwise the nearest entity
    by embedding is used when its cosine similarity reaches ``theta_link``.
    """
    by_name: dict[str, list[str]] = {}
    for eid in sorted(index.graph.entities):
        by_name.setdefault(index.graph.entities[eid].key, []).append(eid)
    linked: list[str] = []
    for m in mentions:
        name = normalize_name(m)
        if not name:
            continue
        hits = by_name.get(match_key(name))
        if not hits and len(index.store):
            best_id, score = nearest(index.store, gateway.embed(name), 1)[0]
            if score >= theta_link:
                hits = [best_id]
            else:
                logger.info("mention %r unlinked (best %s at %.3f)", m, best_id, score)
        for eid in hits or []:
            if eid not in linked:
                linked.append(eid)
    return linked


def extract_entities(
    q: str,
    index: BookIndex,
    gateway: ModelGateway,
    theta_link: float = THETA_LINK,
    mentions: Sequence[str] | None = None,
) -> list[str]:
    """Linked entity ids for the query; an empty list means section selection should take over."""
    if mentions is None:
        mentions = query_mentions(q, gateway)
    return link_mentions(mentions, index, gateway, theta_link)
