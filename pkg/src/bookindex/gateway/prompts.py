"""Prompt templates shipped as text files next to this module."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

# slot whose value identifies a call for scripted mocks
KEY_SLOTS = {
    "classify": "query",
    "decompose": "query",
    "filter_spec": "query",
    "query_entities": "query",
    "select_sections": "query",
    "section_filter": "batch_ids",
    "extract_text": "node_id",
    "extract_vision": "node_id",
    "er_adjudicate": "new_name",
    "map": "question",
    "reduce": "question",
    "answer_extract": "raw",
}


@dataclass(frozen=True)
class Prompt:
    """A rendered prompt plus the metadata a scripted backend keys on."""

    name: str
    text: str
    key: str = ""
    slots: dict = field(default_factory=dict, compare=False, hash=False)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    source: str

    @property
    def slots(self) -> tuple[str, ...]:
        names = []
        for _, named, braced, _ in string.Template.pattern.findall(self.source):
            slot = named or braced
            if slot and slot not in names:
                names.append(slot)
        return tuple(names)

    def render(self, **values: object) -> Prompt:
        missing = [s for s in self.slots if s not in values]
        if missing:
            raise KeyError(f"template {self.name!r} missing slots {missing}")
        text = string.Template(self.source).substitute({k: str(v) for k, v in values.items()})
        key_slot = KEY_SLOTS.get(self.name)
        key = str(values.get(key_slot, "")) if key_slot else ""
        return Prompt(name=self.name, text=text, key=key, slots=dict(values))


@lru_cache(maxsize=None)
def get_template(name: str) -> PromptTemplate:
    try:
        source = resources.files("bookindex.gateway").joinpath("prompts", f"{name}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise KeyError(f"unknown prompt template {name!r}") from None
    return PromptTemplate(name=name, source=source)


def render(name: str, **values: object) -> Prompt:
    return get_template(name).render(**values)
