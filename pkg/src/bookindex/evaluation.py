"""Answer and retrieval metrics, QA datasets, and batch evaluation.

Accuracy is judged on the raw generated answer; exact match and token F1 on
a short answer the model extracts from it.
"""

from __future__ import annotations

import json
import logging
import math
import re
import time
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from bookindex.errors import EmptyDataset, EmptyGold, FormatError
from bookindex.gateway import ModelGateway, render
from bookindex.index import BookIndex
from bookindex.operators import ExecConfig
from bookindex.pipeline import answer_question
from bookindex.planner import DEFAULT_SECTION_DEPTH

logger = logging.getLogger(__name__)

_SPACE = re.compile(r"\s+")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith(("P", "S"))


def normalize(text: str) -> str:
    """Lowercase, turn punctuation and symbols into spaces, collapse whitespace."""
    lowered = "".join(" " if _is_punct(ch) else ch for ch in text.lower())
    return _SPACE.sub(" ", lowered).strip()


def accuracy_inclusion(gold: str, raw: str) -> int:
    g = normalize(gold)
    if not g:
        logger.warning("empty gold answer counts as included")
        return 1
    return int(g in normalize(raw))


def exact_match(gold: str, extracted: str) -> int:
    return int(normalize(gold) == normalize(extracted))


def token_f1(gold: str, extracted: str) -> float:
    g = normalize(gold).split()
    p = normalize(extracted).split()
    if not g and not p:
        return 1.0
    if not g or not p:
        return 0.0
    common = sum((Counter(g) & Counter(p)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def retrieval_recall(gold: Iterable[str], retrieved: Iterable[str], parsing_error: bool = False) -> float:
    """Share of gold evidence blocks that were retrieved; 0 when the gold blocks failed to parse."""
    if parsing_error:
        return 0.0
    g = set(gold)
    if not g:
        raise EmptyGold("retrieval recall needs at least one gold block")
    return len(g & set(retrieved)) / len(g)


def extract_answer(raw: str, gateway: ModelGateway, question: str = "") -> str:
    if not raw.strip():
        return ""
    return gateway.complete(render("answer_extract", question=question, raw=raw)).strip()


# datasets


@dataclass(frozen=True)
class QaExample:
    qid: str
    question: str
    answer: str
    doc_id: str
    evidence: tuple[str, ...] | None = None
    parsing_error: bool = False

    def to_dict(self) -> dict[str, Any]:
        d = {"id": self.qid, "question": self.question, "answer": self.answer, "doc_id": self.doc_id}
        if self.evidence is not None:
            d["evidence"] = list(self.evidence)
        if self.parsing_error:
            d["parsing_error"] = True
        return d


def load_dataset(path: str | Path) -> list[QaExample]:
    """One JSON object per line: id, question, answer, doc_id, optional evidence and parsing_error."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FormatError(f"dataset {path} not found") from None
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            ev = rec.get("evidence")
            out.append(
                QaExample(
                    qid=str(rec.get("id", f"q{lineno}")),
                    question=str(rec["question"]),
                    answer=str(rec["answer"]),
                    doc_id=str(rec["doc_id"]),
                    evidence=tuple(str(b) for b in ev) if ev is not None else None,
                    parsing_error=bool(rec.get("parsing_error", False)),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad example ({exc})") from exc
    if not out:
        raise EmptyDataset(f"dataset {path} has no examples")
    return out


# evaluation runs


@dataclass
class ExampleRecord:
    qid: str
    doc_id: str
    category: str
    question: str
    gold: str
    raw_answer: str
    extracted: str
    em: int
    accuracy: int
    f1: float
    recall: float | None
    tokens: int
    latency_ms: float | None
    retrieved: list[str] = field(default_factory=list)
    error: str | None = None


METRICS = ("accuracy", "em", "f1", "recall")


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def aggregate(records: Sequence[ExampleRecord]) -> dict[str, Any]:
    def summary(rs: Sequence[ExampleRecord]) -> dict[str, Any]:
        out: dict[str, Any] = {"n": len(rs), "failed": sum(r.error is not None for r in rs)}
        for m in ("accuracy", "em", "f1"):
            out[m] = _mean([getattr(r, m) for r in rs])
        out["recall"] = _mean([r.recall for r in rs if r.recall is not None])
        out["tokens"] = _mean([r.tokens for r in rs])
        out["latency_ms"] = _mean([r.latency_ms for r in rs if r.latency_ms is not None])
        return out

    result = summary(records)
    result["by_category"] = {
        c: summary([r for r in records if r.category == c]) for c in sorted({r.category for r in records})
    }
    return result


@dataclass
class EvalReport:
    records: list[ExampleRecord]
    aggregates: dict[str, Any]

    @classmethod
    def from_records(cls, records: list[ExampleRecord]) -> "EvalReport":
        return cls(records, aggregate(records))

    def to_dict(self) -> dict[str, Any]:
        return {"aggregates": self.aggregates, "records": [asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        return cls([ExampleRecord(**r) for r in data["records"]], dict(data["aggregates"]))

    def consistent(self) -> bool:
        return aggregate(self.records) == self.aggregates


def _score(
    ex: QaExample,
    index: BookIndex,
    gateway: ModelGateway,
    exec_cfg: ExecConfig,
    section_depth: int,
    clock: Callable[[], float] | None,
) -> ExampleRecord:
    t0 = clock() if clock else 0.0
    category, raw, extracted, retrieved, error = "", "", "", [], None
    try:
        plan, result = answer_question(ex.question, index, gateway, exec_cfg, section_depth)
        category, raw, retrieved = plan.category.value, result.answer, result.retrieval.ids
        extracted = extract_answer(raw, gateway, ex.question)
    except Exception as exc:  # noqa: BLE001 - one failed example must not stop the run
        logger.warning("example %s failed: %s: %s", ex.qid, type(exc).__name__, exc)
        error = f"{type(exc).__name__}: {exc}"
    latency = round((clock() - t0) * 1000.0, 3) if clock else None
    recall: float | None = None
    if ex.parsing_error or ex.evidence:
        recall = retrieval_recall(ex.evidence or (), retrieved, ex.parsing_error)
    return ExampleRecord(
        qid=ex.qid,
        doc_id=ex.doc_id,
        category=category or "failed",
        question=ex.question,
        gold=ex.answer,
        raw_answer=raw,
        extracted=extracted,
        em=exact_match(ex.answer, extracted) if error is None else 0,
        accuracy=accuracy_inclusion(ex.answer, raw) if error is None else 0,
        f1=token_f1(ex.answer, extracted) if error is None else 0.0,
        recall=recall,
        tokens=gateway.usage.total,
        latency_ms=latency,
        retrieved=list(retrieved),
        error=error,
    )


def run_eval(
    dataset: Sequence[QaExample],
    indexes: Mapping[str, BookIndex],
    gateway: ModelGateway,
    exec_cfg: ExecConfig | None = None,
    section_depth: int = DEFAULT_SECTION_DEPTH,
    workers: int = 1,
    timings: bool = True,
) -> EvalReport:
    """Answer every example, score it, and aggregate. Failures are recorded, not raised."""
    if not dataset:
        raise EmptyDataset("no examples to evaluate")
    missing = sorted({ex.doc_id for ex in dataset} - set(indexes))
    if missing:
        raise FormatError(f"no index for doc ids {missing}")
    exec_cfg = exec_cfg or ExecConfig(timings=timings)
    clock = time.perf_counter if timings else None

    def one(ex: QaExample) -> ExampleRecord:
        return _score(ex, indexes[ex.doc_id], gateway.scoped(), exec_cfg, section_depth, clock)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, dataset))
    else:
        records = [one(ex) for ex in dataset]
    return EvalReport.from_records(records)
