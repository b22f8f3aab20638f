"""Write an evaluation report as JSON, a plain-text table, CSV, and PNG figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from bookindex.evaluation import METRICS, EvalReport  # noqa: E402

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
RECORDS_CSV = "records.csv"
METRICS_PNG = "metrics.png"
COST_PNG = "cost.png"

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
}
_COLORS = ["#4C72B0", "#DD8452", "#55A868", "#C44E52"]
_CSV_FIELDS = ["qid", "doc_id", "category", "em", "accuracy", "f1", "recall", "tokens", "latency_ms", "error"]


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def text_table(report: EvalReport) -> str:
    cols = ["group", "n", "failed", *METRICS, "tokens", "latency_ms"]
    rows = [["all"] + [_fmt(report.aggregates.get(c)) for c in cols[1:]]]
    for cat, agg in report.aggregates.get("by_category", {}).items():
        rows.append([cat] + [_fmt(agg.get(c)) for c in cols[1:]])
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
    line = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    out = [line, "  ".join("-" * w for w in widths)]
    out += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(out) + "\n"


def write_csv(report: EvalReport, path: Path, delimiter: str = ",") -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=_CSV_FIELDS, delimiter=delimiter, extrasaction="ignore")
        w.writeheader()
        for r in report.records:
            w.writerow({k: getattr(r, k) for k in _CSV_FIELDS})


def plot_metrics(report: EvalReport, path: Path) -> None:
    groups = ["all", *report.aggregates.get("by_category", {})]
    aggs = [report.aggregates, *report.aggregates.get("by_category", {}).values()]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        width = 0.8 / len(METRICS)
        for i, m in enumerate(METRICS):
            vals = [a.get(m) or 0.0 for a in aggs]
            xs = [g + (i - (len(METRICS) - 1) / 2) * width for g in range(len(groups))]
            ax.bar(xs, vals, width, label=m, color=_COLORS[i % len(_COLORS)])
        ax.set_xticks(range(len(groups)), groups)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend(ncol=len(METRICS), fontsize=7, loc="upper center", bbox_to_anchor=(0.5, 1.15), frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def plot_cost(report: EvalReport, path: Path) -> None:
    recs = report.records
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        xs = range(len(recs))
        ax.bar(xs, [r.tokens for r in recs], color=_COLORS[0])
        ax.set_xticks(list(xs), [r.qid for r in recs], rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("tokens")
        if any(r.latency_ms is not None for r in recs):
            ax2 = ax.twinx()
            ax2.plot(list(xs), [r.latency_ms or 0.0 for r in recs], "o-", color=_COLORS[1], ms=3)
            ax2.set_ylabel("latency (ms)")
            ax2.grid(False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def write_report(report: EvalReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / REPORT_JSON, out / REPORT_TXT, out / RECORDS_CSV]
    paths[0].write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    paths[1].write_text(text_table(report), encoding="utf-8")
    write_csv(report, paths[2])
    if figures:
        plot_metrics(report, out / METRICS_PNG)
        plot_cost(report, out / COST_PNG)
        paths += [out / METRICS_PNG, out / COST_PNG]
    return paths


def read_report(path: str | Path) -> EvalReport:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_JSON
    return EvalReport.from_dict(json.loads(p.read_text(encoding="utf-8")))
