"""Command-line interface: build and inspect indexes, answer questions, run evaluations.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 model gateway error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from bookindex import __version__
from bookindex.config import Config, load_config
from bookindex.errors import BookIndexError, FormatError
from bookindex.evaluation import load_dataset, run_eval
from bookindex.index import MANIFEST_FILE, build_index, graph_stats, load, save
from bookindex.ingest import load_blocks
from bookindex.operators import execute
from bookindex.planner import plan_query, plan_to_json
from bookindex.report import text_table, write_report

logger = logging.getLogger("bookindex")

EXIT_OK, EXIT_USAGE = 0, 1
BUILD_REPORT_FILE = "build_report.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--mock", action="store_true", help="use the deterministic offline gateway")
    p.add_argument("--script", help="JSON script for the mock LLM (implies --mock)")
    p.add_argument("--g", type=float, help="gradient threshold for entity resolution")
    p.add_argument("--top-k", type=int, help="candidates considered per entity during resolution")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bookindex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    index = sub.add_parser("index", help="build or inspect an index")
    isub = index.add_subparsers(dest="index_command", required=True, parser_class=_Parser)
    b = isub.add_parser("build", help="index a block-list document")
    b.add_argument("doc", help="block-list JSONL file")
    b.add_argument("--out", help="output index directory")
    b.add_argument("--workers", type=int, help="parallel extraction workers")
    b.add_argument("--no-check-images", action="store_true", help="do not require image files to exist")
    _common(b)
    s = isub.add_parser("stats", help="graph statistics of an index")
    s.add_argument("index_dir")
    s.add_argument("--json", action="store_true")
    s.add_argument("-v", "--verbose", action="count", default=0)

    q = sub.add_parser("query", help="answer a question against an index")
    q.add_argument("index_dir")
    q.add_argument("question")
    q.add_argument("--trace", action="store_true", help="print the plan, operator trace and retrieval set as JSON")
    q.add_argument("--plan-only", action="store_true", help="print the plan without executing it")
    q.add_argument("--no-timings", action="store_true", help="leave step durations out of the trace")
    _common(q)

    e = sub.add_parser("eval", help="evaluate a QA dataset")
    e.add_argument("--index", action="append", required=True, help="index directory or corpus manifest (repeatable)")
    e.add_argument("--dataset", required=True, help="QA dataset JSONL")
    e.add_argument("--out", help="report directory")
    e.add_argument("--workers", type=int, help="examples evaluated concurrently")
    e.add_argument("--no-figures", action="store_true")
    e.add_argument("--no-timings", action="store_true", help="leave latencies out of the report")
    _common(e)
    return parser


def _config(args: argparse.Namespace) -> Config:
    flags: dict[str, Any] = {}
    gateway: dict[str, Any] = {}
    if getattr(args, "mock", False) or getattr(args, "script", None):
        gateway["mock"] = True
    if getattr(args, "script", None):
        gateway["mock_script"] = args.script
    if gateway:
        flags["gateway"] = gateway
    res = {k: v for k, v in (("g", getattr(args, "g", None)), ("top_k", getattr(args, "top_k", None))) if v is not None}
    if res:
        flags["resolution"] = res
    if getattr(args, "workers", None) is not None:
        flags["workers"] = args.workers
    return load_config(getattr(args, "config", None), flags=flags)


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True))


def cmd_index_build(args: argparse.Namespace) -> int:
    cfg = _config(args)
    src = load_blocks(args.doc, check_images=not args.no_check_images)
    gateway = cfg.make_gateway()
    index = build_index(src, gateway, cfg.build_config())
    out = Path(args.out or cfg.paths.index_dir)
    save(index, out)
    report = index.report.to_dict() if index.report else {}
    (out / BUILD_REPORT_FILE).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _print_json({"index": str(out), **report})
    return EXIT_OK


def cmd_index_stats(args: argparse.Namespace) -> int:
    stats = graph_stats(load(args.index_dir).graph)
    if args.json:
        _print_json(stats.to_dict())
    else:
        print(f"entities    {stats.entities}")
        print(f"relations   {stats.relations}")
        print(f"density     {stats.density:.6g}")
        print(f"diameter    {stats.diameter}")
        print(f"components  {stats.components}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    cfg = _config(args)
    index = load(args.index_dir)
    gateway = cfg.make_gateway()
    plan = plan_query(args.question, gateway, cfg.planner.section_depth)
    if args.plan_only:
        print(plan_to_json(plan))
        return EXIT_OK
    result = execute(plan, index, gateway, cfg.exec_config(timings=not args.no_timings))
    if args.trace:
        _print_json({"plan": plan.to_dict(), **result.to_dict()})
    else:
        print(result.answer)
    return EXIT_OK


def _resolve_indexes(specs: Sequence[str]) -> dict[str, Path]:
    """Index directories by doc id, from directories or manifest files ``{doc_id: path}``."""
    out: dict[str, Path] = {}
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            try:
                doc_id = json.loads((p / MANIFEST_FILE).read_text(encoding="utf-8"))["doc_id"]
            except (OSError, ValueError, KeyError) as exc:
                raise FormatError(f"{p}: not an index directory ({exc})") from exc
            out[str(doc_id)] = p
        elif p.is_file():
            try:
                data = yaml.safe_load(p.read_text(encoding="utf-8"))
            except yaml.YAMLError as exc:
                raise FormatError(f"corpus manifest {p}: {exc}") from exc
            if not isinstance(data, dict):
                raise FormatError(f"corpus manifest {p} must map doc ids to index directories")
            for doc_id, d in data.items():
                out[str(doc_id)] = (p.parent / str(d)).resolve()
        else:
            raise FormatError(f"{p} is neither an index directory nor a corpus manifest")
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dataset = load_dataset(args.dataset)
    indexes = {doc_id: load(path) for doc_id, path in _resolve_indexes(args.index).items()}
    gateway = cfg.make_gateway()
    timings = not args.no_timings
    report = run_eval(
        dataset,
        indexes,
        gateway,
        cfg.exec_config(timings=timings),
        cfg.planner.section_depth,
        workers=cfg.workers,
        timings=timings,
    )
    out = Path(args.out or cfg.paths.report_dir)
    paths = write_report(report, out, figures=not args.no_figures)
    print(text_table(report), end="")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {
    ("index", "build"): cmd_index_build,
    ("index", "stats"): cmd_index_stats,
    ("query", None): cmd_query,
    ("eval", None): cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handler = COMMANDS[(args.command, getattr(args, "index_command", None))]
    try:
        return handler(args)
    except BookIndexError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
