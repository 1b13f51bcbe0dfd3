"""Command-line entry point: gen, run, classify, report, schemas."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .backends import (
    FaultBackend,
    FaultProfile,
    GoldenBackend,
    RemoteBackend,
    RemoteEndpointConfig,
    ReplayBackend,
)
from .classify import classify_trace
from .report import TRACE_FILE, ReportFormat, load_archive, read_summary, render_reports
from .runner import run_evaluation
from .scenario import Dataset, generate_dataset
from .tools import describe_tools
from .trace import dumps_line, read_trace
from .workflow import DEFAULT_LIMIT

log = logging.getLogger("tooldiag")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tooldiag", description="Tool-call failure diagnostics for a three-agent invoice workflow.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, required=True, help="dataset seed")
    g.add_argument("--count", type=int, required=True, help="number of tasks (even)")
    g.add_argument("--out", required=True, help="output JSONL path")

    r = sub.add_parser("run", help="run a dataset against a backend and write an archive")
    r.add_argument("--dataset", required=True, help="dataset JSONL from `gen`")
    r.add_argument("--backend", required=True, choices=("golden", "fault", "replay", "remote"))
    r.add_argument("--profile", help="fault profile JSON (fault backend)")
    r.add_argument("--replay-trace", help="trace JSONL or archive directory to replay (replay backend)")
    r.add_argument("--remote-config", help="endpoint config JSON (remote backend)")
    r.add_argument("--base-url", help="endpoint base URL, instead of --remote-config")
    r.add_argument("--model", help="model name, instead of --remote-config")
    r.add_argument("--label", help="model label shown in reports")
    r.add_argument("--limit", type=int, default=DEFAULT_LIMIT, help="recursion limit in steps (default 25)")
    r.add_argument("--workers", type=int, default=1, help="parallel tasks (default 1)")
    r.add_argument("--tasks", type=int, help="only run the first N tasks")
    r.add_argument("--run-id", help="fixed run id (default: random)")
    r.add_argument("--out", required=True, help="archive directory")

    c = sub.add_parser("classify", help="re-label failed tasks offline from a trace")
    c.add_argument("--trace", required=True, help="trace JSONL or archive directory")
    c.add_argument("--dataset", required=True, help="dataset JSONL the trace was produced from")
    c.add_argument("--out", required=True, help="output JSONL of labels, '-' for stdout")

    rep = sub.add_parser("report", help="render tables from one or more archives")
    rep.add_argument("--runs", nargs="+", required=True, help="archive directories")
    rep.add_argument("--format", choices=[f.value for f in ReportFormat], default="md")
    rep.add_argument("--out", default="-", help="output path, '-' for stdout")

    sub.add_parser("schemas", help="print the tool schemas as JSON")
    return p


def _trace_path(path: str) -> Path:
    p = Path(path)
    return p / TRACE_FILE if p.is_dir() else p


def _write(out: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _backend(args: argparse.Namespace):
    if args.backend == "golden":
        return GoldenBackend(args.label or "golden")
    if args.backend == "fault":
        if not args.profile:
            raise UsageError("--backend fault needs --profile")
        return FaultBackend(FaultProfile.read(args.profile), args.label or "fault")
    if args.backend == "replay":
        if not args.replay_trace:
            raise UsageError("--backend replay needs --replay-trace")
        return ReplayBackend.from_trace(_trace_path(args.replay_trace), args.label)
    if args.remote_config:
        config = RemoteEndpointConfig.read(args.remote_config)
    elif args.base_url and args.model:
        config = RemoteEndpointConfig(base_url=args.base_url, model_name=args.model)
    else:
        raise UsageError("--backend remote needs --remote-config or both --base-url and --model")
    return RemoteBackend(config)


def cmd_gen(args: argparse.Namespace) -> int:
    if args.count <= 0 or args.count % 2:
        raise UsageError("--count must be a positive even number")
    dataset = generate_dataset(args.seed, args.count)
    dataset.write(args.out)
    log.info("wrote %d tasks to %s", len(dataset), args.out)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.limit < 1 or args.workers < 1:
        raise UsageError("--limit and --workers must be at least 1")
    dataset = Dataset.read(args.dataset)
    if args.tasks is not None:
        dataset = dataset.subset(limit=args.tasks)
    backend = _backend(args)
    try:
        run = run_evaluation(dataset, backend, args.limit, args.workers, args.out, args.run_id)
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    s = run.summary.stats
    print(f"{run.run_id}: {s.successes}/{s.total} succeeded (SR {s.sr_percent:.1f}%), archive in {args.out}")
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    dataset = Dataset.read(args.dataset)
    _, records = read_trace(_trace_path(args.trace))
    labels = classify_trace(records, dataset.by_id())
    _write(args.out, "".join(dumps_line(row) + "\n" for row in labels))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    summaries = [read_summary(d) for d in args.runs]
    for d in args.runs:
        load_archive(d)  # checks run_id consistency across files
    _write(args.out, render_reports(summaries, args.format))
    return EXIT_OK


def cmd_schemas(args: argparse.Namespace) -> int:
    print(json.dumps(describe_tools(), indent=2))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "run": cmd_run,
    "classify": cmd_classify,
    "report": cmd_report,
    "schemas": cmd_schemas,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc} (see `tooldiag --help`)", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except Exception as exc:
        print(f"tooldiag: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
