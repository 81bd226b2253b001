"""Command-line driver: analyze a snapshot, diff reports, generate systems.

Exit codes: 0 success, 1 usage error, 2 ingest error, 3 internal
inconsistency.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adversary import DEFAULT_CLASSIFIER, parse_levels_conf
from .expansion import load_subject_list
from .generator import GeneratorSpec, generate_system
from .ingest import build_snapshot
from .ivengine import run_pipeline
from .model import AnalysisConfig, ConfigError, IngestError, InconsistencyError, load_analysis_config
from .operations import compute_attack_operations
from .report import TriageReport, csv_tables, diff_reports, render, summarize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGEST = 2
EXIT_INTERNAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="actriage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="run the full triage pipeline on a snapshot")
    analyze.add_argument("--snapshot", required=True, help="snapshot directory")
    analyze.add_argument("--levels", help="privilege level rules file")
    analyze.add_argument("--threads", type=int, default=1, help="validation partitions")
    analyze.add_argument("--out", required=True, help="output directory")
    analyze.add_argument("--no-expansion", action="store_true", help="disable permission expansion")
    analyze.add_argument("--allowlist", help="signed-app allowlist (subject keys)")
    analyze.add_argument("--config", help="analysis config (vocabulary/bypass/kernel labels)")
    analyze.add_argument("--format", choices=("json", "csv", "text"), default="json")

    diff = sub.add_parser("diff", help="diff two json reports")
    diff.add_argument("old")
    diff.add_argument("new")

    gen = sub.add_parser("gen", help="generate a synthetic snapshot directory")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--subjects", type=int, required=True)
    gen.add_argument("--objects", type=int, required=True)
    gen.add_argument("--rules", type=int, required=True)
    gen.add_argument("--mounts", type=int, default=4)
    gen.add_argument("--permissions", type=int, default=8)
    gen.add_argument("--ipc-density", type=float, default=0.3)
    gen.add_argument("--out", required=True)
    return parser


def _cmd_analyze(args: argparse.Namespace) -> int:
    snapshot = build_snapshot(args.snapshot)
    classifier = DEFAULT_CLASSIFIER
    if args.levels:
        classifier = parse_levels_conf(Path(args.levels).read_text())
    config = AnalysisConfig.default()
    if args.config:
        config = load_analysis_config(Path(args.config).read_text())
    allowlist = frozenset()
    if args.allowlist:
        allowlist = load_subject_list(Path(args.allowlist).read_text())
    if args.threads < 1:
        raise _UsageError("--threads must be >= 1")

    result = run_pipeline(
        snapshot,
        classifier=classifier,
        config=config,
        partitions=args.threads,
        expansion=not args.no_expansion,
        allowlist=allowlist,
    )
    ops = compute_attack_operations(result.ivs, snapshot)
    report = summarize(snapshot, result, ops)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        for name, content in csv_tables(report).items():
            (out / f"{name}.csv").write_text(content)
    elif args.format == "text":
        (out / "report.txt").write_bytes(render(report, "text"))
    else:
        (out / "report.json").write_bytes(render(report, "json"))
    counts = report.data["counts"]
    print(
        f"{snapshot.snapshot_id}: {counts['total_ivs']} IVs "
        f"({counts['ivs_with_ops']} with operations), "
        f"{sum(report.data['attack_ops'].values())} attack operations -> {out}"
    )
    return EXIT_OK


def _cmd_diff(args: argparse.Namespace) -> int:
    old = TriageReport.from_dict(json.loads(Path(args.old).read_text()))
    new = TriageReport.from_dict(json.loads(Path(args.new).read_text()))
    delta = diff_reports(old, new)
    print(json.dumps(delta.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_gen(args: argparse.Namespace) -> int:
    spec = GeneratorSpec(
        seed=args.seed,
        n_subjects=args.subjects,
        n_objects=args.objects,
        n_rules=args.rules,
        n_mounts=args.mounts,
        n_permissions=args.permissions,
        ipc_density=args.ipc_density,
    )
    out = generate_system(spec, args.out)
    print(f"generated snapshot at {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "diff":
            return _cmd_diff(args)
        if args.command == "gen":
            return _cmd_gen(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except InconsistencyError as exc:
        print(f"internal inconsistency: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
