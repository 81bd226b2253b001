"""Triage report assembly, canonical serialization, and report diffing.

The report embeds full violation/operation listings, not just counts, so
two runs can be diffed into an exact added/removed delta and so triage can
start from the report alone.  JSON rendering is canonical: identical
reports serialize to identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .access import can_access, dac_allows, mls_allows_for
from .adversary import PrivilegeLevel
from .ivengine import IntegrityViolation, IvKind, PipelineResult
from .model import (
    AccessKind,
    ConfigError,
    IngestError,
    InconsistencyError,
    KIND_CLASSES,
    SystemSnapshot,
)
from .operations import AttackOperation, OpType

SCHEMA_VERSION = 1

_READ_LIKE = (AccessKind.READ, AccessKind.EXEC, AccessKind.USE_BINDING)

SQUAT_ASSUMPTION = "file squatting assumes the adversary can predict victim filenames"


def count_authorized_data_flows(
    snapshot: SystemSnapshot, result: PipelineResult | None = None
) -> int:
    """(subject, object) pairs where some read-like access is fully authorized."""
    if result is None:
        count = 0
        for subject in snapshot.subjects:
            for obj in snapshot.objects:
                if any(
                    can_access(snapshot, subject, obj, kind) for kind in _READ_LIKE
                ):
                    count += 1
        return count
    # Indexed path, same relation: per object, look up the read-like grant
    # sets once and test each subject against them.
    index = result.context.index
    config = result.context.config
    count = 0
    for obj in snapshot.objects:
        kind_grants = [
            (kind, index.subjects_with(kind, obj.obj_class, obj.te))
            for kind in _READ_LIKE
            if obj.obj_class in KIND_CLASSES[kind]
        ]
        kind_grants = [(k, g) for k, g in kind_grants if g]
        if not kind_grants:
            continue
        for subject in snapshot.subjects:
            if not mls_allows_for(subject, obj, config):
                continue
            if any(
                subject.te in grant and dac_allows(subject.dac, obj, kind)
                for kind, grant in kind_grants
            ):
                count += 1
    return count


def _iv_record(iv: IntegrityViolation) -> dict[str, Any]:
    return {
        "kind": iv.kind.value,
        "victim": iv.victim,
        "object": iv.obj,
        "adversaries": sorted(iv.adversaries),
        "via_expansion": sorted(iv.via_expansion),
    }


def _op_record(op: AttackOperation) -> dict[str, Any]:
    return {
        "op_type": op.op_type.value,
        "victim": op.victim,
        "object": op.obj,
        "adversaries": sorted(op.adversaries),
        "witness_paths": sorted(op.witness_paths),
    }


def _record_sort_key(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True)


def _te_of_key(key: str) -> str:
    return key.split("|", 1)[0]


@dataclass(frozen=True)
class TriageReport:
    data: Mapping[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(self.data))  # deep copy

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TriageReport":
        return cls(data=dict(data))


def cross_level_matrix(
    ivs: Iterable[IntegrityViolation], level_map: Mapping[str, PrivilegeLevel]
) -> list[list[int]]:
    """5x5 count matrix of file+binding violations, adversary level -> victim level.

    Pathname violations are excluded.  Each violation lands in exactly one
    cell, keyed by its most privileged victim-side view: the victim's level
    against the lowest adversary level present, so the matrix column sums
    match the file+binding violation count.
    """
    matrix = [[0] * 5 for _ in range(5)]
    for iv in ivs:
        if iv.kind is IvKind.PATHNAME:
            continue
        v_level = level_map[iv.victim]
        a_level = min(level_map[a] for a in iv.adversaries)
        if a_level >= v_level:
            raise InconsistencyError(
                f"violation with non-inferior adversary: {iv.victim} vs level {a_level}"
            )
        matrix[a_level - 1][v_level - 1] += 1
    return matrix


def summarize(
    snapshot: SystemSnapshot,
    result: PipelineResult,
    ops: frozenset[AttackOperation],
    extra_assumptions: Iterable[str] = (),
) -> TriageReport:
    """Aggregate one pipeline run into the serializable report shape."""
    for iv in result.ivs:
        if iv.victim not in snapshot.subjects_by_key:
            raise InconsistencyError(f"violation references unknown subject {iv.victim!r}")
        if iv.obj not in snapshot.objects_by_key:
            raise InconsistencyError(f"violation references unknown object {iv.obj!r}")
        unknown = iv.adversaries - set(snapshot.subjects_by_key)
        if unknown:
            raise InconsistencyError(f"violation references unknown adversaries {sorted(unknown)}")

    te_counts = {kind.value: 0 for kind in IvKind if kind is not IvKind.PATHNAME}
    for te_iv in result.te_ivs:
        te_counts[te_iv.kind.value] += 1

    valid_counts = {kind.value: 0 for kind in IvKind}
    label_pairs: dict[str, set[tuple[str, str]]] = {kind.value: set() for kind in IvKind}
    for iv in result.ivs:
        valid_counts[iv.kind.value] += 1
        label_pairs[iv.kind.value].add((_te_of_key(iv.victim), _te_of_key(iv.obj)))
    label_counts = {kind: len(pairs) for kind, pairs in label_pairs.items()}
    for kind, count in label_counts.items():
        if kind != IvKind.PATHNAME.value and count > te_counts[kind]:
            raise InconsistencyError(
                f"{kind} violations project onto more label pairs than stage one produced"
            )

    op_counts = {op_type.value: 0 for op_type in OpType}
    ops_by_key: set[tuple[str, str, str]] = set()
    for op in ops:
        op_counts[op.op_type.value] += 1
        ops_by_key.add((op.op_type.value, op.victim, op.obj))

    def has_op(iv: IntegrityViolation, op_types: tuple[OpType, ...]) -> bool:
        return any((t.value, iv.victim, iv.obj) in ops_by_key for t in op_types)

    ivs_with_ops = 0
    for iv in result.ivs:
        if iv.kind is IvKind.READ and has_op(iv, (OpType.FILE_MOD,)):
            ivs_with_ops += 1
        elif iv.kind is IvKind.PATHNAME and has_op(
            iv, (OpType.FILE_SQUAT, OpType.LINK_TRAVERSAL, OpType.LURING_TRAVERSAL)
        ):
            ivs_with_ops += 1

    assumptions = set(extra_assumptions)
    assumptions.add(SQUAT_ASSUMPTION)
    assumptions.add(
        "kernel integrity labels: " + ", ".join(sorted(result.context.config.kernel_labels))
    )
    if result.context.ipc_map.total:
        assumptions.add("pathname reachability: all-channels upper bound (no ipc data)")
    if not result.context.expansion:
        assumptions.add("permission expansion disabled for this run")

    total_ops = sum(op_counts.values())
    if ivs_with_ops:
        avg_ops = round(total_ops / ivs_with_ops, 4)
    else:
        avg_ops = 0.0
        assumptions.add("average operations per violation undefined (none have operations)")

    total_ivs = valid_counts[IvKind.READ.value] + valid_counts[IvKind.PATHNAME.value]

    reads = {(iv.victim, iv.obj) for iv in result.ivs if iv.kind is IvKind.READ}
    writes = {(iv.victim, iv.obj) for iv in result.ivs if iv.kind is IvKind.WRITE}
    bindings = {(iv.victim, iv.obj) for iv in result.ivs if iv.kind is IvKind.BINDING}
    pathnames = {(iv.victim, iv.obj) for iv in result.ivs if iv.kind is IvKind.PATHNAME}

    matrix = cross_level_matrix(result.ivs, result.context.level_map)
    file_binding_total = sum(
        valid_counts[k.value] for k in (IvKind.READ, IvKind.WRITE, IvKind.EXEC, IvKind.BINDING)
    )
    if sum(sum(row) for row in matrix) != file_binding_total:
        raise InconsistencyError("cross-level matrix does not add up to file+binding count")

    data = {
        "schema_version": SCHEMA_VERSION,
        "snapshot_id": snapshot.snapshot_id,
        "counts": {
            "authorized_data_flows": count_authorized_data_flows(snapshot, result),
            "te_ivs": te_counts,
            "valid_ivs": valid_counts,
            "valid_label_ivs": label_counts,
            "total_ivs": total_ivs,
            "ivs_with_ops": ivs_with_ops,
            "avg_ops_per_iv": avg_ops,
        },
        "attack_ops": op_counts,
        "cross_level": matrix,
        "skipped_unmapped_pct": round(result.stats.skipped_pct, 4),
        "trust": {
            "consistent": result.analysis.trust.consistent,
            "violations": {
                k: sorted(v) for k, v in result.analysis.trust.violating_subjects().items()
            },
        },
        "stats": {
            "write_ivs_subset_of_read": writes <= reads,
            "binding_ivs_subset_of_pathname": bindings <= pathnames,
        },
        "levels": {key: f"T{lvl.value}" for key, lvl in result.context.level_map.items()},
        "assumptions": sorted(assumptions),
        "warnings": sorted(snapshot.warnings),
        "ivs": sorted((_iv_record(iv) for iv in result.ivs), key=_record_sort_key),
        "ops": sorted((_op_record(op) for op in ops), key=_record_sort_key),
    }
    return TriageReport(data=data)


def render(report: TriageReport, fmt: str = "json") -> bytes:
    """Serialize a report: canonical json, csv tables, or readable text."""
    if fmt == "json":
        return (json.dumps(report.data, sort_keys=True, indent=2) + "\n").encode()
    if fmt == "csv":
        return _render_csv(report).encode()
    if fmt == "text":
        return _render_text(report).encode()
    raise ConfigError(f"unknown report format {fmt!r}")


def csv_tables(report: TriageReport) -> dict[str, str]:
    """One CSV table per logical section, keyed by table name."""
    d = report.data
    tables: dict[str, str] = {}

    def table(name: str, header: list[str], rows: Iterable[list[Any]]) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        tables[name] = buf.getvalue()

    count_rows = [["authorized_data_flows", d["counts"]["authorized_data_flows"]]]
    count_rows += [[f"te_ivs_{k}", v] for k, v in sorted(d["counts"]["te_ivs"].items())]
    count_rows += [[f"valid_ivs_{k}", v] for k, v in sorted(d["counts"]["valid_ivs"].items())]
    count_rows += [
        ["total_ivs", d["counts"]["total_ivs"]],
        ["ivs_with_ops", d["counts"]["ivs_with_ops"]],
        ["avg_ops_per_iv", d["counts"]["avg_ops_per_iv"]],
        ["skipped_unmapped_pct", d["skipped_unmapped_pct"]],
    ]
    table("counts", ["metric", "value"], count_rows)
    table(
        "attack_ops",
        ["op_type", "count"],
        sorted(d["attack_ops"].items()),
    )
    table(
        "cross_level",
        ["adversary"] + [f"T{j}" for j in range(1, 6)],
        [[f"T{i}"] + row for i, row in enumerate(d["cross_level"], start=1)],
    )
    table(
        "ivs",
        ["kind", "victim", "object", "adversaries", "via_expansion"],
        [
            [r["kind"], r["victim"], r["object"], ";".join(r["adversaries"]), ";".join(r["via_expansion"])]
            for r in d["ivs"]
        ],
    )
    table(
        "ops",
        ["op_type", "victim", "object", "adversaries", "witness_paths"],
        [
            [r["op_type"], r["victim"], r["object"], ";".join(r["adversaries"]), ";".join(r["witness_paths"])]
            for r in d["ops"]
        ],
    )
    return tables


def _render_csv(report: TriageReport) -> str:
    parts = []
    for name, content in csv_tables(report).items():
        parts.append(f"# table: {name}\n{content}")
    return "\n".join(parts)


def _render_text(report: TriageReport) -> str:
    d = report.data
    lines = [
        f"snapshot {d['snapshot_id']}",
        "",
        f"authorized data flows : {d['counts']['authorized_data_flows']}",
        "candidate (label) IVs : "
        + ", ".join(f"{k}={v}" for k, v in sorted(d["counts"]["te_ivs"].items())),
        "validated IVs         : "
        + ", ".join(f"{k}={v}" for k, v in sorted(d["counts"]["valid_ivs"].items())),
        f"total IVs (read+pathname): {d['counts']['total_ivs']}",
        f"IVs with operations   : {d['counts']['ivs_with_ops']}"
        f" (avg ops per IV {d['counts']['avg_ops_per_iv']})",
        f"skipped unmapped      : {d['skipped_unmapped_pct']}%",
        "attack operations     : "
        + ", ".join(f"{k}={v}" for k, v in sorted(d["attack_ops"].items())),
        "",
        "cross-level (adversary row -> victim column, file+binding IVs):",
        "      " + " ".join(f"{f'T{j}':>6}" for j in range(1, 6)),
    ]
    for i, row in enumerate(d["cross_level"], start=1):
        lines.append(f"  T{i}  " + " ".join(f"{n:>6}" for n in row))
    lines.append("")
    lines.append(f"trust consistent      : {d['trust']['consistent']}")
    for victim, members in sorted(d["trust"]["violations"].items()):
        lines.append(f"  wall below level for {victim}: {', '.join(members)}")
    if d["assumptions"]:
        lines.append("assumptions:")
        lines.extend(f"  - {a}" for a in d["assumptions"])
    if d["warnings"]:
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in d["warnings"])
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ReportDelta:
    old_snapshot_id: str
    new_snapshot_id: str
    added_ivs: tuple[dict, ...] = ()
    removed_ivs: tuple[dict, ...] = ()
    added_ops: tuple[dict, ...] = ()
    removed_ops: tuple[dict, ...] = ()
    replaced_fields: Mapping[str, Any] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not (
            self.added_ivs
            or self.removed_ivs
            or self.added_ops
            or self.removed_ops
            or self.replaced_fields
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "old_snapshot_id": self.old_snapshot_id,
            "new_snapshot_id": self.new_snapshot_id,
            "added_ivs": list(self.added_ivs),
            "removed_ivs": list(self.removed_ivs),
            "added_ops": list(self.added_ops),
            "removed_ops": list(self.removed_ops),
            "replaced_fields": dict(self.replaced_fields),
        }


def _listing_diff(old: list[dict], new: list[dict]) -> tuple[tuple[dict, ...], tuple[dict, ...]]:
    old_set = {_record_sort_key(r): r for r in old}
    new_set = {_record_sort_key(r): r for r in new}
    added = tuple(new_set[k] for k in sorted(new_set.keys() - old_set.keys()))
    removed = tuple(old_set[k] for k in sorted(old_set.keys() - new_set.keys()))
    return added, removed


def diff_reports(old: TriageReport, new: TriageReport) -> ReportDelta:
    """Exact set difference between two reports carrying full listings."""
    od, nd = old.data, new.data
    if od.get("schema_version") != nd.get("schema_version"):
        raise IngestError(
            f"report schema versions differ: {od.get('schema_version')} vs {nd.get('schema_version')}"
        )
    added_ivs, removed_ivs = _listing_diff(od["ivs"], nd["ivs"])
    added_ops, removed_ops = _listing_diff(od["ops"], nd["ops"])
    replaced = {
        key: nd[key]
        for key in nd
        if key not in ("ivs", "ops") and nd[key] != od.get(key)
    }
    return ReportDelta(
        old_snapshot_id=od.get("snapshot_id", ""),
        new_snapshot_id=nd.get("snapshot_id", ""),
        added_ivs=added_ivs,
        removed_ivs=removed_ivs,
        added_ops=added_ops,
        removed_ops=removed_ops,
        replaced_fields=replaced,
    )


def apply_delta(old: TriageReport, delta: ReportDelta) -> TriageReport:
    """Reconstruct the new report from the old one plus a delta."""
    data = old.to_dict()
    for listing, added, removed in (
        ("ivs", delta.added_ivs, delta.removed_ivs),
        ("ops", delta.added_ops, delta.removed_ops),
    ):
        records = {_record_sort_key(r): r for r in data[listing]}
        for r in removed:
            records.pop(_record_sort_key(r), None)
        for r in added:
            records[_record_sort_key(r)] = r
        data[listing] = [records[k] for k in sorted(records)]
    for key, value in delta.replaced_fields.items():
        data[key] = value
    return TriageReport(data=data)
