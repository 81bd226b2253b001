"""Attack-operation computation: which violations survive the filesystem
and program-configuration filters, and through which concrete operation."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping

from .ivengine import IntegrityViolation, IvKind
from .model import MountEntry, MountTable, SystemSnapshot


class OpType(enum.Enum):
    FILE_MOD = "file_mod"
    FILE_SQUAT = "file_squat"
    LINK_TRAVERSAL = "link_traversal"
    LURING_TRAVERSAL = "luring_traversal"


#: Violation kinds each operation type may derive from.
OP_SOURCE_KINDS: Mapping[OpType, frozenset[IvKind]] = {
    OpType.FILE_MOD: frozenset({IvKind.READ, IvKind.WRITE, IvKind.EXEC}),
    OpType.FILE_SQUAT: frozenset({IvKind.BINDING}),
    OpType.LINK_TRAVERSAL: frozenset({IvKind.BINDING}),
    OpType.LURING_TRAVERSAL: frozenset({IvKind.PATHNAME}),
}


@dataclass(frozen=True)
class FsPredicateResult:
    path: str
    writable: bool
    symlink_ok: bool
    deciding_mountpoint: str


@dataclass(frozen=True)
class AttackOperation:
    op_type: OpType
    victim: str
    obj: str
    adversaries: frozenset[str]
    witness_paths: frozenset[str]


def fs_writable(path: str, mounts: MountTable) -> bool:
    """The longest-prefix mount entry for the path lacks the ro flag."""
    return "ro" not in mounts.resolve(path).flags


def symlink_allowed(path: str, mounts: MountTable) -> bool:
    """The deciding mount entry lacks the nosymlink flag."""
    return "nosymlink" not in mounts.resolve(path).flags


def fs_predicate(path: str, mounts: MountTable) -> FsPredicateResult:
    entry: MountEntry = mounts.resolve(path)
    return FsPredicateResult(
        path=path,
        writable="ro" not in entry.flags,
        symlink_ok="nosymlink" not in entry.flags,
        deciding_mountpoint=entry.mountpoint,
    )


def compute_attack_operations(
    ivs: Iterable[IntegrityViolation], snapshot: SystemSnapshot
) -> frozenset[AttackOperation]:
    """Apply the per-operation filesystem and program predicates to each violation.

    An operation exists if any path instance of the object satisfies its
    predicates; the satisfying paths are retained as witnesses.  Operations
    are aggregated per (type, victim, object) with adversaries unioned.
    File squatting additionally assumes the adversary can predict the
    victim's filenames, which is reported as an assumption, not checked.
    """
    mounts = snapshot.mounts
    fileprovider = snapshot.program_config.fileprovider_subjects
    merged: dict[tuple[OpType, str, str], tuple[set[str], set[str]]] = {}

    def emit(op_type: OpType, iv: IntegrityViolation, witnesses: frozenset[str]) -> None:
        advs, paths = merged.setdefault((op_type, iv.victim, iv.obj), (set(), set()))
        advs.update(iv.adversaries)
        paths.update(witnesses)

    for iv in ivs:
        obj = snapshot.objects_by_key[iv.obj]
        writable = frozenset(p for p in obj.paths if fs_writable(p, mounts))
        if not writable:
            continue
        if iv.kind in OP_SOURCE_KINDS[OpType.FILE_MOD]:
            emit(OpType.FILE_MOD, iv, writable)
        elif iv.kind is IvKind.BINDING:
            emit(OpType.FILE_SQUAT, iv, writable)
            linkable = frozenset(p for p in writable if symlink_allowed(p, mounts))
            if linkable:
                emit(OpType.LINK_TRAVERSAL, iv, linkable)
        elif iv.kind is IvKind.PATHNAME:
            if iv.victim in fileprovider:
                continue
            linkable = frozenset(p for p in writable if symlink_allowed(p, mounts))
            if linkable:
                emit(OpType.LURING_TRAVERSAL, iv, linkable)
    return frozenset(
        AttackOperation(
            op_type=op_type,
            victim=victim,
            obj=obj_key,
            adversaries=frozenset(advs),
            witness_paths=frozenset(paths),
        )
        for (op_type, victim, obj_key), (advs, paths) in merged.items()
    )
