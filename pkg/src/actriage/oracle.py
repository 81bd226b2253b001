"""Exhaustive reference evaluation of the violation and operation rules.

This is the equivalence oracle for the staged pipeline: a direct triple
loop over (victim, object, adversary) with no label-level staging, no
partitioning, and its own permission-grant table built straight from the
rules.  It shares only the base decision predicates with the pipeline so
that a defect in the staging machinery cannot hide here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .access import dac_allows, mls_allows_for
from .adversary import DEFAULT_CLASSIFIER, LevelClassifier
from .expansion import OBTAINABLE_LEVELS
from .ivengine import (
    ADV_EXPAND,
    IntegrityViolation,
    IvKind,
    VIC_EXPAND,
    run_pipeline,
)
from .model import (
    AccessKind,
    AnalysisConfig,
    DacIdentity,
    DIR,
    FILE,
    IpcMap,
    Subject,
    SystemSnapshot,
)
from .operations import AttackOperation, OpType, compute_attack_operations

_FILE_KIND_PAIRS = (
    (IvKind.READ, AccessKind.READ),
    (IvKind.WRITE, AccessKind.WRITE),
    (IvKind.EXEC, AccessKind.EXEC),
)


@dataclass(frozen=True)
class OracleResult:
    ivs: frozenset[IntegrityViolation]
    ops: frozenset[AttackOperation]


def _grant_table(snapshot: SystemSnapshot) -> dict[tuple[str, str, str], frozenset[str]]:
    grants: dict[tuple[str, str, str], set[str]] = {}
    attr_map = snapshot.attr_map
    for rule in snapshot.te_rules:
        for src in attr_map.get(rule.source, frozenset({rule.source})):
            for tgt in attr_map.get(rule.target, frozenset({rule.target})):
                grants.setdefault((src, tgt, rule.obj_class), set()).update(rule.perms)
    return {k: frozenset(v) for k, v in grants.items()}


def _expanded_identity(
    subject: Subject,
    snapshot: SystemSnapshot,
    allowlist: frozenset[str],
) -> DacIdentity:
    gained: set[str] = set()
    for name, entry in snapshot.perm_map.entries.items():
        obtainable = entry.protection_level in OBTAINABLE_LEVELS or (
            entry.protection_level.startswith("signature") and subject.key in allowlist
        )
        if obtainable:
            gained.update(entry.groups)
    return DacIdentity(
        uid=subject.dac.uid,
        gid=subject.dac.gid,
        supplementary=subject.dac.supplementary | frozenset(gained),
    )


def brute_force_ivs(
    snapshot: SystemSnapshot,
    classifier: LevelClassifier = DEFAULT_CLASSIFIER,
    config: AnalysisConfig | None = None,
    expansion: bool = True,
    allowlist: frozenset[str] = frozenset(),
    ipc_override: IpcMap | None = None,
) -> frozenset[IntegrityViolation]:
    """Evaluate every violation rule directly over all subject/object pairs."""
    cfg = config or AnalysisConfig.default()
    vocab = cfg.vocabulary
    grants = _grant_table(snapshot)
    ipc = ipc_override if ipc_override is not None else snapshot.ipc_map

    def te_ok(s_te: str, o_te: str, cls: str, kind: AccessKind) -> bool:
        return bool(grants.get((s_te, o_te, cls), frozenset()) & vocab.perms_for(kind, cls))

    subjects = sorted(snapshot.subjects, key=lambda s: s.key)
    levels = {s.key: classifier.classify(s.te, s.dac.uid)[0] for s in subjects}
    expanded = {s.key: _expanded_identity(s, snapshot, allowlist) for s in subjects}

    def adv_write(adv: Subject, obj) -> tuple[bool, bool]:
        if not te_ok(adv.te, obj.te, obj.obj_class, AccessKind.WRITE):
            return False, False
        if not mls_allows_for(adv, obj, cfg):
            return False, False
        if dac_allows(adv.dac, obj, AccessKind.WRITE):
            return True, False
        if expansion and dac_allows(expanded[adv.key], obj, AccessKind.WRITE):
            return True, True
        return False, False

    out: list[IntegrityViolation] = []
    for victim in subjects:
        v_level = levels[victim.key]
        lower = [a for a in subjects if levels[a.key] < v_level]
        for obj in sorted(snapshot.objects, key=lambda o: o.key):
            if obj.obj_class == FILE:
                kind_pairs = _FILE_KIND_PAIRS
            elif obj.obj_class == DIR:
                kind_pairs = ((IvKind.BINDING, AccessKind.USE_BINDING),)
            else:
                continue
            writes = {}
            for adv in lower:
                writes[adv.key] = adv_write(adv, obj)
            for iv_kind, use_kind in kind_pairs:
                if not te_ok(victim.te, obj.te, obj.obj_class, use_kind):
                    continue
                if not mls_allows_for(victim, obj, cfg):
                    continue
                if not dac_allows(victim.dac, obj, use_kind):
                    continue
                advs = frozenset(a.key for a in lower if writes[a.key][0])
                if not advs:
                    continue
                flags = frozenset(
                    {ADV_EXPAND}
                    if any(writes[k][1] for k in advs)
                    else set()
                )
                out.append(IntegrityViolation(iv_kind, victim.key, obj.key, advs, flags))
            # Pathname rule: lure over an IPC channel into a writable binding,
            # with the victim's DAC leg possibly delegated by the owner.
            if obj.obj_class != DIR:
                continue
            if not te_ok(victim.te, obj.te, DIR, AccessKind.USE_BINDING):
                continue
            if not mls_allows_for(victim, obj, cfg):
                continue
            victim_dac = dac_allows(victim.dac, obj, AccessKind.USE_BINDING)
            advs = set()
            flags = set()
            for adv in lower:
                if not ipc.has_channel(adv.key, victim.key):
                    continue
                ok, used_expansion = writes[adv.key]
                if not ok:
                    continue
                if victim_dac:
                    advs.add(adv.key)
                elif expansion and obj.owner_uid == adv.dac.uid:
                    advs.add(adv.key)
                    flags.add(VIC_EXPAND)
                else:
                    continue
                if used_expansion:
                    flags.add(ADV_EXPAND)
            if advs:
                out.append(
                    IntegrityViolation(
                        IvKind.PATHNAME, victim.key, obj.key, frozenset(advs), frozenset(flags)
                    )
                )
    return frozenset(out)


def _mount_flags(path: str, snapshot: SystemSnapshot) -> frozenset[str]:
    best = None
    for entry in snapshot.mounts.entries:
        mp = entry.mountpoint
        if mp == "/" or path == mp or path.startswith(mp + "/"):
            if best is None or len(mp) > len(best.mountpoint):
                best = entry
    assert best is not None
    return best.flags


def brute_force_ops(
    snapshot: SystemSnapshot, ivs: Iterable[IntegrityViolation]
) -> frozenset[AttackOperation]:
    """Apply the operation rules directly, path by path."""
    fileprovider = snapshot.program_config.fileprovider_subjects
    merged: dict[tuple[OpType, str, str], tuple[set[str], set[str]]] = {}

    def emit(op_type: OpType, iv: IntegrityViolation, paths: set[str]) -> None:
        advs, witness = merged.setdefault((op_type, iv.victim, iv.obj), (set(), set()))
        advs.update(iv.adversaries)
        witness.update(paths)

    for iv in ivs:
        obj = snapshot.objects_by_key[iv.obj]
        writable = {p for p in obj.paths if "ro" not in _mount_flags(p, snapshot)}
        linkable = {p for p in writable if "nosymlink" not in _mount_flags(p, snapshot)}
        if iv.kind in (IvKind.READ, IvKind.WRITE, IvKind.EXEC):
            if writable:
                emit(OpType.FILE_MOD, iv, writable)
        elif iv.kind is IvKind.BINDING:
            if writable:
                emit(OpType.FILE_SQUAT, iv, writable)
            if linkable:
                emit(OpType.LINK_TRAVERSAL, iv, linkable)
        elif iv.kind is IvKind.PATHNAME:
            if linkable and iv.victim not in fileprovider:
                emit(OpType.LURING_TRAVERSAL, iv, linkable)
    return frozenset(
        AttackOperation(op_type, victim, obj_key, frozenset(advs), frozenset(paths))
        for (op_type, victim, obj_key), (advs, paths) in merged.items()
    )


def brute_force(
    snapshot: SystemSnapshot,
    classifier: LevelClassifier = DEFAULT_CLASSIFIER,
    config: AnalysisConfig | None = None,
    expansion: bool = True,
    allowlist: frozenset[str] = frozenset(),
    ipc_override: IpcMap | None = None,
) -> OracleResult:
    ivs = brute_force_ivs(snapshot, classifier, config, expansion, allowlist, ipc_override)
    return OracleResult(ivs=ivs, ops=brute_force_ops(snapshot, ivs))


@dataclass(frozen=True)
class EquivalenceResult:
    ok: bool
    detail: str = ""


def _first_difference(name: str, left: frozenset, right: frozenset) -> str:
    only_pipeline = sorted(left - right, key=repr)
    only_oracle = sorted(right - left, key=repr)
    sample = only_pipeline[0] if only_pipeline else only_oracle[0]
    side = "pipeline-only" if only_pipeline else "oracle-only"
    return f"{name} differ ({side}): {sample!r}"


def check_equivalence(
    snapshot: SystemSnapshot,
    classifier: LevelClassifier = DEFAULT_CLASSIFIER,
    config: AnalysisConfig | None = None,
    expansion: bool = True,
    allowlist: frozenset[str] = frozenset(),
    partition_counts: tuple[int, ...] = (1, 2, 4, 8),
    pipeline_fn=None,
) -> EquivalenceResult:
    """Run the staged pipeline at several partition counts against the oracle.

    ``pipeline_fn(snapshot, partitions) -> (ivs, ops)`` may be supplied to
    exercise a deliberately corrupted pipeline (mutation testing).
    """
    expected = brute_force(snapshot, classifier, config, expansion, allowlist)
    for partitions in partition_counts:
        if pipeline_fn is not None:
            ivs, ops = pipeline_fn(snapshot, partitions)
        else:
            result = run_pipeline(
                snapshot,
                classifier=classifier,
                config=config,
                partitions=partitions,
                expansion=expansion,
                allowlist=allowlist,
            )
            ivs = result.ivs
            ops = compute_attack_operations(ivs, snapshot)
        if ivs != expected.ivs:
            return EquivalenceResult(
                False, f"partitions={partitions}: " + _first_difference("violations", ivs, expected.ivs)
            )
        if ops != expected.ops:
            return EquivalenceResult(
                False, f"partitions={partitions}: " + _first_difference("operations", ops, expected.ops)
            )
    return EquivalenceResult(True)
