"""Two-stage integrity-violation pipeline.

Stage one computes candidate violations at TE-label granularity from the
allow rules alone.  Stage two instantiates each candidate against the
subject/object equivalence classes and validates it under DAC, MLS, and
permission expansion; candidates are partitioned into stable hash buckets
so validation can run in parallel with a deterministic merged result.
Pathname violations are derived afterwards from the binding candidates
plus IPC reachability and victim permission expansion.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .access import AccessIndex, can_access, dac_allows, mls_allows_for
from .adversary import (
    AdversaryAnalysis,
    DEFAULT_CLASSIFIER,
    LevelAssignment,
    LevelClassifier,
    PrivilegeLevel,
    assign_privilege_levels,
    compute_adversaries,
    compute_integrity_wall,
)
from .expansion import ExpandedSubject, adversary_expand
from .model import (
    AccessKind,
    AnalysisConfig,
    DIR,
    FILE,
    IpcMap,
    Subject,
    SystemSnapshot,
)

#: Candidates per partition below which buckets are validated in-process;
#: worker processes only pay off once the per-bucket work dominates their
#: startup cost.
PARALLEL_THRESHOLD = 2000


class IvKind(enum.Enum):
    READ = "read"
    WRITE = "write"
    EXEC = "exec"
    BINDING = "binding"
    PATHNAME = "pathname"


ADV_EXPAND = "adv_expand"
VIC_EXPAND = "vic_expand"

_FILE_KINDS = (
    (IvKind.READ, AccessKind.READ),
    (IvKind.WRITE, AccessKind.WRITE),
    (IvKind.EXEC, AccessKind.EXEC),
)


@dataclass(frozen=True)
class TeIv:
    """Label-granularity candidate: victim type uses what adversary types write."""

    kind: IvKind
    victim_te: str
    object_te: str
    adversary_tes: frozenset[str]


@dataclass(frozen=True)
class IntegrityViolation:
    """A validated (kind, victim, object, adversaries) tuple at full granularity."""

    kind: IvKind
    victim: str  # subject key
    obj: str  # object key
    adversaries: frozenset[str]  # subject keys, all strictly lower level
    via_expansion: frozenset[str] = frozenset()


@dataclass(frozen=True)
class PipelineContext:
    """Immutable bundle shared read-only by every validation worker."""

    snapshot: SystemSnapshot
    config: AnalysisConfig
    index: AccessIndex
    level_map: Mapping[str, PrivilegeLevel]
    adversaries: Mapping[str, frozenset[str]]
    te_levels: Mapping[str, tuple[PrivilegeLevel, PrivilegeLevel]]  # te -> (min, max)
    expansion: bool
    allowlist: frozenset[str]
    expanded: Mapping[str, ExpandedSubject]  # subject key -> expansion
    ipc_map: IpcMap

    def te_adversaries(self, victim_te: str) -> frozenset[str]:
        _, v_max = self.te_levels[victim_te]
        return frozenset(
            te for te, (a_min, _) in self.te_levels.items() if a_min < v_max
        )


def build_context(
    snapshot: SystemSnapshot,
    classifier: LevelClassifier = DEFAULT_CLASSIFIER,
    config: AnalysisConfig | None = None,
    expansion: bool = True,
    allowlist: frozenset[str] = frozenset(),
    ipc_override: IpcMap | None = None,
) -> tuple[PipelineContext, LevelAssignment, AdversaryAnalysis]:
    """Assemble levels, adversary sets, and shared lookup structures."""
    cfg = config or AnalysisConfig.default()
    index = AccessIndex(snapshot.te_rules, snapshot.attr_map, cfg.vocabulary)
    assignment = assign_privilege_levels(snapshot, classifier)
    wall = compute_integrity_wall(snapshot, cfg.kernel_labels, index, cfg)
    analysis = compute_adversaries(snapshot, assignment.levels, wall)

    te_levels: dict[str, tuple[PrivilegeLevel, PrivilegeLevel]] = {}
    for te in index.source_types | snapshot.mapped_tes():
        subjects = snapshot.subjects_by_te.get(te)
        if subjects:
            levels = [assignment.levels[s.key] for s in subjects]
            te_levels[te] = (min(levels), max(levels))
        else:
            level, _ = classifier.classify(te, None)
            te_levels[te] = (level, level)

    expanded = {}
    if expansion:
        for s in snapshot.subjects:
            expanded[s.key] = adversary_expand(s, snapshot.perm_map, allowlist)

    ctx = PipelineContext(
        snapshot=snapshot,
        config=cfg,
        index=index,
        level_map=assignment.levels,
        adversaries=analysis.adversaries,
        te_levels=te_levels,
        expansion=expansion,
        allowlist=allowlist,
        expanded=expanded,
        ipc_map=ipc_override if ipc_override is not None else snapshot.ipc_map,
    )
    return ctx, assignment, analysis


def compute_te_ivs(
    snapshot: SystemSnapshot,
    adversary_te_map: Mapping[str, frozenset[str]] | PipelineContext,
    index: AccessIndex | None = None,
) -> frozenset[TeIv]:
    """Stage one: candidate violations from the TE policy alone.

    ``adversary_te_map`` maps each victim type to its adversary types; a
    :class:`PipelineContext` may be passed instead, supplying both the map
    and the prebuilt grant index.
    """
    if isinstance(adversary_te_map, PipelineContext):
        ctx = adversary_te_map
        index = ctx.index
        adv_for = ctx.te_adversaries
    else:
        index = index or AccessIndex(snapshot.te_rules, snapshot.attr_map)
        fixed = adversary_te_map
        adv_for = lambda te: fixed.get(te, frozenset())

    out: list[TeIv] = []
    pairs: list[tuple[IvKind, AccessKind, str, AccessKind]] = [
        (IvKind.READ, AccessKind.READ, FILE, AccessKind.WRITE),
        (IvKind.WRITE, AccessKind.WRITE, FILE, AccessKind.WRITE),
        (IvKind.EXEC, AccessKind.EXEC, FILE, AccessKind.WRITE),
        (IvKind.BINDING, AccessKind.USE_BINDING, DIR, AccessKind.WRITE),
    ]
    for iv_kind, use_kind, obj_class, write_kind in pairs:
        use_grants = index.grants.get((use_kind, obj_class), {})
        write_grants = index.grants.get((write_kind, obj_class), {})
        for object_te, victims in use_grants.items():
            writers = write_grants.get(object_te)
            if not writers:
                continue
            for victim_te in victims:
                advs = writers & adv_for(victim_te)
                if advs:
                    out.append(TeIv(iv_kind, victim_te, object_te, advs))
    return frozenset(out)


def _partition(te_ivs: Iterable[TeIv], partitions: int) -> list[list[TeIv]]:
    """Stable hash-bucket split; independent of input order."""
    ordered = sorted(
        te_ivs, key=lambda iv: (iv.kind.value, iv.victim_te, iv.object_te)
    )
    buckets: list[list[TeIv]] = [[] for _ in range(partitions)]
    for i, iv in enumerate(ordered):
        buckets[i % partitions].append(iv)
    return buckets


def _adversary_write(
    ctx: PipelineContext, adversary: Subject, obj, write_kind: AccessKind
) -> tuple[bool, bool]:
    """(authorized, needed_expansion) for the adversary's write leg.

    TE is already established at the candidate level; MLS is checked on the
    adversary's base context (permission grants confer DAC groups only).
    """
    if not mls_allows_for(adversary, obj, ctx.config):
        return False, False
    base_ok = dac_allows(adversary.dac, obj, write_kind)
    if base_ok:
        return True, False
    if ctx.expansion:
        expanded = ctx.expanded.get(adversary.key)
        if expanded is not None and dac_allows(expanded.dac_identity(), obj, write_kind):
            return True, True
    return False, False


def _validate_bucket(ctx: PipelineContext, bucket: Sequence[TeIv]) -> list[IntegrityViolation]:
    snapshot = ctx.snapshot
    out: list[IntegrityViolation] = []
    for te_iv in bucket:
        if te_iv.kind is IvKind.BINDING:
            obj_class, use_kind = DIR, AccessKind.USE_BINDING
        else:
            obj_class = FILE
            use_kind = next(ak for k, ak in _FILE_KINDS if k is te_iv.kind)
        write_kind = AccessKind.WRITE
        victims = snapshot.subjects_by_te.get(te_iv.victim_te, ())
        objects = snapshot.objects_by_te_class.get((te_iv.object_te, obj_class), ())
        adversaries = [
            s
            for te in sorted(te_iv.adversary_tes)
            for s in snapshot.subjects_by_te.get(te, ())
        ]
        for victim in victims:
            v_level = ctx.level_map[victim.key]
            for obj in objects:
                if not can_access(snapshot, victim, obj, use_kind, ctx.config, ctx.index):
                    continue
                adv_keys: set[str] = set()
                flags: set[str] = set()
                for adv in adversaries:
                    if ctx.level_map[adv.key] >= v_level:
                        continue
                    ok, expanded = _adversary_write(ctx, adv, obj, write_kind)
                    if ok:
                        adv_keys.add(adv.key)
                        if expanded:
                            flags.add(ADV_EXPAND)
                if adv_keys:
                    out.append(
                        IntegrityViolation(
                            kind=te_iv.kind,
                            victim=victim.key,
                            obj=obj.key,
                            adversaries=frozenset(adv_keys),
                            via_expansion=frozenset(flags),
                        )
                    )
    return out


_WORKER_CTX: PipelineContext | None = None


def _init_worker(ctx: PipelineContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_bucket(bucket: Sequence[TeIv]) -> list[IntegrityViolation]:
    assert _WORKER_CTX is not None
    return _validate_bucket(_WORKER_CTX, bucket)


@dataclass(frozen=True)
class ValidationStats:
    total_te_ivs: int
    skipped_unmapped: int

    @property
    def skipped_pct(self) -> float:
        if not self.total_te_ivs:
            return 0.0
        return 100.0 * self.skipped_unmapped / self.total_te_ivs


@dataclass(frozen=True)
class ValidationResult:
    ivs: frozenset[IntegrityViolation]
    stats: ValidationStats


def validate_te_ivs(
    te_ivs: Iterable[TeIv],
    snapshot: SystemSnapshot,
    partitions: int = 1,
    context: PipelineContext | None = None,
    parallel: bool | None = None,
) -> ValidationResult:
    """Stage two: instantiate and validate candidates at full granularity.

    Candidates whose victim type, or all of whose adversary types, map to
    no running process are skipped and counted.  The result is identical
    for any ``partitions`` value; workers only share the immutable context.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    ctx = context
    if ctx is None:
        ctx, _, _ = build_context(snapshot)

    mapped = snapshot.mapped_tes()
    runnable: list[TeIv] = []
    skipped = 0
    total = 0
    for te_iv in te_ivs:
        total += 1
        mapped_advs = te_iv.adversary_tes & mapped
        if te_iv.victim_te not in mapped or not mapped_advs:
            skipped += 1
            continue
        if mapped_advs != te_iv.adversary_tes:
            te_iv = replace(te_iv, adversary_tes=mapped_advs)
        runnable.append(te_iv)

    buckets = _partition(runnable, partitions)
    use_processes = parallel if parallel is not None else (
        partitions > 1 and len(runnable) >= PARALLEL_THRESHOLD and (os.cpu_count() or 1) > 1
    )
    results: list[IntegrityViolation] = []
    if use_processes and partitions > 1:
        with ProcessPoolExecutor(
            max_workers=partitions, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            for chunk in pool.map(_run_bucket, buckets):
                results.extend(chunk)
    else:
        for bucket in buckets:
            results.extend(_validate_bucket(ctx, bucket))
    return ValidationResult(
        ivs=frozenset(results),
        stats=ValidationStats(total_te_ivs=total, skipped_unmapped=skipped),
    )


def compute_pathname_ivs(
    snapshot: SystemSnapshot,
    binding_te_ivs: Iterable[TeIv],
    binding_context: PipelineContext,
) -> frozenset[IntegrityViolation]:
    """Pathname violations: an adversary that can reach the victim over IPC
    and write a binding the victim would use, where the victim's DAC leg may
    come from delegation on adversary-owned bindings (victim expansion)."""
    ctx = binding_context
    ipc = ctx.ipc_map
    out: list[IntegrityViolation] = []
    mapped = snapshot.mapped_tes()
    for te_iv in binding_te_ivs:
        if te_iv.kind is not IvKind.BINDING:
            continue
        if te_iv.victim_te not in mapped or not (te_iv.adversary_tes & mapped):
            continue
        victims = snapshot.subjects_by_te.get(te_iv.victim_te, ())
        objects = snapshot.objects_by_te_class.get((te_iv.object_te, DIR), ())
        adversaries = [
            s
            for te in sorted(te_iv.adversary_tes & mapped)
            for s in snapshot.subjects_by_te.get(te, ())
        ]
        for victim in victims:
            v_level = ctx.level_map[victim.key]
            for obj in objects:
                if not mls_allows_for(victim, obj, ctx.config):
                    continue
                victim_dac = dac_allows(victim.dac, obj, AccessKind.USE_BINDING)
                adv_keys: set[str] = set()
                flags: set[str] = set()
                for adv in adversaries:
                    if ctx.level_map[adv.key] >= v_level:
                        continue
                    if not ipc.has_channel(adv.key, victim.key):
                        continue
                    ok, expanded = _adversary_write(ctx, adv, obj, AccessKind.WRITE)
                    if not ok:
                        continue
                    if victim_dac:
                        adv_keys.add(adv.key)
                    elif ctx.expansion and obj.owner_uid == adv.dac.uid:
                        adv_keys.add(adv.key)
                        flags.add(VIC_EXPAND)
                    else:
                        continue
                    if expanded:
                        flags.add(ADV_EXPAND)
                if adv_keys:
                    out.append(
                        IntegrityViolation(
                            kind=IvKind.PATHNAME,
                            victim=victim.key,
                            obj=obj.key,
                            adversaries=frozenset(adv_keys),
                            via_expansion=frozenset(flags),
                        )
                    )
    return frozenset(out)


@dataclass(frozen=True)
class PipelineResult:
    te_ivs: frozenset[TeIv]
    ivs: frozenset[IntegrityViolation]
    stats: ValidationStats
    context: PipelineContext
    levels: LevelAssignment
    analysis: AdversaryAnalysis


def run_pipeline(
    snapshot: SystemSnapshot,
    classifier: LevelClassifier = DEFAULT_CLASSIFIER,
    config: AnalysisConfig | None = None,
    partitions: int = 1,
    expansion: bool = True,
    allowlist: frozenset[str] = frozenset(),
    ipc_override: IpcMap | None = None,
    parallel: bool | None = None,
) -> PipelineResult:
    """Run both stages plus pathname derivation and return everything."""
    ctx, assignment, analysis = build_context(
        snapshot,
        classifier=classifier,
        config=config,
        expansion=expansion,
        allowlist=allowlist,
        ipc_override=ipc_override,
    )
    te_ivs = compute_te_ivs(snapshot, ctx)
    validated = validate_te_ivs(te_ivs, snapshot, partitions, ctx, parallel)
    pathname = compute_pathname_ivs(snapshot, te_ivs, ctx)
    return PipelineResult(
        te_ivs=te_ivs,
        ivs=validated.ivs | pathname,
        stats=validated.stats,
        context=ctx,
        levels=assignment,
        analysis=analysis,
    )
