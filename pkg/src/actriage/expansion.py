"""Permission expansion: the two ways adversaries enlarge the reachable state.

Adversaries expand their own DAC permissions through permission-granted
supplementary groups, and expand a victim's permissions by delegating DAC
bits on objects they own (modeled directly as the post-delegation world).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .access import AccessIndex, mls_allows_for
from .model import (
    AccessKind,
    AndroidPermissionMap,
    AnalysisConfig,
    DacIdentity,
    KIND_CLASSES,
    Subject,
    SystemSnapshot,
)

OBTAINABLE_LEVELS = frozenset({"normal", "dangerous"})


@dataclass(frozen=True)
class ExpandedSubject:
    """A subject plus the DAC groups it can obtain through permissions."""

    base: Subject
    gained_groups: frozenset[str]
    granting_permissions: Mapping[str, str]  # group -> permission that grants it

    @property
    def effective_groups(self) -> frozenset[str]:
        return self.base.dac.groups | self.gained_groups

    def dac_identity(self) -> DacIdentity:
        return DacIdentity(
            uid=self.base.dac.uid,
            gid=self.base.dac.gid,
            supplementary=self.base.dac.supplementary | self.gained_groups,
        )


def adversary_expand(
    subject: Subject | ExpandedSubject,
    perm_map: AndroidPermissionMap,
    signed_allowlist: frozenset[str] = frozenset(),
) -> ExpandedSubject:
    """Groups obtainable via normal/dangerous permissions (signature ones only
    for allowlisted subjects).  Expanding an already expanded subject is a
    no-op."""
    if isinstance(subject, ExpandedSubject):
        base = subject.base
        already = subject.effective_groups
    else:
        base = subject
        already = base.dac.groups
    gained: dict[str, str] = {}
    for name in sorted(perm_map.entries):
        entry = perm_map.entries[name]
        obtainable = entry.protection_level in OBTAINABLE_LEVELS or (
            entry.protection_level.startswith("signature") and base.key in signed_allowlist
        )
        if not obtainable:
            continue
        for group in entry.groups:
            if group not in already and group not in gained:
                gained[group] = name
    if isinstance(subject, ExpandedSubject):
        return ExpandedSubject(
            base=base,
            gained_groups=subject.gained_groups | frozenset(gained),
            granting_permissions={**subject.granting_permissions, **gained},
        )
    return ExpandedSubject(
        base=base, gained_groups=frozenset(gained), granting_permissions=gained
    )


@dataclass(frozen=True)
class DelegationTarget:
    """An adversary-owned object the victim could be granted DAC access to."""

    adversary: str  # subject key
    victim: str  # subject key
    obj: str  # object key
    kinds: frozenset[AccessKind]


def victim_expansion_targets(
    adversary: Subject,
    victim: Subject,
    snapshot: SystemSnapshot,
    config: AnalysisConfig | None = None,
    index: AccessIndex | None = None,
) -> frozenset[DelegationTarget]:
    """Objects owned by the adversary that the victim passes TE and MLS for.

    Current DAC bits are ignored: the owner can grant them.  The target set
    is finite, bounded by the adversary's owned objects.
    """
    cfg = config or AnalysisConfig.default()
    index = index or AccessIndex(snapshot.te_rules, snapshot.attr_map, cfg.vocabulary)
    targets: set[DelegationTarget] = set()
    for obj in snapshot.objects:
        if obj.owner_uid != adversary.dac.uid:
            continue
        if not mls_allows_for(victim, obj, cfg):
            continue
        kinds = frozenset(
            kind
            for kind in AccessKind
            if obj.obj_class in KIND_CLASSES[kind]
            and index.allows(victim.te, obj.te, obj.obj_class, kind)
        )
        if kinds:
            targets.add(
                DelegationTarget(
                    adversary=adversary.key,
                    victim=victim.key,
                    obj=obj.key,
                    kinds=kinds,
                )
            )
    return frozenset(targets)


def load_subject_list(text: str) -> frozenset[str]:
    """One subject key per line; ``#`` comments and blank lines ignored."""
    keys = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            keys.add(line)
    return frozenset(keys)
