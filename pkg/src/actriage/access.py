"""Base access-decision predicates: TE, MLS, and DAC, plus their conjunction.

``te_allows`` is the reference implementation (a per-rule scan without
attribute pre-expansion); ``AccessIndex`` precomputes the same relation for
the pipeline's bulk queries.  The two are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .model import (
    AccessKind,
    AnalysisConfig,
    DacIdentity,
    IngestError,
    KIND_CLASSES,
    MacAllowRule,
    ObjectEntity,
    PermVocabulary,
    Subject,
    SystemSnapshot,
)

_DAC_BIT = {
    AccessKind.READ: 4,
    AccessKind.WRITE: 2,
    AccessKind.EXEC: 1,
    AccessKind.USE_BINDING: 1,  # directory search bit
}


def _expand(name: str, attr_map: Mapping[str, frozenset[str]]) -> frozenset[str]:
    return attr_map.get(name, frozenset({name}))


def te_allows(
    policy: Iterable[MacAllowRule],
    attr_map: Mapping[str, frozenset[str]],
    subject_te: str,
    object_te: str,
    obj_class: str,
    kind: AccessKind,
    vocabulary: PermVocabulary | None = None,
) -> bool:
    """Whether some allow rule grants the kind from subject type to object type.

    Attributes in rule source/target positions are expanded through
    ``attr_map``; identifiers absent from the map are concrete types.
    """
    vocab = (vocabulary or PermVocabulary.default()).perms_for(kind, obj_class)
    if not vocab:
        return False
    for rule in policy:
        if rule.obj_class != obj_class or not (rule.perms & vocab):
            continue
        if subject_te in _expand(rule.source, attr_map) and object_te in _expand(
            rule.target, attr_map
        ):
            return True
    return False


def mls_allows(subject_categories: frozenset[str], object_categories: frozenset[str]) -> bool:
    """Category-subset check: the subject must dominate the object's categories."""
    return object_categories <= subject_categories


def mls_allows_for(
    subject: Subject, obj: ObjectEntity, config: AnalysisConfig
) -> bool:
    """MLS check with the configured bypass sets applied."""
    if subject.te in config.mls_bypass_subjects or obj.te in config.mls_bypass_objects:
        return True
    return mls_allows(subject.categories, obj.categories)


def dac_allows(identity: DacIdentity, obj: ObjectEntity, kind: AccessKind) -> bool:
    """First-match UNIX semantics: owner, else group, else other triple decides."""
    bit = _DAC_BIT[kind]
    if identity.uid == obj.owner_uid:
        shift = 6
    elif obj.group_gid in identity.groups:
        shift = 3
    else:
        shift = 0
    return bool((obj.mode >> shift) & bit)


class AccessIndex:
    """Attribute-expanded TE grant index keyed by vocabulary (kind, class).

    ``grants[(kind, cls)][object_te]`` is the frozenset of subject types
    authorized for that kind.  Raises :class:`IngestError` when a rule
    references a name declared as an attribute but missing from the
    attribute map.
    """

    def __init__(
        self,
        rules: Iterable[MacAllowRule],
        attr_map: Mapping[str, frozenset[str]],
        vocabulary: PermVocabulary | None = None,
        attribute_names: frozenset[str] | None = None,
    ) -> None:
        vocab = vocabulary or PermVocabulary.default()
        declared = attribute_names if attribute_names is not None else frozenset(attr_map)
        missing = declared - set(attr_map)
        grants: dict[tuple[AccessKind, str], dict[str, set[str]]] = {
            kc: {} for kc in vocab.kind_classes()
        }
        sources: set[str] = set()
        targets: set[str] = set()

        def expand(name: str) -> frozenset[str]:
            if name in missing:
                raise IngestError(f"rule references unknown attribute {name!r}")
            return attr_map.get(name, frozenset({name}))

        for rule in rules:
            src = expand(rule.source)
            tgt = expand(rule.target)
            sources.update(src)
            targets.update(tgt)
            for (kind, cls), perms in vocab.entries.items():
                if cls != rule.obj_class or not (rule.perms & perms):
                    continue
                bucket = grants[(kind, cls)]
                for t in tgt:
                    entry = bucket.get(t)
                    if entry is None:
                        entry = bucket[t] = set()
                    entry.update(src)

        self.vocabulary = vocab
        self.grants: dict[tuple[AccessKind, str], dict[str, frozenset[str]]] = {
            kc: {t: frozenset(s) for t, s in bucket.items()}
            for kc, bucket in grants.items()
        }
        self.source_types = frozenset(sources)
        self.target_types = frozenset(targets)

    def subjects_with(self, kind: AccessKind, obj_class: str, object_te: str) -> frozenset[str]:
        return self.grants.get((kind, obj_class), {}).get(object_te, frozenset())

    def allows(self, subject_te: str, object_te: str, obj_class: str, kind: AccessKind) -> bool:
        return subject_te in self.subjects_with(kind, obj_class, object_te)

    def objects_granted(self, subject_te: str, kind: AccessKind, obj_class: str) -> frozenset[str]:
        """Object types the subject type is authorized on (reverse lookup)."""
        return frozenset(
            te
            for te, subs in self.grants.get((kind, obj_class), {}).items()
            if subject_te in subs
        )


@dataclass(frozen=True)
class AccessDecision:
    te: bool
    mls: bool
    dac: bool

    @property
    def allowed(self) -> bool:
        return self.te and self.mls and self.dac


def can_access(
    snapshot: SystemSnapshot,
    subject: Subject,
    obj: ObjectEntity,
    kind: AccessKind,
    config: AnalysisConfig | None = None,
    index: AccessIndex | None = None,
) -> bool:
    """Conjunction of the TE, MLS, and DAC authorizations."""
    return decide_access(snapshot, subject, obj, kind, config, index).allowed


def decide_access(
    snapshot: SystemSnapshot,
    subject: Subject,
    obj: ObjectEntity,
    kind: AccessKind,
    config: AnalysisConfig | None = None,
    index: AccessIndex | None = None,
) -> AccessDecision:
    cfg = config or AnalysisConfig.default()
    if obj.obj_class not in KIND_CLASSES[kind]:
        return AccessDecision(False, False, False)
    if index is not None:
        te = index.allows(subject.te, obj.te, obj.obj_class, kind)
    else:
        te = te_allows(
            snapshot.te_rules, snapshot.attr_map, subject.te, obj.te,
            obj.obj_class, kind, cfg.vocabulary,
        )
    return AccessDecision(
        te=te,
        mls=mls_allows_for(subject, obj, cfg),
        dac=dac_allows(subject.dac, obj, kind),
    )
