"""Per-subject trust analysis: privilege levels, integrity wall, adversaries.

Worst-case trust is the minimal TCB each subject must rely on (writers of
its executables plus writers of kernel-integrity labels).  Best-case trust
is everything at the subject's privilege level or higher.  The two views
are cross-checked: any wall member sitting below the protected subject's
level is flagged as an inconsistency.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Mapping

from .access import AccessIndex
from .model import (
    AccessKind,
    AnalysisConfig,
    ConfigError,
    DIR,
    FILE,
    Subject,
    SystemSnapshot,
)

log = logging.getLogger(__name__)


class PrivilegeLevel(enum.IntEnum):
    """Trust strata from untrusted/isolated apps (T1) up to root processes (T5)."""

    T1 = 1
    T2 = 2
    T3 = 3
    T4 = 4
    T5 = 5


@dataclass(frozen=True)
class LevelRule:
    """First-match classifier rule on a TE label glob and/or a uid."""

    level: PrivilegeLevel
    te_glob: str | None = None
    uid: str | None = None

    def matches(self, te: str, uid: str | None) -> bool:
        if self.te_glob is not None and not fnmatchcase(te, self.te_glob):
            return False
        if self.uid is not None and (uid is None or uid != self.uid):
            return False
        return True


@dataclass(frozen=True)
class LevelClassifier:
    rules: tuple[LevelRule, ...]
    default: PrivilegeLevel

    def classify(self, te: str, uid: str | None = None) -> tuple[PrivilegeLevel, bool]:
        """Return (level, defaulted) for a TE label and optional uid."""
        for rule in self.rules:
            if rule.matches(te, uid):
                return rule.level, False
        return self.default, True


#: AOSP-style default classification; fully overridable via a levels file.
DEFAULT_CLASSIFIER = LevelClassifier(
    rules=(
        LevelRule(PrivilegeLevel.T1, te_glob="untrusted_app*"),
        LevelRule(PrivilegeLevel.T1, te_glob="isolated_app*"),
        LevelRule(PrivilegeLevel.T1, te_glob="webview*"),
        LevelRule(PrivilegeLevel.T2, te_glob="platform_app*"),
        LevelRule(PrivilegeLevel.T2, te_glob="priv_app*"),
        LevelRule(PrivilegeLevel.T5, te_glob="init"),
        LevelRule(PrivilegeLevel.T5, te_glob="kernel*"),
        LevelRule(PrivilegeLevel.T5, uid="0"),
        LevelRule(PrivilegeLevel.T4, uid="1000"),
    ),
    default=PrivilegeLevel.T3,
)

_LEVEL_NAMES = {f"T{lvl.value}": lvl for lvl in PrivilegeLevel}


def parse_levels_conf(text: str, resolver=None) -> LevelClassifier:
    """Parse ordered ``match <te-glob|uid:NAME> => T<k>`` lines plus a final default."""
    from .ingest import IdResolver

    resolver = resolver or IdResolver()
    rules: list[LevelRule] = []
    default: PrivilegeLevel | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, level_name = line.rpartition("=>")
        level_name = level_name.strip()
        if not sep or level_name not in _LEVEL_NAMES:
            raise ConfigError(f"levels line {lineno}: expected '... => T<k>', got {raw!r}")
        level = _LEVEL_NAMES[level_name]
        head = head.strip()
        if head == "default":
            default = level
        elif head.startswith("match "):
            pattern = head[len("match "):].strip()
            if not pattern:
                raise ConfigError(f"levels line {lineno}: empty match pattern")
            if pattern.startswith("uid:"):
                rules.append(LevelRule(level, uid=resolver.canon(pattern[4:])))
            else:
                rules.append(LevelRule(level, te_glob=pattern))
        else:
            raise ConfigError(f"levels line {lineno}: expected 'match ...' or 'default', got {raw!r}")
    if default is None:
        raise ConfigError("levels file must declare a 'default => T<k>' line")
    return LevelClassifier(rules=tuple(rules), default=default)


def compute_kernel_writers(
    snapshot: SystemSnapshot,
    kernel_labels: frozenset[str],
    index: AccessIndex | None = None,
) -> frozenset[str]:
    """TE types holding a write-like authorization to any kernel-integrity label."""
    index = index or AccessIndex(snapshot.te_rules, snapshot.attr_map)
    writers: set[str] = set()
    for label in kernel_labels:
        writers |= index.subjects_with(AccessKind.WRITE, FILE, label)
        writers |= index.subjects_with(AccessKind.WRITE, DIR, label)
    return frozenset(writers)


def compute_integrity_wall(
    snapshot: SystemSnapshot,
    kernel_labels: frozenset[str] | None = None,
    index: AccessIndex | None = None,
    config: AnalysisConfig | None = None,
) -> Mapping[str, frozenset[str]]:
    """Worst-case TCB per subject TE type.

    tcb(s) = kernel writers + writers of any object type s may execute + s.
    """
    cfg = config or AnalysisConfig.default()
    labels = kernel_labels if kernel_labels is not None else cfg.kernel_labels
    index = index or AccessIndex(snapshot.te_rules, snapshot.attr_map, cfg.vocabulary)
    kernel_writers = compute_kernel_writers(snapshot, labels, index)

    exec_grants = index.grants.get((AccessKind.EXEC, FILE), {})
    file_writers = index.grants.get((AccessKind.WRITE, FILE), {})
    exec_by_subject: dict[str, set[str]] = {}
    for obj_te, subjects in exec_grants.items():
        for s in subjects:
            exec_by_subject.setdefault(s, set()).add(obj_te)

    domains = index.source_types | snapshot.mapped_tes()
    wall: dict[str, frozenset[str]] = {}
    for domain in domains:
        tcb = set(kernel_writers)
        for exec_te in exec_by_subject.get(domain, ()):
            tcb |= file_writers.get(exec_te, frozenset())
        tcb.add(domain)
        wall[domain] = frozenset(tcb)
    return wall


@dataclass(frozen=True)
class LevelAssignment:
    levels: Mapping[str, PrivilegeLevel]  # subject key -> level
    defaulted: tuple[str, ...]


def assign_privilege_levels(
    snapshot: SystemSnapshot, classifier: LevelClassifier = DEFAULT_CLASSIFIER
) -> LevelAssignment:
    """Classify every subject into exactly one privilege level."""
    levels: dict[str, PrivilegeLevel] = {}
    defaulted: list[str] = []
    for subject in sorted(snapshot.subjects, key=lambda s: s.key):
        level, used_default = classifier.classify(subject.te, subject.dac.uid)
        levels[subject.key] = level
        if used_default:
            defaulted.append(subject.key)
            log.debug("subject %s classified by default as %s", subject.key, level.name)
    return LevelAssignment(levels=levels, defaulted=tuple(defaulted))


@dataclass(frozen=True)
class TrustEntry:
    worst_case_tcb: frozenset[str]
    best_case_trust: frozenset[str]
    violations: frozenset[str]

    @property
    def consistent(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class TrustReport:
    entries: Mapping[str, TrustEntry]  # victim subject key -> entry

    @property
    def consistent(self) -> bool:
        return all(e.consistent for e in self.entries.values())

    def violating_subjects(self) -> Mapping[str, frozenset[str]]:
        return {
            key: entry.violations
            for key, entry in sorted(self.entries.items())
            if entry.violations
        }


@dataclass(frozen=True)
class AdversaryAnalysis:
    adversaries: Mapping[str, frozenset[str]]  # victim key -> adversary keys
    trust: TrustReport


def compute_adversaries(
    snapshot: SystemSnapshot,
    level_map: Mapping[str, PrivilegeLevel],
    wall: Mapping[str, frozenset[str]],
) -> AdversaryAnalysis:
    """Best-case adversary sets plus the worst-case/best-case consistency check.

    A subject's adversaries are all subjects at a strictly lower level;
    same-level subjects are mutually trusting.  Inconsistencies (a wall
    member below the subject's level) are reported as warnings, not fatal.
    """
    subjects = sorted(snapshot.subjects, key=lambda s: s.key)
    by_te: dict[str, list[Subject]] = {}
    for s in subjects:
        by_te.setdefault(s.te, []).append(s)

    adversaries: dict[str, frozenset[str]] = {}
    entries: dict[str, TrustEntry] = {}
    for victim in subjects:
        v_level = level_map[victim.key]
        best = frozenset(s.key for s in subjects if level_map[s.key] >= v_level)
        advs = frozenset(s.key for s in subjects if level_map[s.key] < v_level)
        lifted = {
            s.key
            for member_te in wall.get(victim.te, frozenset())
            for s in by_te.get(member_te, ())
        }
        violations = frozenset(lifted - best)
        adversaries[victim.key] = advs
        entries[victim.key] = TrustEntry(
            worst_case_tcb=frozenset(lifted),
            best_case_trust=best,
            violations=violations,
        )
        if violations:
            log.warning(
                "trust inconsistency: wall of %s contains lower-level subject(s) %s",
                victim.key,
                sorted(violations),
            )
    return AdversaryAnalysis(adversaries=adversaries, trust=TrustReport(entries))
