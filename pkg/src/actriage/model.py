"""Domain model shared by every stage of the triage pipeline.

Subjects and objects are equivalence classes of processes and filesystem
resources keyed by their combined MAC (type + MLS categories) and DAC
(uid/gid/mode) attributes.  Everything here is immutable after snapshot
construction, so all downstream analysis can run concurrently over it.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping


class TriageError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(TriageError):
    """Bad configuration, generator spec, or usage-level input."""


class IngestError(TriageError):
    """Snapshot files are missing, malformed, or mutually inconsistent."""


class InconsistencyError(TriageError):
    """Pipeline outputs violate an internal integrity invariant."""


class AccessKind(enum.Enum):
    """The four access directions the decision predicates reason about."""

    READ = "read"
    WRITE = "write"
    EXEC = "exec"
    USE_BINDING = "use_binding"


FILE = "file"
DIR = "dir"
SYMLINK = "symlink"
OTHER = "other"

#: obj_class values a kind may legally be queried against.  Exec is
#: meaningful only for files, binding use only for directories; symlinks
#: and other inode classes never participate in access decisions.
KIND_CLASSES: Mapping[AccessKind, frozenset[str]] = {
    AccessKind.READ: frozenset({FILE, DIR}),
    AccessKind.WRITE: frozenset({FILE, DIR}),
    AccessKind.EXEC: frozenset({FILE}),
    AccessKind.USE_BINDING: frozenset({DIR}),
}

_RWX_BITS = {"r": 4, "w": 2, "x": 1, "-": 0}


def mode_from_rwx(text: str) -> int:
    """Parse a 9-char rwx triple string (e.g. ``rw-rw-r--``) into a 9-bit int."""
    if len(text) != 9:
        raise ValueError(f"mode string must be 9 characters: {text!r}")
    mode = 0
    for idx, ch in enumerate(text):
        expected = "rwx"[idx % 3]
        if ch not in ("-", expected):
            raise ValueError(f"bad mode character {ch!r} in {text!r}")
        mode = (mode << 1) | (1 if ch != "-" else 0)
    return mode


def mode_to_rwx(mode: int) -> str:
    if not 0 <= mode <= 0o777:
        raise ValueError(f"mode out of range: {mode}")
    out = []
    for shift in (6, 3, 0):
        triple = (mode >> shift) & 7
        out.append("r" if triple & 4 else "-")
        out.append("w" if triple & 2 else "-")
        out.append("x" if triple & 1 else "-")
    return "".join(out)


@dataclass(frozen=True)
class DacIdentity:
    """UNIX identity of a process: uid, primary gid, supplementary groups."""

    uid: str
    gid: str
    supplementary: frozenset[str] = frozenset()

    @property
    def groups(self) -> frozenset[str]:
        """Effective group membership: primary gid plus supplementary set."""
        return self.supplementary | {self.gid}


@dataclass(frozen=True)
class Subject:
    """Equivalence class of processes sharing one MAC+DAC identity."""

    te: str
    categories: frozenset[str]
    dac: DacIdentity
    origin: tuple[str, ...] = field(default=(), compare=False)

    @cached_property
    def key(self) -> str:
        cats = ",".join(sorted(self.categories))
        groups = ",".join(sorted(self.dac.groups))
        return f"{self.te}|{cats}|{self.dac.uid}|{groups}"


@dataclass(frozen=True)
class ObjectEntity:
    """Equivalence class of filesystem resources sharing label and DAC bits."""

    te: str
    categories: frozenset[str]
    owner_uid: str
    group_gid: str
    mode: int
    obj_class: str
    paths: frozenset[str]

    def __post_init__(self) -> None:
        if not self.paths:
            raise ValueError("object must carry at least one path")
        for p in self.paths:
            if not p.startswith("/"):
                raise ValueError(f"object path not absolute: {p!r}")

    @cached_property
    def key(self) -> str:
        cats = ",".join(sorted(self.categories))
        return (
            f"{self.te}|{cats}|{self.owner_uid}|{self.group_gid}"
            f"|{self.mode:03o}|{self.obj_class}"
        )


@dataclass(frozen=True)
class MacAllowRule:
    """One TE allow rule; source/target may name a type or an attribute."""

    source: str
    target: str
    obj_class: str
    perms: frozenset[str]

    def __post_init__(self) -> None:
        if not self.perms:
            raise ValueError("allow rule with empty permission set")


#: Which MAC permission strings realize each (kind, obj_class) pair.  The
#: split follows standard SELinux file/dir permission semantics and is kept
#: in one table so it is auditable and overridable via config.
DEFAULT_VOCABULARY: Mapping[tuple[AccessKind, str], frozenset[str]] = {
    (AccessKind.READ, FILE): frozenset({"read", "open", "getattr"}),
    (AccessKind.WRITE, FILE): frozenset(
        {"write", "append", "create", "unlink", "rename", "setattr"}
    ),
    (AccessKind.EXEC, FILE): frozenset({"execute", "execute_no_trans"}),
    (AccessKind.WRITE, DIR): frozenset(
        {"write", "add_name", "remove_name", "rename", "create"}
    ),
    (AccessKind.USE_BINDING, DIR): frozenset({"search", "read", "getattr"}),
}


@dataclass(frozen=True)
class PermVocabulary:
    """Per (kind, obj_class) sets of MAC permission strings."""

    entries: Mapping[tuple[AccessKind, str], frozenset[str]]

    @classmethod
    def default(cls) -> "PermVocabulary":
        return cls(dict(DEFAULT_VOCABULARY))

    def perms_for(self, kind: AccessKind, obj_class: str) -> frozenset[str]:
        return self.entries.get((kind, obj_class), frozenset())

    def kind_classes(self) -> tuple[tuple[AccessKind, str], ...]:
        return tuple(self.entries)


DEFAULT_KERNEL_LABELS = frozenset({"rootfs", "selinuxfs", "kernel", "sysfs"})

_KIND_BY_NAME = {k.value: k for k in AccessKind}


@dataclass(frozen=True)
class AnalysisConfig:
    """Tunable analysis knobs: permission vocabulary, MLS bypass, kernel labels."""

    vocabulary: PermVocabulary
    mls_bypass_subjects: frozenset[str] = frozenset()
    mls_bypass_objects: frozenset[str] = frozenset()
    kernel_labels: frozenset[str] = DEFAULT_KERNEL_LABELS

    @classmethod
    def default(cls) -> "AnalysisConfig":
        return cls(vocabulary=PermVocabulary.default())


def load_analysis_config(text: str) -> AnalysisConfig:
    """Parse the plain-text analysis config.

    Grammar: one ``kind class perm`` triple per line, ``#`` comments.
    Vocabulary lines use a kind of read/write/exec/use_binding.  MLS bypass
    sets use ``bypass subject TYPE`` / ``bypass object TYPE`` and the kernel
    label set uses ``kernel label TYPE``.  Vocabulary lines, when present,
    replace the default table entirely.
    """
    vocab: dict[tuple[AccessKind, str], set[str]] = {}
    bypass_subjects: set[str] = set()
    bypass_objects: set[str] = set()
    kernel: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"config line {lineno}: expected 3 fields, got {raw!r}")
        head, middle, tail = parts
        if head == "bypass":
            if middle == "subject":
                bypass_subjects.add(tail)
            elif middle == "object":
                bypass_objects.add(tail)
            else:
                raise ConfigError(f"config line {lineno}: bypass side must be subject or object")
        elif head == "kernel":
            if middle != "label":
                raise ConfigError(f"config line {lineno}: expected 'kernel label NAME'")
            kernel.add(tail)
        elif head in _KIND_BY_NAME:
            kind = _KIND_BY_NAME[head]
            if middle not in (FILE, DIR):
                raise ConfigError(f"config line {lineno}: class must be file or dir")
            if middle not in KIND_CLASSES[kind]:
                raise ConfigError(f"config line {lineno}: {head} does not apply to {middle} objects")
            vocab.setdefault((kind, middle), set()).add(tail)
        else:
            raise ConfigError(f"config line {lineno}: unknown directive {head!r}")
    vocabulary = (
        PermVocabulary({k: frozenset(v) for k, v in vocab.items()})
        if vocab
        else PermVocabulary.default()
    )
    return AnalysisConfig(
        vocabulary=vocabulary,
        mls_bypass_subjects=frozenset(bypass_subjects),
        mls_bypass_objects=frozenset(bypass_objects),
        kernel_labels=frozenset(kernel) if kernel else DEFAULT_KERNEL_LABELS,
    )


@dataclass(frozen=True)
class MountEntry:
    mountpoint: str
    flags: frozenset[str]


@dataclass(frozen=True)
class MountTable:
    """Mount entries ordered as parsed; lookup is by longest matching prefix."""

    entries: tuple[MountEntry, ...]

    @classmethod
    def build(cls, entries: Iterable[tuple[str, Iterable[str]]]) -> "MountTable":
        """Normalize raw (mountpoint, flags) pairs.

        Duplicate mountpoints keep the last occurrence (remount semantics)
        and a ``/`` entry is synthesized read-write when absent.
        """
        merged: dict[str, frozenset[str]] = {}
        for point, flags in entries:
            if not point.startswith("/"):
                raise IngestError(f"mountpoint not absolute: {point!r}")
            norm = point.rstrip("/") or "/"
            merged[norm] = frozenset(flags)
        if "/" not in merged:
            merged["/"] = frozenset({"rw"})
        ordered = tuple(MountEntry(p, merged[p]) for p in sorted(merged))
        return cls(ordered)

    def resolve(self, path: str) -> MountEntry:
        """Longest-prefix mount entry for an absolute path (on name boundaries)."""
        if not path.startswith("/"):
            raise ValueError(f"path not absolute: {path!r}")
        best: MountEntry | None = None
        for entry in self.entries:
            mp = entry.mountpoint
            if mp == "/" or path == mp or path.startswith(mp + "/"):
                if best is None or len(mp) > len(best.mountpoint):
                    best = entry
        assert best is not None  # "/" entry always present
        return best


@dataclass(frozen=True)
class PermissionEntry:
    groups: frozenset[str]
    protection_level: str


PROTECTION_LEVELS = ("normal", "dangerous", "signature", "signature|privileged")


@dataclass(frozen=True)
class AndroidPermissionMap:
    """Permission name -> (DAC groups it confers, protection level)."""

    entries: Mapping[str, PermissionEntry]

    @classmethod
    def empty(cls) -> "AndroidPermissionMap":
        return cls({})


@dataclass(frozen=True)
class ProgramConfig:
    """Subjects employing the safe file-sharing class (immune to luring)."""

    fileprovider_subjects: frozenset[str] = frozenset()


@dataclass(frozen=True)
class IpcMap:
    """Who can deliver a pathname-bearing request to whom.

    When no channel data was collected the map is marked ``total``: every
    adversary is assumed able to reach every victim, an upper bound that is
    flagged in the report assumptions.
    """

    channels: frozenset[tuple[str, str]] = frozenset()
    total: bool = False

    def has_channel(self, adversary_key: str, victim_key: str) -> bool:
        if adversary_key == victim_key:
            return False
        if self.total:
            return True
        return (adversary_key, victim_key) in self.channels


@dataclass(frozen=True, eq=True)
class SystemSnapshot:
    """The fully ingested system state consumed by every analysis stage."""

    te_rules: frozenset[MacAllowRule]
    attr_map: Mapping[str, frozenset[str]]
    subjects: frozenset[Subject]
    objects: frozenset[ObjectEntity]
    perm_map: AndroidPermissionMap
    mounts: MountTable
    program_config: ProgramConfig
    ipc_map: IpcMap
    unmapped_te_types: frozenset[str] = frozenset()
    warnings: tuple[str, ...] = field(default=(), compare=False)
    snapshot_id: str = field(default="", compare=False)

    @cached_property
    def subjects_by_key(self) -> Mapping[str, Subject]:
        return {s.key: s for s in self.subjects}

    @cached_property
    def objects_by_key(self) -> Mapping[str, ObjectEntity]:
        return {o.key: o for o in self.objects}

    @cached_property
    def subjects_by_te(self) -> Mapping[str, tuple[Subject, ...]]:
        by_te: dict[str, list[Subject]] = {}
        for s in sorted(self.subjects, key=lambda s: s.key):
            by_te.setdefault(s.te, []).append(s)
        return {te: tuple(subs) for te, subs in by_te.items()}

    @cached_property
    def objects_by_te_class(self) -> Mapping[tuple[str, str], tuple[ObjectEntity, ...]]:
        by_tc: dict[tuple[str, str], list[ObjectEntity]] = {}
        for o in sorted(self.objects, key=lambda o: o.key):
            by_tc.setdefault((o.te, o.obj_class), []).append(o)
        return {tc: tuple(objs) for tc, objs in by_tc.items()}

    def mapped_tes(self) -> frozenset[str]:
        return frozenset(self.subjects_by_te)


def snapshot_digest(named_contents: Iterable[tuple[str, bytes]]) -> str:
    """Stable content hash identifying a snapshot directory."""
    h = hashlib.sha256()
    for name, data in sorted(named_contents):
        h.update(name.encode())
        h.update(b"\x00")
        h.update(data)
        h.update(b"\x00")
    return h.hexdigest()[:16]
