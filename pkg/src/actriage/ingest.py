"""Parsers for the snapshot directory and the snapshot builder.

A snapshot is a directory of plain-text captures:

    sepolicy_allow.txt        allow rules, one per line
    attributes.txt            attribute blocks with indented member types
    files.txt                 recursive listing (dir headers + entry lines)
    procs.txt                 process listing: label user group command [pid]
    proc_groups.txt           ``PID: g1 g2 ...`` supplementary group lines
    platform_permissions.xml  permission -> DAC group mapping
    protection_levels.txt     optional ``NAME LEVEL`` sidecar
    mounts.txt                mount table
    fileprovider.txt          optional, one subject key per line
    ipc.txt                   optional, ``ADV_KEY -> VICTIM_KEY`` lines
    init_groups.txt           optional, ``service NAME group g1 g2`` lines

Each parser has a matching renderer so generated fixtures can assert the
parse/render round trip.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .model import (
    AndroidPermissionMap,
    DacIdentity,
    DIR,
    FILE,
    IngestError,
    IpcMap,
    MacAllowRule,
    MountTable,
    ObjectEntity,
    OTHER,
    PermissionEntry,
    ProgramConfig,
    PROTECTION_LEVELS,
    Subject,
    SYMLINK,
    SystemSnapshot,
    mode_from_rwx,
    mode_to_rwx,
    snapshot_digest,
)

log = logging.getLogger(__name__)

MANDATORY_FILES = (
    "sepolicy_allow.txt",
    "attributes.txt",
    "files.txt",
    "procs.txt",
    "proc_groups.txt",
    "platform_permissions.xml",
    "mounts.txt",
)

#: Well-known AOSP uid/gid names.  Unknown names stay symbolic and compare
#: by string equality.
AOSP_IDS: Mapping[str, str] = {
    "root": "0",
    "system": "1000",
    "radio": "1001",
    "bluetooth": "1002",
    "graphics": "1003",
    "input": "1004",
    "audio": "1005",
    "camera": "1006",
    "log": "1007",
    "compass": "1008",
    "mount": "1009",
    "wifi": "1010",
    "adb": "1011",
    "install": "1012",
    "media": "1013",
    "dhcp": "1014",
    "sdcard_rw": "1015",
    "vpn": "1016",
    "keystore": "1017",
    "usb": "1018",
    "drm": "1019",
    "mdnsr": "1020",
    "gps": "1021",
    "media_rw": "1023",
    "mtp": "1024",
    "sdcard_r": "1028",
    "shell": "2000",
    "cache": "2001",
    "diag": "2002",
    "net_bt_admin": "3001",
    "net_bt": "3002",
    "inet": "3003",
    "net_raw": "3004",
    "net_admin": "3005",
    "everybody": "9997",
    "misc": "9998",
    "nobody": "9999",
}


class IdResolver:
    """Resolve symbolic uid/gid names to numbers; unknown names stay symbolic."""

    def __init__(self, table: Mapping[str, str] | None = None) -> None:
        self.table = dict(AOSP_IDS if table is None else table)
        self._reverse = {num: name for name, num in self.table.items()}

    def canon(self, ident: str) -> str:
        return self.table.get(ident, ident)

    def symbolic(self, ident: str) -> str:
        """Preferred display form: the well-known name when one exists."""
        return self._reverse.get(ident, ident)


def _data_lines(text: str) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            yield lineno, line


def parse_allow_rules(text: str) -> frozenset[MacAllowRule]:
    """Parse ``allow SRC TGT:CLASS PERM;`` / ``allow SRC TGT:CLASS { P... };`` lines.

    Duplicate identical rules merge silently; malformed lines raise
    :class:`IngestError` with their line number.
    """
    rules: set[MacAllowRule] = set()
    for lineno, line in _data_lines(text):
        stripped = line.strip()
        if not stripped.endswith(";"):
            raise IngestError(f"allow rules line {lineno}: missing ';' in {stripped!r}")
        stripped = stripped[:-1].strip()
        parts = stripped.split(None, 2)
        if len(parts) != 3 or parts[0] != "allow":
            raise IngestError(f"allow rules line {lineno}: not an allow rule: {line!r}")
        _, source, rest = parts
        head, _, perm_text = rest.partition(" ")
        if ":" not in head:
            raise IngestError(f"allow rules line {lineno}: missing TARGET:CLASS in {line!r}")
        target, obj_class = head.split(":", 1)
        perm_text = perm_text.strip()
        if perm_text.startswith("{"):
            if not perm_text.endswith("}"):
                raise IngestError(f"allow rules line {lineno}: unbalanced braces in {line!r}")
            perms = frozenset(perm_text[1:-1].split())
        elif len(perm_text.split()) == 1:
            perms = frozenset(perm_text.split())
        else:
            raise IngestError(f"allow rules line {lineno}: multiple perms need braces: {line!r}")
        if not target or not obj_class or not perms:
            raise IngestError(f"allow rules line {lineno}: incomplete rule: {line!r}")
        rules.add(MacAllowRule(source, target, obj_class, perms))
    return frozenset(rules)


def render_allow_rules(rules: Iterable[MacAllowRule]) -> str:
    lines = []
    for r in sorted(rules, key=lambda r: (r.source, r.target, r.obj_class, sorted(r.perms))):
        if len(r.perms) == 1:
            perm_text = next(iter(r.perms))
        else:
            perm_text = "{ " + " ".join(sorted(r.perms)) + " }"
        lines.append(f"allow {r.source} {r.target}:{r.obj_class} {perm_text};")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_attribute_map(text: str) -> dict[str, frozenset[str]]:
    """Parse ``attribute NAME;`` headers followed by indented member type lines."""
    attr_map: dict[str, set[str]] = {}
    current: str | None = None
    for lineno, line in _data_lines(text):
        indented = line[0].isspace()
        stripped = line.strip()
        if not indented and stripped.startswith("attribute "):
            name = stripped[len("attribute "):].strip()
            if not name.endswith(";"):
                raise IngestError(f"attributes line {lineno}: missing ';' in {stripped!r}")
            current = name[:-1].strip()
            attr_map.setdefault(current, set())
        elif indented:
            if current is None:
                raise IngestError(
                    f"attributes line {lineno}: member type {stripped!r} under no attribute header"
                )
            attr_map[current].add(stripped)
        else:
            raise IngestError(f"attributes line {lineno}: unexpected line {stripped!r}")
    return {name: frozenset(members) for name, members in attr_map.items()}


def render_attribute_map(attr_map: Mapping[str, frozenset[str]]) -> str:
    out = []
    for name in sorted(attr_map):
        out.append(f"attribute {name};")
        out.extend(f"   {member}" for member in sorted(attr_map[name]))
    return "\n".join(out) + ("\n" if out else "")


_TYPE_CHAR = {"-": FILE, "d": DIR, "l": SYMLINK}


@dataclass(frozen=True)
class FileRecord:
    """One raw listing entry before equivalence-class grouping."""

    path: str
    obj_class: str
    mode: int
    owner: str
    group: str
    te: str
    categories: frozenset[str]


def _parse_seclabel(label: str, where: str) -> tuple[str, frozenset[str]]:
    parts = label.split(":")
    if len(parts) < 4:
        raise IngestError(f"{where}: malformed security label {label!r}")
    te = parts[2]
    cats = frozenset(parts[4].split(",")) if len(parts) > 4 and parts[4] else frozenset()
    return te, cats


def parse_file_listing(text: str) -> list[FileRecord]:
    """Parse a recursive listing: ``PATH:`` headers, ``MODE USER GROUP LABEL NAME`` entries."""
    records: list[FileRecord] = []
    header: str | None = None
    for lineno, line in _data_lines(text):
        stripped = line.strip()
        if stripped.endswith(":") and stripped.startswith("/"):
            header = stripped[:-1].rstrip("/") or "/"
            continue
        if header is None:
            raise IngestError(f"files line {lineno}: entry before any directory header")
        fields = stripped.split(None, 4)
        if len(fields) != 5:
            raise IngestError(f"files line {lineno}: expected 5 fields, got {stripped!r}")
        mode_str, owner, group, label, name = fields
        path = f"{header}/{name}" if header != "/" else f"/{name}"
        if len(mode_str) != 10 or mode_str[0] not in _TYPE_CHAR and mode_str[0] not in "bcsp":
            raise IngestError(f"{path}: malformed mode string {mode_str!r}")
        obj_class = _TYPE_CHAR.get(mode_str[0], OTHER)
        try:
            mode = mode_from_rwx(mode_str[1:])
        except ValueError as exc:
            raise IngestError(f"{path}: {exc}") from exc
        te, cats = _parse_seclabel(label, path)
        records.append(FileRecord(path, obj_class, mode, owner, group, te, cats))
    return records


def render_file_listing(records: Iterable[FileRecord]) -> str:
    type_char = {FILE: "-", DIR: "d", SYMLINK: "l", OTHER: "s"}
    by_dir: dict[str, list[FileRecord]] = {}
    for rec in records:
        parent, _, name = rec.path.rpartition("/")
        by_dir.setdefault(parent or "/", []).append(rec)
    blocks = []
    for parent in sorted(by_dir):
        lines = [f"{parent}:"]
        for rec in sorted(by_dir[parent], key=lambda r: r.path):
            name = rec.path.rpartition("/")[2]
            label = f"u:object_r:{rec.te}:s0"
            if rec.categories:
                label += ":" + ",".join(sorted(rec.categories))
            lines.append(
                f"{type_char[rec.obj_class]}{mode_to_rwx(rec.mode)} "
                f"{rec.owner} {rec.group} {label} {name}"
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


@dataclass(frozen=True)
class ProcessRecord:
    te: str
    categories: frozenset[str]
    uid: str
    gid: str
    command: str
    pid: str | None
    supplementary: frozenset[str] = frozenset()


def parse_process_listing(
    ps_text: str, groups_text: str
) -> tuple[list[ProcessRecord], list[str]]:
    """Parse the process listing plus the per-pid supplementary group sidecar.

    Processes with no groups entry get an empty supplementary set and a
    warning.  Labels must have the ``u:r:TYPE:LEVELS`` shape.
    """
    groups: dict[str, frozenset[str]] = {}
    for lineno, line in _data_lines(groups_text):
        pid, sep, rest = line.strip().partition(":")
        if not sep or not pid.strip().isdigit():
            raise IngestError(f"proc groups line {lineno}: expected 'PID: g1 g2 ...', got {line!r}")
        groups[pid.strip()] = frozenset(rest.split())

    records: list[ProcessRecord] = []
    warnings: list[str] = []
    for lineno, line in _data_lines(ps_text):
        fields = line.strip().split()
        if len(fields) < 4:
            raise IngestError(f"procs line {lineno}: expected at least 4 fields: {line!r}")
        label, uid, gid = fields[0], fields[1], fields[2]
        if len(fields) >= 5 and fields[-1].isdigit():
            pid: str | None = fields[-1]
            command = " ".join(fields[3:-1])
        else:
            pid = None
            command = " ".join(fields[3:])
        if not label.startswith("u:r:"):
            raise IngestError(f"procs line {lineno}: label not in u:r:TYPE:LEVELS form: {label!r}")
        te, cats = _parse_seclabel(label, f"procs line {lineno}")
        supplementary = frozenset()
        if pid is not None and pid in groups:
            supplementary = groups[pid]
        else:
            warnings.append(f"process {command!r} (pid {pid}): no supplementary groups entry")
        records.append(ProcessRecord(te, cats, uid, gid, command, pid, supplementary))
    return records, warnings


def render_process_listing(records: Iterable[ProcessRecord]) -> tuple[str, str]:
    ps_lines = []
    group_lines = []
    for rec in sorted(records, key=lambda r: (int(r.pid) if r.pid else 0, r.te)):
        label = f"u:r:{rec.te}:s0"
        if rec.categories:
            label += ":" + ",".join(sorted(rec.categories))
        pid_part = f" {rec.pid}" if rec.pid is not None else ""
        ps_lines.append(f"{label} {rec.uid} {rec.gid} {rec.command}{pid_part}")
        if rec.pid is not None and rec.supplementary:
            group_lines.append(f"{rec.pid}: {' '.join(sorted(rec.supplementary))}")
    ps = "\n".join(ps_lines) + ("\n" if ps_lines else "")
    gr = "\n".join(group_lines) + ("\n" if group_lines else "")
    return ps, gr


def parse_init_groups(text: str) -> dict[str, frozenset[str]]:
    """Parse ``service NAME group g1 g2 ...`` lines mapping service name to groups."""
    services: dict[str, frozenset[str]] = {}
    for lineno, line in _data_lines(text):
        fields = line.strip().split()
        if len(fields) < 4 or fields[0] != "service" or fields[2] != "group":
            raise IngestError(f"init groups line {lineno}: expected 'service NAME group g...'")
        services[fields[1]] = frozenset(fields[3:])
    return services


def parse_permission_map(xml_text: str, levels_text: str | None = None) -> AndroidPermissionMap:
    """Parse the permission->group XML plus the optional protection-level sidecar.

    Permissions without group children never affect filesystem DAC and are
    omitted.  Levels default to ``normal`` when neither the XML attribute
    nor the sidecar supplies one.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise IngestError(f"platform permissions XML: {exc}") from exc
    sidecar: dict[str, str] = {}
    if levels_text:
        for lineno, line in _data_lines(levels_text):
            fields = line.strip().split()
            if len(fields) != 2:
                raise IngestError(f"protection levels line {lineno}: expected 'NAME LEVEL'")
            sidecar[fields[0]] = fields[1]
    entries: dict[str, PermissionEntry] = {}
    for elem in root.iter("permission"):
        name = elem.get("name")
        if not name:
            raise IngestError("permission element without a name attribute")
        groups = frozenset(
            g.get("gid") for g in elem.findall("group") if g.get("gid")
        )
        if not groups:
            continue
        level = sidecar.get(name) or elem.get("protectionLevel") or elem.get("level") or "normal"
        if level not in PROTECTION_LEVELS:
            raise IngestError(f"permission {name!r}: unknown protection level {level!r}")
        entries[name] = PermissionEntry(groups=groups, protection_level=level)
    return AndroidPermissionMap(entries)


def render_permission_map(perm_map: AndroidPermissionMap, inline_levels: bool = True) -> tuple[str, str]:
    """Render the XML and (when not inline) the protection-level sidecar."""
    lines = ["<permissions>"]
    sidecar = []
    for name in sorted(perm_map.entries):
        entry = perm_map.entries[name]
        level_attr = f' protectionLevel="{entry.protection_level}"' if inline_levels else ""
        lines.append(f'    <permission name="{name}"{level_attr}>')
        lines.extend(f'        <group gid="{gid}" />' for gid in sorted(entry.groups))
        lines.append("    </permission>")
        if not inline_levels:
            sidecar.append(f"{name} {entry.protection_level}")
    lines.append("</permissions>")
    return "\n".join(lines) + "\n", "\n".join(sidecar) + ("\n" if sidecar else "")


_MOUNT_FLAGS = {"ro", "rw", "nosymlink"}


def parse_mounts(text: str) -> MountTable:
    """Parse ``DEV on MOUNTPOINT type FSTYPE (flag,...)`` lines."""
    entries: list[tuple[str, frozenset[str]]] = []
    for lineno, line in _data_lines(text):
        fields = line.strip().split()
        if len(fields) < 5 or fields[1] != "on" or fields[3] != "type":
            raise IngestError(f"mounts line {lineno}: malformed entry {line!r}")
        mountpoint = fields[2]
        if not mountpoint.startswith("/"):
            raise IngestError(f"mounts line {lineno}: missing mountpoint in {line!r}")
        flag_text = fields[5] if len(fields) > 5 else "()"
        flags = frozenset(flag_text.strip("()").split(",")) & _MOUNT_FLAGS
        entries.append((mountpoint, flags))
    return MountTable.build(entries)


def render_mounts(mounts: MountTable) -> str:
    lines = [
        f"/dev/block on {e.mountpoint} type ext4 ({','.join(sorted(e.flags)) or 'rw'})"
        for e in mounts.entries
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_subject_keys(text: str) -> frozenset[str]:
    return frozenset(line.strip() for _, line in _data_lines(text))


def parse_ipc_channels(text: str) -> frozenset[tuple[str, str]]:
    channels: set[tuple[str, str]] = set()
    for lineno, line in _data_lines(text):
        left, sep, right = line.partition("->")
        if not sep:
            raise IngestError(f"ipc line {lineno}: expected 'ADV_KEY -> VICTIM_KEY'")
        adv, vic = left.strip(), right.strip()
        if adv == vic:
            raise IngestError(f"ipc line {lineno}: self-channel {adv!r}")
        channels.add((adv, vic))
    return frozenset(channels)


@dataclass
class _SubjectAccumulator:
    uid: str
    groups: frozenset[str]
    gid: str
    supplementary: frozenset[str]
    origins: list[str] = field(default_factory=list)


def _build_subjects(
    records: Iterable[ProcessRecord],
    init_groups: Mapping[str, frozenset[str]],
    resolver: IdResolver,
) -> tuple[frozenset[Subject], list[str]]:
    warnings: list[str] = []
    acc: dict[tuple[str, frozenset[str], str], _SubjectAccumulator] = {}
    for rec in records:
        uid = resolver.canon(rec.uid)
        gid = resolver.canon(rec.gid)
        supplementary = frozenset(resolver.canon(g) for g in rec.supplementary)
        if not supplementary:
            service = rec.command.split()[0].rpartition("/")[2]
            if service in init_groups:
                supplementary = frozenset(resolver.canon(g) for g in init_groups[service])
        ident = DacIdentity(uid, gid, supplementary)
        key = (rec.te, rec.categories, uid)
        existing = acc.get(key)
        if existing is None:
            acc[key] = _SubjectAccumulator(uid, ident.groups, gid, supplementary, [rec.command])
        else:
            if existing.groups != ident.groups:
                raise IngestError(
                    f"subject ({rec.te}, uid {uid}) appears with differing group sets: "
                    f"{sorted(existing.groups)} vs {sorted(ident.groups)}"
                )
            existing.origins.append(rec.command)
    subjects = frozenset(
        Subject(
            te=te,
            categories=cats,
            dac=DacIdentity(a.uid, a.gid, a.supplementary),
            origin=tuple(sorted(set(a.origins))),
        )
        for (te, cats, _uid), a in acc.items()
    )
    return subjects, warnings


def _build_objects(records: Iterable[FileRecord], resolver: IdResolver) -> frozenset[ObjectEntity]:
    grouped: dict[tuple, set[str]] = {}
    for rec in records:
        owner = resolver.canon(rec.owner)
        group = resolver.canon(rec.group)
        key = (rec.te, rec.categories, owner, group, rec.mode, rec.obj_class)
        grouped.setdefault(key, set()).add(rec.path)
    return frozenset(
        ObjectEntity(
            te=te,
            categories=cats,
            owner_uid=owner,
            group_gid=group,
            mode=mode,
            obj_class=obj_class,
            paths=frozenset(paths),
        )
        for (te, cats, owner, group, mode, obj_class), paths in grouped.items()
    )


def build_snapshot(
    directory: str | Path, resolver: IdResolver | None = None
) -> SystemSnapshot:
    """Parse a snapshot directory into a validated :class:`SystemSnapshot`.

    Subjects and objects are deduplicated into their equivalence classes;
    TE types carried by files or referenced as rule sources but owned by no
    running process are recorded as unmapped.
    """
    root = Path(directory)
    if not root.is_dir():
        raise IngestError(f"snapshot directory not found: {root}")
    missing = [name for name in MANDATORY_FILES if not (root / name).is_file()]
    if missing:
        raise IngestError(f"snapshot missing mandatory file(s): {', '.join(missing)}")
    resolver = resolver or IdResolver()

    read = lambda name: (root / name).read_text()
    rules = parse_allow_rules(read("sepolicy_allow.txt"))
    attr_map = parse_attribute_map(read("attributes.txt"))
    file_records = parse_file_listing(read("files.txt"))
    proc_records, warnings = parse_process_listing(
        read("procs.txt"), read("proc_groups.txt")
    )
    levels_path = root / "protection_levels.txt"
    perm_map = parse_permission_map(
        read("platform_permissions.xml"),
        levels_path.read_text() if levels_path.is_file() else None,
    )
    perm_map = AndroidPermissionMap(
        {
            name: PermissionEntry(
                groups=frozenset(resolver.canon(g) for g in entry.groups),
                protection_level=entry.protection_level,
            )
            for name, entry in perm_map.entries.items()
        }
    )
    mounts = parse_mounts(read("mounts.txt"))

    init_groups: Mapping[str, frozenset[str]] = {}
    if (root / "init_groups.txt").is_file():
        init_groups = parse_init_groups(read("init_groups.txt"))

    subjects, subject_warnings = _build_subjects(proc_records, init_groups, resolver)
    warnings.extend(subject_warnings)
    objects = _build_objects(file_records, resolver)

    subject_keys = {s.key for s in subjects}
    fileprovider: frozenset[str] = frozenset()
    if (root / "fileprovider.txt").is_file():
        fileprovider = parse_subject_keys(read("fileprovider.txt"))
        for key in sorted(fileprovider - subject_keys):
            warnings.append(f"fileprovider.txt references unknown subject key {key!r}")

    if (root / "ipc.txt").is_file():
        channels = parse_ipc_channels(read("ipc.txt"))
        for adv, vic in sorted(channels):
            if adv not in subject_keys or vic not in subject_keys:
                warnings.append(f"ipc.txt references unknown subject key in {adv!r} -> {vic!r}")
        ipc_map = IpcMap(channels=channels)
    else:
        ipc_map = IpcMap(total=True)
        warnings.append("ipc.txt absent: pathname reachability assumed total (upper bound)")

    mapped = {s.te for s in subjects}
    referenced = {rec.te for rec in file_records} | {
        r.source for r in rules if r.source not in attr_map
    }
    unmapped = frozenset(referenced - mapped)

    contents = []
    for path in sorted(root.iterdir()):
        if path.is_file():
            contents.append((path.name, path.read_bytes()))
    for w in warnings:
        log.warning("%s", w)
    return SystemSnapshot(
        te_rules=rules,
        attr_map=attr_map,
        subjects=subjects,
        objects=objects,
        perm_map=perm_map,
        mounts=mounts,
        program_config=ProgramConfig(fileprovider_subjects=fileprovider),
        ipc_map=ipc_map,
        unmapped_te_types=unmapped,
        warnings=tuple(warnings),
        snapshot_id=snapshot_digest(contents),
    )
