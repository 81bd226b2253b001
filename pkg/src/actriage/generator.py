"""Deterministic synthetic-system generator.

Given a seed, emits a complete snapshot directory in the exact on-disk
formats the ingest parsers expect, plus a matching levels file and a spec
manifest.  Output is byte-identical for identical specs, every configured
privilege level gets at least one subject, and (whenever two levels exist)
at least one object is seeded that an adversary can write and a
higher-level victim uses.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .adversary import PrivilegeLevel
from .ingest import (
    FileRecord,
    IdResolver,
    ProcessRecord,
    render_allow_rules,
    render_attribute_map,
    render_file_listing,
    render_mounts,
    render_permission_map,
    render_process_listing,
)
from .model import (
    AndroidPermissionMap,
    ConfigError,
    DacIdentity,
    DIR,
    FILE,
    MacAllowRule,
    MountTable,
    PermissionEntry,
    Subject,
    SYMLINK,
)

_LEVEL_PRIORITY = (
    PrivilegeLevel.T1,
    PrivilegeLevel.T5,
    PrivilegeLevel.T3,
    PrivilegeLevel.T2,
    PrivilegeLevel.T4,
)

_SUPPL_POOL = ("3003", "9997", "1015")
_PERM_GROUP_POOL = ("1007", "1015", "1023", "2001")
_FILE_PERMS = (
    "read", "open", "getattr", "write", "append", "create", "unlink",
    "setattr", "execute", "execute_no_trans", "ioctl", "lock", "map",
)
_DIR_PERMS = (
    "read", "getattr", "search", "write", "add_name", "remove_name",
    "create", "rename", "open", "ioctl",
)
_FILE_MODES = (0o640, 0o644, 0o660, 0o664, 0o666, 0o600, 0o604)
_DIR_MODES = (0o700, 0o750, 0o755, 0o770, 0o775, 0o777, 0o707)
_MOUNT_POOL = (
    ("/system", ("ro",)),
    ("/data", ("rw",)),
    ("/data/media", ("rw", "nosymlink")),
    ("/vendor", ("ro", "nosymlink")),
    ("/cache", ("rw",)),
    ("/mnt", ("rw", "nosymlink")),
    ("/efs", ("rw",)),
)


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    n_subjects: int
    n_objects: int
    n_rules: int
    n_mounts: int = 4
    n_permissions: int = 8
    level_distribution: tuple[tuple[PrivilegeLevel, float], ...] | None = None
    ipc_density: float = 0.3

    def __post_init__(self) -> None:
        for name in ("n_subjects", "n_objects", "n_rules", "n_mounts", "n_permissions"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"generator spec: {name} must be positive")
        if not 0.0 <= self.ipc_density <= 1.0:
            raise ConfigError("generator spec: ipc_density must be within [0, 1]")
        if self.level_distribution is not None:
            if not self.level_distribution:
                raise ConfigError("generator spec: level distribution is empty")
            if any(w < 0 for _, w in self.level_distribution) or not any(
                w > 0 for _, w in self.level_distribution
            ):
                raise ConfigError("generator spec: level weights must include a positive weight")


@dataclass
class _GenSubject:
    te: str
    categories: frozenset[str]
    uid: str
    gid: str
    supplementary: frozenset[str]
    level: PrivilegeLevel

    def model(self) -> Subject:
        return Subject(
            te=self.te,
            categories=self.categories,
            dac=DacIdentity(self.uid, self.gid, self.supplementary),
        )


def _levels_for(spec: GeneratorSpec) -> tuple[list[PrivilegeLevel], list[float]]:
    if spec.level_distribution is None:
        usable = list(_LEVEL_PRIORITY[: min(5, spec.n_subjects)])
        return usable, [1.0] * len(usable)
    levels = [lvl for lvl, w in spec.level_distribution if w > 0]
    weights = [w for _, w in spec.level_distribution if w > 0]
    if spec.n_subjects < len(levels):
        raise ConfigError(
            f"generator spec: {len(levels)} levels configured but only "
            f"{spec.n_subjects} subjects requested"
        )
    return levels, weights


def _uid_for(level: PrivilegeLevel, i: int) -> str:
    if level is PrivilegeLevel.T5:
        return "0"
    if level is PrivilegeLevel.T4:
        return "1000"
    if level is PrivilegeLevel.T3:
        return str(2000 + i)
    return str(10000 + i)


def generate_system(spec: GeneratorSpec, out_dir: str | Path) -> Path:
    """Write a snapshot directory (plus levels.conf and gen_spec.json)."""
    rng = random.Random(spec.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolver = IdResolver()

    levels, weights = _levels_for(spec)
    subjects: list[_GenSubject] = []
    for i in range(spec.n_subjects):
        level = levels[i] if i < len(levels) else rng.choices(levels, weights)[0]
        reusable = [s for s in subjects if s.level is level]
        if i >= len(levels) and reusable and rng.random() < 0.10:
            donor = rng.choice(reusable)
            te = donor.te
            cats = frozenset({f"c{600 + i}"})  # distinct key, same label
        else:
            te = f"dom{i}"
            cats = (
                frozenset({f"c{512 + i}"})
                if level in (PrivilegeLevel.T1, PrivilegeLevel.T2) and rng.random() < 0.4
                else frozenset()
            )
        supplementary = frozenset(
            rng.sample(_SUPPL_POOL, rng.randint(0, 2))
        )
        uid = _uid_for(level, i)
        subjects.append(_GenSubject(te, cats, uid, uid, supplementary, level))

    subject_tes = sorted({s.te for s in subjects})
    n_labels = max(2, spec.n_objects // 3)
    object_labels = [f"objt{j}" for j in range(n_labels)]

    attr_map: dict[str, frozenset[str]] = {}
    if len(subject_tes) >= 2:
        attr_map["domset0"] = frozenset(rng.sample(subject_tes, 2))
    if n_labels >= 2:
        attr_map["objset0"] = frozenset(rng.sample(object_labels, 2))

    mounts_raw = rng.sample(_MOUNT_POOL, min(spec.n_mounts, len(_MOUNT_POOL)))
    if rng.random() < 0.2:
        mounts_raw.append(("/", ("rw",)))
    mount_tops = sorted(p for p, _ in mounts_raw if p != "/")

    all_cats = sorted({c for s in subjects for c in s.categories})
    file_records: list[FileRecord] = []
    seen_keys: set[tuple] = set()
    for j in range(spec.n_objects):
        te = rng.choice(object_labels)
        roll = rng.random()
        obj_class = FILE if roll < 0.65 else DIR if roll < 0.95 else SYMLINK
        owner = rng.choice([s.uid for s in subjects] + ["0", "1000"])
        group = rng.choice(list(_PERM_GROUP_POOL) + [owner])
        if obj_class == SYMLINK:
            mode = 0o777
        elif obj_class == DIR:
            mode = rng.choice(_DIR_MODES)
        else:
            mode = rng.choice(_FILE_MODES)
        cats = (
            frozenset({rng.choice(all_cats)})
            if all_cats and rng.random() < 0.25
            else frozenset()
        )
        top = rng.choice(mount_tops + [""])
        paths = [f"{top}/n{j}"]
        if rng.random() < 0.15:
            alt = rng.choice(mount_tops + [""])
            paths.append(f"{alt}/alt{j}")
        key = (te, cats, owner, group, mode, obj_class)
        seen_keys.add(key)
        for path in paths:
            file_records.append(
                FileRecord(
                    path=path,
                    obj_class=obj_class,
                    mode=mode,
                    owner=resolver.symbolic(owner),
                    group=resolver.symbolic(group),
                    te=te,
                    categories=cats,
                )
            )

    rules: set[MacAllowRule] = set()
    subject_attrs = [a for a in attr_map if a.startswith("dom")]
    object_attrs = [a for a in attr_map if a.startswith("obj")]
    for _ in range(spec.n_rules):
        if subject_attrs and rng.random() < 0.15:
            src = rng.choice(subject_attrs)
        else:
            src = rng.choice(subject_tes)
        if object_attrs and rng.random() < 0.10:
            tgt = rng.choice(object_attrs)
        else:
            tgt = rng.choice(object_labels)
        obj_class = FILE if rng.random() < 0.6 else DIR
        pool = _FILE_PERMS if obj_class == FILE else _DIR_PERMS
        perms = frozenset(rng.sample(pool, rng.randint(1, 3)))
        rules.add(MacAllowRule(src, tgt, obj_class, perms))

    # Seed a guaranteed adversary-writable object used by a higher-level victim.
    distinct_levels = sorted({s.level for s in subjects})
    if len(distinct_levels) >= 2:
        adv = min(subjects, key=lambda s: (s.level, s.te))
        victim = max(subjects, key=lambda s: (s.level, s.te))
        rules.add(MacAllowRule(adv.te, "seeded_file", FILE, frozenset({"write"})))
        rules.add(MacAllowRule(victim.te, "seeded_file", FILE, frozenset({"read", "open"})))
        rules.add(MacAllowRule(adv.te, "seeded_dir", DIR, frozenset({"write", "add_name"})))
        rules.add(
            MacAllowRule(victim.te, "seeded_dir", DIR, frozenset({"search", "getattr"}))
        )
        file_records.append(
            FileRecord("/data/seedf", FILE, 0o666, "1000", "1000", "seeded_file", frozenset())
        )
        file_records.append(
            FileRecord(
                "/data/seedd", DIR, 0o707, resolver.symbolic(adv.uid), resolver.symbolic(adv.uid),
                "seeded_dir", frozenset(),
            )
        )

    perm_levels = ("normal", "dangerous", "signature")
    perm_entries = {}
    for p in range(spec.n_permissions):
        groups = frozenset(rng.sample(_PERM_GROUP_POOL, rng.randint(1, 2)))
        level = rng.choices(perm_levels, weights=(0.4, 0.4, 0.2))[0]
        perm_entries[f"PERM_{p}"] = PermissionEntry(groups=groups, protection_level=level)
    perm_map = AndroidPermissionMap(perm_entries)
    inline_levels = rng.random() < 0.5

    proc_records: list[ProcessRecord] = []
    pid = 100
    for s in subjects:
        n_procs = 2 if rng.random() < 0.3 else 1
        for k in range(n_procs):
            suffix = "" if k == 0 else "-worker"
            proc_records.append(
                ProcessRecord(
                    te=s.te,
                    categories=s.categories,
                    uid=resolver.symbolic(s.uid),
                    gid=resolver.symbolic(s.gid),
                    command=f"/system/bin/{s.te}{suffix}",
                    pid=str(pid),
                    supplementary=frozenset(resolver.symbolic(g) for g in s.supplementary),
                )
            )
            pid += 1

    subject_keys = sorted({s.model().key for s in subjects})
    fileprovider_keys: list[str] = []
    if rng.random() < 0.3:
        fileprovider_keys = sorted(
            rng.sample(subject_keys, min(len(subject_keys), rng.randint(1, 2)))
        )
    channels = []
    for a in subject_keys:
        for v in subject_keys:
            if a != v and rng.random() < spec.ipc_density:
                channels.append(f"{a} -> {v}")

    (out / "sepolicy_allow.txt").write_text(render_allow_rules(rules))
    (out / "attributes.txt").write_text(render_attribute_map(attr_map))
    (out / "files.txt").write_text(render_file_listing(file_records))
    ps_text, groups_text = render_process_listing(proc_records)
    (out / "procs.txt").write_text(ps_text)
    (out / "proc_groups.txt").write_text(groups_text)
    xml_text, sidecar = render_permission_map(perm_map, inline_levels=inline_levels)
    (out / "platform_permissions.xml").write_text(xml_text)
    if sidecar:
        (out / "protection_levels.txt").write_text(sidecar)
    (out / "mounts.txt").write_text(render_mounts(MountTable.build(mounts_raw)))
    if fileprovider_keys:
        (out / "fileprovider.txt").write_text("\n".join(fileprovider_keys) + "\n")
    (out / "ipc.txt").write_text("\n".join(channels) + ("\n" if channels else ""))

    level_lines = [
        f"match {te} => T{lvl.value}"
        for te, lvl in sorted({(s.te, s.level) for s in subjects})
    ]
    level_lines.append("default => T3")
    (out / "levels.conf").write_text("\n".join(level_lines) + "\n")

    manifest = asdict(spec)
    if spec.level_distribution is not None:
        manifest["level_distribution"] = [
            [lvl.value, w] for lvl, w in spec.level_distribution
        ]
    (out / "gen_spec.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def build_te_benchmark(
    n_rules: int, seed: int = 0, n_domains: int = 200
) -> tuple[frozenset[MacAllowRule], dict[str, frozenset[str]], dict[str, frozenset[str]]]:
    """Rules, attribute map, and a label-level adversary map for scaling runs.

    Object-type count scales with the rule count while the domain count and
    the per-object fan-in stay flat, which keeps the stage-one work per rule
    roughly constant across policy sizes.
    """
    rng = random.Random(seed)
    domains = [f"d{i}" for i in range(n_domains)]
    n_objects = max(64, n_rules // 150)
    object_tes = [f"o{i}" for i in range(n_objects)]
    attr_map = {
        "grp0": frozenset(domains[: n_domains // 10]),
        "grp1": frozenset(domains[n_domains // 10 : n_domains // 5]),
    }
    rules: set[MacAllowRule] = set()
    attempts = 0
    while len(rules) < n_rules and attempts < n_rules * 3:
        attempts += 1
        src = rng.choice(domains) if rng.random() < 0.95 else rng.choice(list(attr_map))
        tgt = rng.choice(object_tes)
        obj_class = FILE if rng.random() < 0.7 else DIR
        pool = _FILE_PERMS if obj_class == FILE else _DIR_PERMS
        perms = frozenset(rng.sample(pool, rng.randint(1, 2)))
        rules.add(MacAllowRule(src, tgt, obj_class, perms))
    half = n_domains // 2
    low = frozenset(domains[:half])
    te_adversaries = {d: (frozenset() if d in low else low) for d in domains}
    return frozenset(rules), attr_map, te_adversaries
