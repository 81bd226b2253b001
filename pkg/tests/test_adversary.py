import random

import pytest

from actriage.access import AccessIndex, te_allows
from actriage.adversary import (
    DEFAULT_CLASSIFIER,
    LevelClassifier,
    LevelRule,
    PrivilegeLevel,
    assign_privilege_levels,
    compute_adversaries,
    compute_integrity_wall,
    compute_kernel_writers,
    parse_levels_conf,
)
from actriage.model import AccessKind, ConfigError

from conftest import make_snapshot, make_subject, rule

T1, T2, T3, T4, T5 = PrivilegeLevel


# --- kernel writers and the wall -------------------------------------------

def test_kernel_writers_single_rule():
    snap = make_snapshot(rules=[rule("t_init", "rootfs", "dir", "write")])
    writers = compute_kernel_writers(snap, frozenset({"rootfs"}))
    assert writers == {"t_init"}


def test_kernel_writers_empty_label_set():
    snap = make_snapshot(rules=[rule("t_init", "rootfs", "dir", "write")])
    assert compute_kernel_writers(snap, frozenset()) == frozenset()


def test_kernel_writers_match_rule_scan_on_random_policy():
    rng = random.Random(41)
    types = [f"t{i}" for i in range(30)]
    labels = ["rootfs", "selinuxfs", "o1", "o2"]
    policy = [
        rule(
            rng.choice(types),
            rng.choice(labels),
            rng.choice(["file", "dir"]),
            *rng.sample(["read", "write", "add_name", "search", "getattr"], rng.randint(1, 2)),
        )
        for _ in range(80)
    ]
    snap = make_snapshot(rules=policy)
    kernel_labels = frozenset({"rootfs", "selinuxfs"})
    expected = {
        t
        for t in types
        if any(
            te_allows(policy, {}, t, k, cls, AccessKind.WRITE)
            for k in kernel_labels
            for cls in ("file", "dir")
        )
    }
    assert compute_kernel_writers(snap, kernel_labels) == expected


def test_integrity_wall_executable_writers():
    snap = make_snapshot(
        rules=[
            rule("s", "lib_lbl", "file", "execute"),
            rule("t_build", "lib_lbl", "file", "write"),
            rule("t_init", "rootfs", "dir", "write"),
        ]
    )
    wall = compute_integrity_wall(snap, frozenset({"rootfs"}))
    assert wall["s"] == {"t_init", "t_build", "s"}


def test_integrity_wall_for_non_executing_subject():
    snap = make_snapshot(
        rules=[
            rule("quiet", "data_lbl", "file", "read"),
            rule("t_init", "rootfs", "dir", "write"),
        ]
    )
    wall = compute_integrity_wall(snap, frozenset({"rootfs"}))
    assert wall["quiet"] == {"t_init", "quiet"}


def test_integrity_wall_matches_double_loop_enumeration():
    rng = random.Random(47)
    domains = [f"d{i}" for i in range(12)]
    labels = [f"l{i}" for i in range(8)] + ["rootfs"]
    policy = [
        rule(
            rng.choice(domains),
            rng.choice(labels),
            "file",
            *rng.sample(["read", "write", "execute", "open"], rng.randint(1, 2)),
        )
        for _ in range(70)
    ]
    snap = make_snapshot(rules=policy)
    kernel_labels = frozenset({"rootfs"})
    wall = compute_integrity_wall(snap, kernel_labels)
    kernel_writers = {
        d for d in domains if te_allows(policy, {}, d, "rootfs", "file", AccessKind.WRITE)
    }
    for s in domains:
        expected = set(kernel_writers) | {s}
        for lbl in labels:
            if te_allows(policy, {}, s, lbl, "file", AccessKind.EXEC):
                expected |= {
                    d for d in domains if te_allows(policy, {}, d, lbl, "file", AccessKind.WRITE)
                }
        assert wall[s] == expected, s


# --- classifier -------------------------------------------------------------

def test_default_classifier_table_entries():
    assert DEFAULT_CLASSIFIER.classify("untrusted_app") == (T1, False)
    assert DEFAULT_CLASSIFIER.classify("untrusted_app_27") == (T1, False)
    assert DEFAULT_CLASSIFIER.classify("platform_app") == (T2, False)
    assert DEFAULT_CLASSIFIER.classify("odd_service", uid="0") == (T5, False)
    assert DEFAULT_CLASSIFIER.classify("odd_service", uid="1000") == (T4, False)
    assert DEFAULT_CLASSIFIER.classify("odd_service") == (T3, True)


def test_levels_conf_parsing_and_first_match():
    classifier = parse_levels_conf(
        "# comment\n"
        "match untrusted_app* => T1\n"
        "match uid:root => T5\n"
        "match u* => T2\n"
        "default => T3\n"
    )
    assert classifier.classify("untrusted_app")[0] is T1  # first match wins
    assert classifier.classify("udev")[0] is T2
    assert classifier.classify("svcd", uid="0")[0] is T5
    assert classifier.classify("svcd")[0] is T3


def test_levels_conf_requires_default():
    with pytest.raises(ConfigError, match="default"):
        parse_levels_conf("match a => T1\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_levels_conf("match a -> T1\n")
    with pytest.raises(ConfigError):
        parse_levels_conf("match a => T9\ndefault => T3\n")


def test_levels_conf_resolves_symbolic_uids():
    classifier = parse_levels_conf("match uid:root => T5\ndefault => T1\n")
    assert classifier.classify("anything", uid="0")[0] is T5


def test_assign_levels_classifier_with_only_default():
    subjects = [make_subject(f"d{i}", str(1000 + i)) for i in range(4)]
    snap = make_snapshot(subjects=subjects)
    classifier = LevelClassifier(rules=(), default=T2)
    assignment = assign_privilege_levels(snap, classifier)
    assert set(assignment.levels.values()) == {T2}
    assert len(assignment.defaulted) == 4


# --- adversaries and trust ---------------------------------------------------

def _leveled_snapshot():
    subjects = {
        "a1": make_subject("untrusted_app", "10001"),
        "a2": make_subject("platform_app", "10100"),
        "svc": make_subject("mediaserver", "1013"),
        "sys": make_subject("system_server", "1000"),
        "root": make_subject("init", "0"),
    }
    snap = make_snapshot(subjects=subjects.values())
    return snap, subjects


def test_adversaries_are_strictly_lower_level():
    snap, subjects = _leveled_snapshot()
    assignment = assign_privilege_levels(snap)
    wall = compute_integrity_wall(snap)
    analysis = compute_adversaries(snap, assignment.levels, wall)
    advs = analysis.adversaries
    assert advs[subjects["svc"].key] == {
        subjects["a1"].key,
        subjects["a2"].key,
    }
    assert advs[subjects["a1"].key] == frozenset()


def test_all_same_level_means_no_adversaries():
    subjects = [make_subject(f"d{i}", "0") for i in range(3)]
    snap = make_snapshot(subjects=subjects)
    assignment = assign_privilege_levels(snap)
    analysis = compute_adversaries(snap, assignment.levels, compute_integrity_wall(snap))
    assert all(not a for a in analysis.adversaries.values())


def test_adversary_relation_antisymmetric_and_monotone():
    rng = random.Random(53)
    subjects = [make_subject(f"d{i}", str(2000 + i)) for i in range(9)]
    snap = make_snapshot(subjects=subjects)
    levels = {s.key: PrivilegeLevel(rng.randint(1, 5)) for s in subjects}
    analysis = compute_adversaries(snap, levels, {})
    advs = analysis.adversaries
    for v in subjects:
        for a in subjects:
            if a.key in advs[v.key]:
                assert v.key not in advs[a.key]
    for a in subjects:
        for v in subjects:
            for w in subjects:
                if levels[a.key] < levels[v.key] <= levels[w.key]:
                    assert a.key in advs[v.key]
                    assert a.key in advs[w.key]


def test_wall_member_below_level_is_flagged():
    snap = make_snapshot(
        subjects=[
            make_subject("system_server", "1000"),
            make_subject("platform_app", "10400"),
            make_subject("init", "0"),
        ],
        rules=[
            rule("system_server", "lib", "file", "execute"),
            rule("platform_app", "lib", "file", "write"),
            rule("init", "rootfs", "dir", "write"),
        ],
    )
    assignment = assign_privilege_levels(snap)
    wall = compute_integrity_wall(snap)
    analysis = compute_adversaries(snap, assignment.levels, wall)
    sys_key = make_subject("system_server", "1000").key
    app_key = make_subject("platform_app", "10400").key
    entry = analysis.trust.entries[sys_key]
    assert not entry.consistent
    assert entry.violations == {app_key}
    assert not analysis.trust.consistent
    # Consistency is exactly emptiness of the violation set.
    for e in analysis.trust.entries.values():
        assert e.consistent == (not e.violations)


def test_wall_always_contains_self_and_kernel_writers():
    snap, subjects = _leveled_snapshot()
    snap2 = make_snapshot(
        subjects=subjects.values(),
        rules=[rule("init", "rootfs", "dir", "write"), rule("init", "selinuxfs", "file", "write")],
    )
    wall = compute_integrity_wall(snap2)
    writers = compute_kernel_writers(snap2, frozenset({"rootfs", "selinuxfs"}))
    for te, tcb in wall.items():
        assert te in tcb
        assert writers <= tcb


def test_level_rule_with_glob_and_uid_requires_both():
    r = LevelRule(T5, te_glob="svc*", uid="0")
    assert r.matches("svcd", "0")
    assert not r.matches("svcd", "1000")
    assert not r.matches("other", "0")
    assert not r.matches("svcd", None)
