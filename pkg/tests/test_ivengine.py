import random

import pytest

from actriage.access import te_allows
from actriage.adversary import PrivilegeLevel, parse_levels_conf
from actriage.ivengine import (
    ADV_EXPAND,
    IntegrityViolation,
    IvKind,
    TeIv,
    VIC_EXPAND,
    build_context,
    compute_pathname_ivs,
    compute_te_ivs,
    run_pipeline,
    validate_te_ivs,
)
from actriage.model import AccessKind, IpcMap, PermissionEntry

from conftest import make_object, make_snapshot, make_subject, rule

T1, T2, T3, T4, T5 = PrivilegeLevel

LEVELS_APP_SVC = parse_levels_conf(
    "match app => T1\nmatch svc => T3\nmatch sysd => T4\ndefault => T5\n"
)


# --- stage one --------------------------------------------------------------

def test_te_iv_when_victim_reads_what_adversary_writes():
    snap = make_snapshot(
        rules=[rule("svc", "t_o", "file", "read"), rule("app", "t_o", "file", "write")]
    )
    adv_map = {"svc": frozenset({"app"}), "app": frozenset()}
    te_ivs = compute_te_ivs(snap, adv_map)
    assert te_ivs == {TeIv(IvKind.READ, "svc", "t_o", frozenset({"app"}))}


def test_no_te_iv_without_adversary_writer():
    snap = make_snapshot(
        rules=[rule("svc", "t_o", "file", "read"), rule("peer", "t_o", "file", "write")]
    )
    adv_map = {"svc": frozenset({"app"}), "peer": frozenset(), "app": frozenset()}
    assert compute_te_ivs(snap, adv_map) == frozenset()


def test_binding_te_iv_uses_dir_vocabulary():
    snap = make_snapshot(
        rules=[rule("svc", "t_d", "dir", "search"), rule("app", "t_d", "dir", "add_name")]
    )
    adv_map = {"svc": frozenset({"app"}), "app": frozenset()}
    assert compute_te_ivs(snap, adv_map) == {
        TeIv(IvKind.BINDING, "svc", "t_d", frozenset({"app"}))
    }


def test_te_ivs_match_triple_loop_enumeration():
    rng = random.Random(71)
    domains = [f"d{i}" for i in range(8)]
    labels = [f"l{i}" for i in range(12)]
    policy = [
        rule(
            rng.choice(domains),
            rng.choice(labels),
            rng.choice(["file", "dir"]),
            *rng.sample(
                ["read", "open", "write", "execute", "search", "add_name", "getattr"],
                rng.randint(1, 3),
            ),
        )
        for _ in range(120)
    ]
    snap = make_snapshot(rules=policy)
    adv_map = {
        d: frozenset(a for a in domains if (hash(a) % 5) < (hash(d) % 5))
        for d in domains
    }
    got = compute_te_ivs(snap, adv_map)
    kinds = [
        (IvKind.READ, AccessKind.READ, "file"),
        (IvKind.WRITE, AccessKind.WRITE, "file"),
        (IvKind.EXEC, AccessKind.EXEC, "file"),
        (IvKind.BINDING, AccessKind.USE_BINDING, "dir"),
    ]
    expected = set()
    for iv_kind, use_kind, cls in kinds:
        for victim in domains:
            for obj in labels:
                if not te_allows(policy, {}, victim, obj, cls, use_kind):
                    continue
                advs = frozenset(
                    a
                    for a in adv_map[victim]
                    if te_allows(policy, {}, a, obj, cls, AccessKind.WRITE)
                )
                if advs:
                    expected.add(TeIv(iv_kind, victim, obj, advs))
    assert got == expected


# --- stage two --------------------------------------------------------------

def _three_party():
    app = make_subject("app", "10001")
    svc = make_subject("svc", "1013", supplementary={"42"})
    shared = make_object("t_o", "1000", "42", 0o660, paths=("/data/shared",))
    return app, svc, shared


def test_validation_rejects_dac_denied_adversary():
    app, svc, shared = _three_party()
    snap = make_snapshot(
        rules=[rule("svc", "t_o", "file", "read"), rule("app", "t_o", "file", "write")],
        subjects=[app, svc],
        objects=[shared],
    )
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    te_ivs = compute_te_ivs(snap, ctx)
    assert te_ivs  # stage one sees the flow
    result = validate_te_ivs(te_ivs, snap, context=ctx)
    assert result.ivs == frozenset()  # app has no DAC write on 660 group-42 file


def test_validation_accepts_expansion_enabled_write():
    app, svc, shared = _three_party()
    snap = make_snapshot(
        rules=[rule("svc", "t_o", "file", "read"), rule("app", "t_o", "file", "write")],
        subjects=[app, svc],
        objects=[shared],
        perm_entries={"P": PermissionEntry(frozenset({"42"}), "dangerous")},
    )
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    result = validate_te_ivs(compute_te_ivs(snap, ctx), snap, context=ctx)
    assert result.ivs == {
        IntegrityViolation(
            IvKind.READ, svc.key, shared.key, frozenset({app.key}), frozenset({ADV_EXPAND})
        )
    }
    # Disabling expansion removes it.
    ctx2, _, _ = build_context(snap, classifier=LEVELS_APP_SVC, expansion=False)
    assert validate_te_ivs(compute_te_ivs(snap, ctx2), snap, context=ctx2).ivs == frozenset()


def test_adversary_must_be_strictly_lower_at_subject_level():
    peer_a = make_subject("svc", "1013")
    peer_b = make_subject("svc2", "1014")
    obj = make_object("t_o", "1000", "1000", 0o666, paths=("/data/x",))
    snap = make_snapshot(
        rules=[rule("svc", "t_o", "file", "read"), rule("svc2", "t_o", "file", "write")],
        subjects=[peer_a, peer_b],
        objects=[obj],
    )
    ctx, _, _ = build_context(snap)  # default classifier: both T3
    assert validate_te_ivs(compute_te_ivs(snap, ctx), snap, context=ctx).ivs == frozenset()


def test_unmapped_candidates_are_skipped_and_counted():
    app, svc, shared = _three_party()
    snap = make_snapshot(
        rules=[
            rule("svc", "t_o", "file", "read"),
            rule("app", "t_o", "file", "write"),
            rule("ghost", "t_o", "file", "read"),  # no process runs as ghost
        ],
        subjects=[app, svc],
        objects=[shared],
        perm_entries={"P": PermissionEntry(frozenset({"42"}), "dangerous")},
    )
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    te_ivs = compute_te_ivs(snap, ctx)
    assert any(iv.victim_te == "ghost" for iv in te_ivs)
    result = validate_te_ivs(te_ivs, snap, context=ctx)
    assert result.stats.skipped_unmapped == 1
    assert result.stats.total_te_ivs == len(te_ivs)
    assert 0.0 < result.stats.skipped_pct < 100.0
    assert all("ghost" not in iv.victim for iv in result.ivs)


def test_validation_refines_stage_one_labels():
    rng = random.Random(73)
    out = _random_system(rng)
    snap, classifier = out
    ctx, _, _ = build_context(snap, classifier=classifier)
    te_ivs = compute_te_ivs(snap, ctx)
    result = validate_te_ivs(te_ivs, snap, context=ctx)
    label_pairs = {(iv.kind, iv.victim_te, iv.object_te) for iv in te_ivs}
    for iv in result.ivs:
        victim_te = iv.victim.split("|", 1)[0]
        object_te = iv.obj.split("|", 1)[0]
        assert (iv.kind, victim_te, object_te) in label_pairs


def _random_system(rng, n_subjects=6, n_objects=14, n_rules=50):
    levels_text = []
    subjects = []
    for i in range(n_subjects):
        level = rng.randint(1, 5)
        te = f"d{i}"
        levels_text.append(f"match {te} => T{level}")
        subjects.append(
            make_subject(
                te,
                str(1000 + i),
                supplementary=frozenset(rng.sample(["42", "43"], rng.randint(0, 2))),
                cats=frozenset(rng.sample(["c1"], rng.randint(0, 1))),
            )
        )
    levels_text.append("default => T3")
    labels = [f"l{j}" for j in range(5)]
    objects = [
        make_object(
            rng.choice(labels),
            rng.choice(["1000", "1001", "0"]),
            rng.choice(["42", "43", "0"]),
            rng.choice([0o600, 0o640, 0o660, 0o664, 0o666, 0o707, 0o777]),
            obj_class=rng.choice(["file", "dir"]),
            paths=(f"/data/f{j}",),
            cats=frozenset(rng.sample(["c1"], rng.randint(0, 1))),
        )
        for j in range(n_objects)
    ]
    policy = [
        rule(
            rng.choice([s.te for s in subjects]),
            rng.choice(labels),
            rng.choice(["file", "dir"]),
            *rng.sample(["read", "open", "write", "search", "add_name", "execute"], rng.randint(1, 2)),
        )
        for _ in range(n_rules)
    ]
    keys = [s.key for s in subjects]
    channels = {(a, v) for a in keys for v in keys if a != v and rng.random() < 0.5}
    snap = make_snapshot(
        rules=policy,
        subjects=subjects,
        objects=objects,
        perm_entries={"P": PermissionEntry(frozenset({"42"}), "dangerous")},
        ipc_channels=channels,
    )
    return snap, parse_levels_conf("\n".join(levels_text) + "\n")


def test_partition_counts_do_not_change_results():
    rng = random.Random(79)
    for _ in range(5):
        snap, classifier = _random_system(rng)
        ctx, _, _ = build_context(snap, classifier=classifier)
        te_ivs = compute_te_ivs(snap, ctx)
        reference = validate_te_ivs(te_ivs, snap, partitions=1, context=ctx)
        for partitions in (2, 3, 4, 8):
            got = validate_te_ivs(te_ivs, snap, partitions=partitions, context=ctx)
            assert got.ivs == reference.ivs
            assert got.stats == reference.stats


def test_parallel_worker_path_matches_inline():
    rng = random.Random(83)
    snap, classifier = _random_system(rng, n_subjects=8, n_objects=20, n_rules=90)
    ctx, _, _ = build_context(snap, classifier=classifier)
    te_ivs = compute_te_ivs(snap, ctx)
    inline = validate_te_ivs(te_ivs, snap, partitions=2, context=ctx, parallel=False)
    forked = validate_te_ivs(te_ivs, snap, partitions=2, context=ctx, parallel=True)
    assert inline.ivs == forked.ivs


def test_validate_rejects_bad_partition_count():
    snap, classifier = _random_system(random.Random(0))
    with pytest.raises(ValueError):
        validate_te_ivs(frozenset(), snap, partitions=0)


# --- pathname stage ----------------------------------------------------------

def _luring_parties(mode=0o707, channel=True, total=False):
    app = make_subject("app", "10001")
    svc = make_subject("svc", "1013")
    shared_dir = make_object("t_d", "10001", "10001", mode, obj_class="dir", paths=("/data/d",))
    channels = {(app.key, svc.key)} if channel else set()
    snap = make_snapshot(
        rules=[rule("svc", "t_d", "dir", "search"), rule("app", "t_d", "dir", "write")],
        subjects=[app, svc],
        objects=[shared_dir],
        ipc_channels=channels,
        ipc_total=total,
    )
    return app, svc, shared_dir, snap


def test_binding_iv_with_channel_is_also_pathname_iv():
    app, svc, shared_dir, snap = _luring_parties(mode=0o707)
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    te_ivs = compute_te_ivs(snap, ctx)
    binding = validate_te_ivs(te_ivs, snap, context=ctx).ivs
    assert {iv.kind for iv in binding} == {IvKind.BINDING}
    pathname = compute_pathname_ivs(snap, te_ivs, ctx)
    assert {(iv.victim, iv.obj) for iv in pathname} == {(svc.key, shared_dir.key)}
    (p,) = pathname
    assert p.via_expansion == frozenset()


def test_vic_expansion_pathname_iv_when_victim_lacks_dac():
    app, svc, shared_dir, snap = _luring_parties(mode=0o700)
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    te_ivs = compute_te_ivs(snap, ctx)
    assert validate_te_ivs(te_ivs, snap, context=ctx).ivs == frozenset()
    (p,) = compute_pathname_ivs(snap, te_ivs, ctx)
    assert p.kind is IvKind.PATHNAME
    assert p.via_expansion == {VIC_EXPAND}
    # without expansion the delegated leg is gone
    ctx2, _, _ = build_context(snap, classifier=LEVELS_APP_SVC, expansion=False)
    assert compute_pathname_ivs(snap, compute_te_ivs(snap, ctx2), ctx2) == frozenset()


def test_no_channels_means_no_pathname_ivs():
    app, svc, shared_dir, snap = _luring_parties(channel=False)
    ctx, _, _ = build_context(snap, classifier=LEVELS_APP_SVC)
    assert compute_pathname_ivs(snap, compute_te_ivs(snap, ctx), ctx) == frozenset()


def test_binding_subset_of_pathname_under_total_channels():
    rng = random.Random(89)
    for _ in range(5):
        snap, classifier = _random_system(rng)
        ctx, _, _ = build_context(
            snap, classifier=classifier, ipc_override=IpcMap(total=True)
        )
        te_ivs = compute_te_ivs(snap, ctx)
        binding = {
            (iv.victim, iv.obj): iv.adversaries
            for iv in validate_te_ivs(te_ivs, snap, context=ctx).ivs
            if iv.kind is IvKind.BINDING
        }
        pathname = {
            (iv.victim, iv.obj): iv.adversaries
            for iv in compute_pathname_ivs(snap, te_ivs, ctx)
        }
        for key, advs in binding.items():
            assert key in pathname
            assert advs <= pathname[key]


def test_run_pipeline_no_expansion_is_subset():
    from conftest import assert_iv_subset

    rng = random.Random(97)
    for _ in range(4):
        snap, classifier = _random_system(rng)
        full = run_pipeline(snap, classifier=classifier)
        trimmed = run_pipeline(snap, classifier=classifier, expansion=False)
        assert_iv_subset(trimmed.ivs, full.ivs)
