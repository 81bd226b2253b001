import logging

import pytest

from actriage.model import (
    AndroidPermissionMap,
    DacIdentity,
    IpcMap,
    MacAllowRule,
    MountTable,
    ObjectEntity,
    ProgramConfig,
    Subject,
    SystemSnapshot,
)

logging.getLogger("actriage").setLevel(logging.ERROR)

_ACCEPTANCE_OUTCOMES: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or "criterion" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call":
        _ACCEPTANCE_OUTCOMES[name] = report.outcome
    elif report.when == "setup" and report.outcome == "skipped":
        _ACCEPTANCE_OUTCOMES[name] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_OUTCOMES):
        outcome = _ACCEPTANCE_OUTCOMES[name].upper()
        terminalreporter.write_line(f"{name}: {outcome}")


def make_subject(te, uid, gid=None, supplementary=(), cats=()):
    return Subject(
        te=te,
        categories=frozenset(cats),
        dac=DacIdentity(uid=uid, gid=gid if gid is not None else uid,
                        supplementary=frozenset(supplementary)),
    )


def make_object(te, owner, group, mode, obj_class="file", paths=("/data/x",), cats=()):
    return ObjectEntity(
        te=te,
        categories=frozenset(cats),
        owner_uid=owner,
        group_gid=group,
        mode=mode,
        obj_class=obj_class,
        paths=frozenset(paths),
    )


def rule(src, tgt, obj_class, *perms):
    return MacAllowRule(src, tgt, obj_class, frozenset(perms))


def make_snapshot(
    rules=(),
    attr_map=None,
    subjects=(),
    objects=(),
    perm_entries=None,
    mounts=(("/data", ("rw",)), ("/system", ("ro",))),
    fileprovider=(),
    ipc_channels=None,
    ipc_total=False,
):
    """Programmatic snapshot for unit tests, bypassing the file parsers."""
    return SystemSnapshot(
        te_rules=frozenset(rules),
        attr_map=dict(attr_map or {}),
        subjects=frozenset(subjects),
        objects=frozenset(objects),
        perm_map=AndroidPermissionMap(dict(perm_entries or {})),
        mounts=MountTable.build(mounts),
        program_config=ProgramConfig(fileprovider_subjects=frozenset(fileprovider)),
        ipc_map=IpcMap(
            channels=frozenset(ipc_channels or ()), total=ipc_total
        ),
        snapshot_id="test",
    )


@pytest.fixture
def snapshot_factory():
    return make_snapshot


def assert_iv_subset(smaller, larger):
    """Every violation in `smaller` appears in `larger` with at least the
    same adversaries and expansion flags (identity: kind, victim, object)."""
    by_identity = {(iv.kind, iv.victim, iv.obj): iv for iv in larger}
    for iv in smaller:
        big = by_identity.get((iv.kind, iv.victim, iv.obj))
        assert big is not None, f"missing violation {iv}"
        assert iv.adversaries <= big.adversaries, f"adversaries shrank for {iv}"
        assert iv.via_expansion <= big.via_expansion, f"flags shrank for {iv}"
