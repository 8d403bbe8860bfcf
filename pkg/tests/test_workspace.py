from __future__ import annotations

import os
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import jailfuzz
from forage.errors import DuplicateRun, GuardViolation, IsolationDenied, SeedUnavailable
from forage.workspace import (
    SEP,
    AccessAuditEntry,
    Role,
    WorkspaceLayout,
    detect_breach,
    load_audit_log,
    provision_run,
    resolve_path,
)
from conftest import APPENDIX_KB


@pytest.fixture
def jail(layout, tmp_path):
    return jailfuzz.plant(layout, tmp_path / "outside")


class TestProvision:
    def test_tree(self, layout):
        for d in (layout.eval_ws, layout.plan_ws, layout.shared, layout.knowledge):
            assert d.is_dir()
        assert layout.dataset.read_text() == "[]\n"
        assert layout.metrics.read_text() == "{}\n"
        assert layout.audit_path.exists()
        assert (layout.knowledge / "INDEX.md").exists()

    def test_duplicate_run_id(self, layout):
        with pytest.raises(DuplicateRun):
            provision_run("run_001", experiment_root=layout.root.parent)

    @pytest.mark.parametrize("bad", ["", ".", "..", "a/b"])
    def test_bad_run_id(self, tmp_path, bad):
        with pytest.raises(ValueError):
            provision_run(bad, experiment_root=tmp_path)

    def test_seeded(self, tmp_path):
        layout = provision_run("s", APPENDIX_KB, experiment_root=tmp_path)
        names = sorted(p.name for p in layout.knowledge.glob("*.md") if p.name != "INDEX.md")
        assert len(names) == 6

    def test_missing_seed_leaves_nothing(self, tmp_path):
        with pytest.raises(SeedUnavailable):
            provision_run("s", tmp_path / "nope", experiment_root=tmp_path / "exp")
        assert not (tmp_path / "exp" / "s").exists()

    def test_runs_are_disjoint(self, tmp_path):
        a = provision_run("a", experiment_root=tmp_path)
        b = provision_run("b", experiment_root=tmp_path)
        (a.shared / "x").write_text("a")
        assert not (b.shared / "x").exists()


class TestResolvePath:
    @pytest.mark.parametrize("role, path, mode, ok", [
        (Role.EVALUATOR, "eval_ws/eval.py", "r", True),
        (Role.EVALUATOR, "plan_ws/action.py", "r", False),
        (Role.PLANNER, "plan_ws/action.py", "w", True),
        (Role.PLANNER, "eval_ws/eval.py", "r", False),
        (Role.PLANNER, "shared/../eval_ws/eval.py", "r", False),
        (Role.PLANNER, "shared/to_eval/eval.py", "r", False),
        (Role.PLANNER, "plan_ws/up/eval_ws", "r", False),
        (Role.PLANNER, "plan_ws/up/shared/dataset.json", "r", True),
        (Role.EVALUATOR, "shared/out/secret", "r", False),
        (Role.EVALUATOR, "/etc/passwd", "r", False),
        (Role.EVALUATOR, "audit.log", "r", False),
        (Role.EXECUTOR, "eval_ws/eval.py", "r", True),
        (Role.EXECUTOR, "eval_ws/eval.py", "w", False),
        (Role.EXECUTOR, "shared/dataset.json", "w", True),
        (Role.PLANNER, "", "r", False),
        (Role.PLANNER, "shared/\x00", "r", False),
    ])
    def test_table(self, jail, role, path, mode, ok):
        if ok:
            got = resolve_path(role, path, jail.layout, mode=mode)
            assert str(got) == jailfuzz.oracle_resolve(jail, path)
        else:
            with pytest.raises(IsolationDenied):
                resolve_path(role, path, jail.layout, mode=mode)

    def test_absolute_inside_is_fine(self, jail):
        p = os.path.join(jail.root, "shared", "dataset.json")
        assert str(resolve_path(Role.PLANNER, p, jail.layout)) == p

    def test_bad_mode(self, layout):
        with pytest.raises(ValueError):
            resolve_path(Role.PLANNER, "shared", layout, mode="x")

    def test_every_call_is_audited(self, layout):
        resolve_path(Role.PLANNER, "shared/a", layout, round_no=3)
        with pytest.raises(IsolationDenied):
            resolve_path(Role.PLANNER, "eval_ws/eval.py", layout, round_no=3)
        entries = load_audit_log(layout.audit_path)
        assert [(e.verdict, e.round, e.requested_path) for e in entries] == [
            ("allowed", 3, "shared/a"), ("denied", 3, "eval_ws/eval.py")]

    def test_no_audit_log(self, tmp_path):
        layout = provision_run("x", experiment_root=tmp_path)
        layout.audit = None
        resolve_path(Role.EVALUATOR, "shared", layout)

    @settings(max_examples=300, deadline=None)
    @given(data=st.data())
    def test_hypothesis_matches_oracle(self, tmp_path_factory, data):
        if not hasattr(self, "_jail"):
            base = tmp_path_factory.mktemp("hyp")
            self.__class__._jail = jailfuzz.plant(provision_run("run_001", experiment_root=base / "exp"),
                                                  base / "outside")
        jail = self._jail
        comps = data.draw(st.lists(st.sampled_from(jailfuzz.VOCAB), max_size=8))
        prefix = data.draw(st.sampled_from(["", jail.root + "/", "/"]))
        role = data.draw(st.sampled_from(list(Role)))
        mode = data.draw(st.sampled_from("rw"))
        assert jailfuzz.check_one(jail, role, mode, prefix + "/".join(comps)) is None

    def test_random_fuzz(self, jail):
        assert jailfuzz.fuzz(jail, 2000, seed=1) == []

    def test_concurrent_audit_appends(self, layout):
        def worker(i):
            for j in range(50):
                try:
                    resolve_path(Role.PLANNER, f"shared/{i}-{j}" if j % 2 else "eval_ws/x", layout)
                except IsolationDenied:
                    pass
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(load_audit_log(layout.audit_path)) == 200


class TestAudit:
    def test_line_round_trip(self):
        e = AccessAuditEntry(Role.EXECUTOR, "shared/x y", "denied", 4, "2026-01-01T00:00:00+00:00", "w")
        line = e.to_line()
        assert line.count(SEP) == 5
        assert AccessAuditEntry.from_line(line) == e

    def test_separator_in_path_is_neutralized(self):
        e = AccessAuditEntry(Role.PLANNER, f"a{SEP}b\nc", "denied", 1, "t")
        assert AccessAuditEntry.from_line(e.to_line()).requested_path == "a?b?c"

    def test_short_line_rejected(self):
        with pytest.raises(ValueError):
            AccessAuditEntry.from_line("only" + SEP + "two")

    def test_breach_report_groups_denials(self):
        entries = [
            AccessAuditEntry(Role.PLANNER, "eval_ws/eval.py", "denied", 1, "t"),
            AccessAuditEntry(Role.PLANNER, "shared/../eval_ws", "denied", 1, "t"),
            AccessAuditEntry(Role.EVALUATOR, "plan_ws/action.py", "denied", 2, "t"),
            AccessAuditEntry(Role.PLANNER, "shared/dataset.json", "allowed", 2, "t"),
        ]
        report = detect_breach(entries)
        assert not report.contaminated
        assert report.denials == 3
        assert report.total_entries == 4
        assert set(report.by_role_round) == {("planner", 1), ("evaluator", 2)}
        assert report.render().splitlines()[0] == "3 denials in 4 audited accesses"
        assert report.render().endswith("clean")

    @pytest.mark.parametrize("entry", [
        AccessAuditEntry(Role.PLANNER, "eval_ws/eval.py", "allowed", 1, "t"),
        AccessAuditEntry(Role.EVALUATOR, "plan_ws", "allowed", 1, "t"),
        AccessAuditEntry(Role.EVALUATOR, "/etc/passwd", "allowed", 1, "t"),
        AccessAuditEntry(Role.EXECUTOR, "eval_ws/eval.py", "allowed", 1, "t", "w"),
    ])
    def test_allowed_cross_access_is_guard_violation(self, entry):
        with pytest.raises(GuardViolation):
            detect_breach([entry])

    def test_executor_private_read_is_not_a_violation(self):
        detect_breach([AccessAuditEntry(Role.EXECUTOR, "eval_ws/eval.py", "allowed", 1, "t", "r")])


class TestLayout:
    def test_subtrees(self, layout):
        assert layout.subtrees(Role.PLANNER) == (layout.plan_ws, layout.shared)
        assert layout.subtrees(Role.EXECUTOR, "w") == (layout.shared,)

    def test_at_resolves(self, layout):
        assert WorkspaceLayout.at(layout.root).root == layout.root.resolve()

    def test_executor_has_no_opponent(self):
        with pytest.raises(ValueError):
            Role.EXECUTOR.opponent
