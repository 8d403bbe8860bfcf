from __future__ import annotations

import json
import sys
import time

import pytest

from procs import pids_with
from forage.errors import MetricsUnparseable, NothingToExecute
from forage.executor import TAIL_BYTES, execute_action, execute_eval, run_process
from forage.workspace import Role, load_audit_log

PY = (sys.executable,)


def write_action(layout, body):
    (layout.plan_ws / "action.py").write_text(body)


def write_eval(layout, body):
    (layout.eval_ws / "eval.py").write_text(body)


class TestRunProcess:
    def test_exit_and_output(self, tmp_path):
        r = run_process([*PY, "-c", "import sys; print('hi'); sys.exit(4)"], cwd=tmp_path, timeout=10)
        assert r.exit_status == 4 and r.stdout == b"hi\n" and not r.timed_out

    def test_timeout_sigterm(self, tmp_path):
        t0 = time.monotonic()
        r = run_process([*PY, "-c", "import time; time.sleep(30)"], cwd=tmp_path, timeout=0.5, grace=1)
        assert r.timed_out and r.exit_status < 0
        assert time.monotonic() - t0 < 5

    def test_sigterm_ignored_then_killed(self, tmp_path):
        code = "import signal, time; signal.signal(signal.SIGTERM, signal.SIG_IGN); time.sleep(30)"
        t0 = time.monotonic()
        r = run_process([*PY, "-c", code], cwd=tmp_path, timeout=0.3, grace=0.5)
        assert r.timed_out and r.exit_status == -9
        assert time.monotonic() - t0 < 5

    def test_no_surviving_children(self, tmp_path):
        marker = "forage-test-orphan-marker"
        code = ("import subprocess, sys\n"
                f"subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(60)', {marker!r}])\n")
        run_process([*PY, "-c", code], cwd=tmp_path, timeout=10, grace=0.5)
        time.sleep(0.2)
        assert pids_with(marker) == []


    def test_survivor_check_sees_live_process(self):
        import subprocess
        marker = "forage-test-live-marker"
        child = subprocess.Popen([*PY, "-c", "import time; time.sleep(30)", marker])
        try:
            time.sleep(0.1)
            assert pids_with(marker) == [child.pid]
        finally:
            child.kill()
            child.wait()


class TestAction:
    def test_copy_back(self, layout):
        write_action(layout, "import json\njson.dump([{'product_name': 'a'}], open('dataset.json', 'w'))\n")
        rep = execute_action(layout, PY, 10, round_no=1)
        assert rep.exit_status == 0 and rep.artifacts_written == ["shared/dataset.json"]
        assert json.loads(layout.dataset.read_text()) == [{"product_name": "a"}]
        assert not (layout.root / ".exec" / "r001-action").exists()

    def test_failure_leaves_shared_untouched(self, layout):
        write_action(layout, "open('dataset.json', 'w').write('partial')\nraise SystemExit(1)\n")
        rep = execute_action(layout, PY, 10, round_no=1)
        assert rep.exit_status == 1 and rep.artifacts_written == []
        assert layout.dataset.read_text() == "[]\n"

    def test_timeout_leaves_shared_untouched(self, layout):
        write_action(layout, "open('dataset.json', 'w').write('partial')\nimport time\ntime.sleep(30)\n")
        rep = execute_action(layout, PY, 0.5, round_no=2, grace=0.5)
        assert rep.timed_out and layout.dataset.read_text() == "[]\n"

    def test_only_dataset_is_copied(self, layout):
        write_action(layout, "open('metrics.json', 'w').write('{}x')\nopen('dataset.json', 'w').write('[1]')\n")
        rep = execute_action(layout, PY, 10)
        assert rep.denied_writes == ["shared/metrics.json"]
        assert layout.metrics.read_text() == "{}\n"

    def test_private_read_probe_denied_and_audited(self, layout):
        write_eval(layout, "SECRET = 1\n")
        write_action(layout, (
            "import os, sys\n"
            "try:\n"
            "    open(os.path.join(os.getcwd(), '..', '..', '..', 'eval_ws', 'eval.py')).read()\n"
            "    sys.exit(9)\n"
            "except PermissionError:\n"
            "    pass\n"
            "open('dataset.json', 'w').write('[]')\n"
        ))
        rep = execute_action(layout, PY, 10, round_no=3)
        assert rep.exit_status == 0
        assert rep.denials == ["eval_ws/eval.py"]
        denied = [e for e in load_audit_log(layout.audit_path) if e.verdict == "denied"]
        assert [(e.role, e.requested_path, e.round) for e in denied] == [(Role.EXECUTOR, "eval_ws/eval.py", 3)]

    def test_tails_are_bounded(self, layout):
        write_action(layout, f"print('x' * {TAIL_BYTES * 3})\n")
        rep = execute_action(layout, PY, 10)
        assert len(rep.stdout_tail) == TAIL_BYTES

    def test_archive(self, layout, tmp_path):
        write_action(layout, "print('logged')\n")
        execute_action(layout, PY, 10, archive_dir=tmp_path / "arch")
        assert (tmp_path / "arch" / "action.stdout").read_text() == "logged\n"

    def test_missing_script(self, layout):
        with pytest.raises(NothingToExecute):
            execute_action(layout, PY, 10)


class TestEval:
    def test_metrics(self, layout):
        write_eval(layout, "import json\njson.dump({'numerator': 2, 'denominator': 4, 'coverage': 0.5}, "
                           "open('metrics.json', 'w'))\n")
        m, rep = execute_eval(layout, PY, 10, round_no=1)
        assert (m.numerator, m.denominator) == (2, 4)
        assert json.loads(layout.metrics.read_text())["coverage"] == 0.5
        assert rep.artifacts_written == ["shared/metrics.json"]

    @pytest.mark.parametrize("body", [
        "raise SystemExit(1)\n",
        "pass\n",
        "open('metrics.json', 'w').write('{bad')\n",
        "import json\njson.dump({'numerator': 2, 'denominator': 0, 'coverage': 0}, open('metrics.json', 'w'))\n",
        "import time\ntime.sleep(30)\n",
    ])
    def test_unparseable(self, layout, tmp_path, body):
        write_eval(layout, body)
        with pytest.raises(MetricsUnparseable) as info:
            execute_eval(layout, PY, 1.0, archive_dir=tmp_path / "a", grace=0.3)
        assert info.value.report.phase == "eval"
        assert layout.metrics.read_text() == "{}\n"

    def test_eval_cannot_write_dataset(self, layout):
        write_eval(layout, "import json\nopen('dataset.json', 'w').write('[9]')\n"
                           "json.dump({'numerator': 0, 'denominator': 1, 'coverage': 0}, open('metrics.json', 'w'))\n")
        _, rep = execute_eval(layout, PY, 10)
        assert rep.denied_writes == ["shared/dataset.json"]
        assert layout.dataset.read_text() == "[]\n"
