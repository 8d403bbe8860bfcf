from __future__ import annotations

import json
import subprocess
import sys

import pytest

from forage.cli import EXIT_ABORTED, EXIT_CONFIG, EXIT_GUARD, EXIT_NODATA, EXIT_OK, main
from forage.workspace import AccessAuditEntry, Role
from conftest import APPENDIX_KB


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cold_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run_cli("run", "--fixture", "u60-seed7-cold", "--out", out) == EXIT_OK
    return out, out / "u60-seed7-cold"


class TestRun:
    def test_output(self, tmp_path, capsys):
        assert run_cli("run", "--task", "nvidia", "--rounds", "2", "--out", tmp_path, "--run-id", "x") == EXIT_OK
        out = capsys.readouterr().out
        assert "rounds:       2 (budget)" in out
        assert "knowledge:    0→" in out
        assert (tmp_path / "x" / "summary.json").is_file()

    def test_fixture_label(self, cold_run):
        _, root = cold_run
        assert json.loads((root / "run.json").read_text())["label"] == "cold"

    def test_seeded_fixture_needs_seed(self, tmp_path):
        assert run_cli("run", "--fixture", "seed7-seeded", "--out", tmp_path) == EXIT_CONFIG

    def test_seeded_with_knowledge(self, tmp_path, capsys):
        rc = run_cli("run", "--fixture", "u60-seed7-seeded", "--seed-knowledge", APPENDIX_KB, "--out", tmp_path)
        assert rc == EXIT_OK
        assert "knowledge:    6→" in capsys.readouterr().out

    @pytest.mark.parametrize("argv", [
        ["--rounds", "0"],
        ["--task", "no_such_task"],
        ["--fixture", "seed99-cold"],
        ["--backend", "llm"],
        ["--seed-knowledge", "/nonexistent/kb"],
    ])
    def test_config_errors(self, tmp_path, argv):
        assert run_cli("run", "--out", tmp_path, *argv) == EXIT_CONFIG

    def test_duplicate_run_id(self, cold_run):
        out, _ = cold_run
        assert run_cli("run", "--fixture", "u60-seed7-cold", "--out", out) == EXIT_CONFIG

    def test_task_file(self, tmp_path, nvidia_task):
        from forage.config import dump_task_spec
        path = tmp_path / "task.yaml"
        path.write_text(dump_task_spec(nvidia_task))
        assert run_cli("run", "--task", path, "--rounds", "1", "--out", tmp_path / "o") == EXIT_OK


class TestOtherCommands:
    def test_seed(self, tmp_path, capsys):
        assert run_cli("seed", APPENDIX_KB, tmp_path / "kb") == EXIT_OK
        assert "copied 6 entries" in capsys.readouterr().out
        assert run_cli("seed", tmp_path / "missing", tmp_path / "kb2") == EXIT_CONFIG

    def test_postmortem(self, cold_run, tmp_path, capsys):
        _, root = cold_run
        assert run_cli("postmortem", root, "--out", tmp_path / "kb", "--fixture", "u60-seed7-cold") == EXIT_OK
        assert "stored" in capsys.readouterr().out
        assert run_cli("postmortem", tmp_path, "--out", tmp_path / "kb") == EXIT_NODATA

    def test_report(self, cold_run, capsys):
        out, _ = cold_run
        assert run_cli("report", out) == EXIT_OK
        text = capsys.readouterr().out
        assert "cold" in text and "Condition" in text
        doc = json.loads((out / "report.json").read_text())
        assert doc["conditions"][0]["condition"] == "cold"

    def test_report_condition_glob(self, cold_run, tmp_path):
        out, _ = cold_run
        target = tmp_path / "r.json"
        assert run_cli("report", out, "--condition", "u60=u60-*", "--json", target) == EXIT_OK
        assert [c["condition"] for c in json.loads(target.read_text())["conditions"]] == ["u60"]
        assert run_cli("report", out, "--condition", "none=zzz*") == EXIT_NODATA

    def test_report_empty(self, tmp_path):
        assert run_cli("report", tmp_path) == EXIT_NODATA

    def test_audit(self, cold_run, capsys):
        _, root = cold_run
        assert run_cli("audit", root) == EXIT_OK
        assert capsys.readouterr().out.strip().endswith("clean")

    def test_audit_guard_violation(self, tmp_path):
        (tmp_path / "audit.log").write_text(
            AccessAuditEntry(Role.PLANNER, "eval_ws/eval.py", "allowed", 1, "t").to_line() + "\n")
        assert run_cli("audit", tmp_path) == EXIT_GUARD

    def test_audit_missing(self, tmp_path):
        assert run_cli("audit", tmp_path) == EXIT_NODATA

    def test_aborted_exit_code(self, tmp_path, monkeypatch):
        from forage.errors import RunAborted
        import forage.engine

        def boom(self):
            raise RunAborted("injected")
        monkeypatch.setattr(forage.engine.RoundEngine, "execute", boom)
        assert run_cli("run", "--out", tmp_path) == EXIT_ABORTED

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "forage.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "report" in proc.stdout
