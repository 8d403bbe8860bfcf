"""Deterministic execution of the Planner's action script and the Evaluator's eval script.

The executor is not an agent: it copies the shared area into a staging
directory, runs the script there under a hard timeout, and copies back
only the file the phase is allowed to produce (``dataset.json`` for the
action phase, ``metrics.json`` for the eval phase). Neither private
workspace exists inside the staging tree. For Python interpreters an
audit hook additionally refuses, and logs, any open that escapes the
stage into the run root.
"""

from __future__ import annotations

import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from forage.errors import MetricsUnparseable, NothingToExecute
from forage.protocol import Metrics
from forage.session import ACTION_SCRIPT, EVAL_SCRIPT
from forage.workspace import AccessAuditEntry, Role, WorkspaceLayout, _now, resolve_path

TAIL_BYTES = 16 * 1024
GRACE_SECONDS = 5.0

PHASE_OUTPUTS = {"action": ("dataset.json",), "eval": ("metrics.json",)}

_JAIL_HOOK = '''\
import os
import sys


def _forage_jail():
    allow = os.environ.get("FORAGE_JAIL_ALLOW")
    deny = os.environ.get("FORAGE_JAIL_DENY")
    log_path = os.environ.get("FORAGE_JAIL_LOG")
    if not allow or not deny:
        return
    realpath = os.path.realpath
    allow_root = realpath(allow)
    deny_root = realpath(deny)
    busy = [False]

    def inside(path, base):
        return path == base or path.startswith(base + os.sep)

    def check(path):
        if path is None or isinstance(path, int):
            return
        try:
            name = os.fsdecode(path)
        except Exception:
            return
        full = realpath(name)
        if inside(full, deny_root) and not inside(full, allow_root):
            if not busy[0] and log_path:
                busy[0] = True
                try:
                    with open(log_path, "a", encoding="utf-8") as fh:
                        fh.write(full + "\\n")
                finally:
                    busy[0] = False
            raise PermissionError(13, "access denied by workspace jail", name)

    watched = {"open", "os.listdir", "os.scandir", "os.remove", "os.rename", "os.mkdir",
               "os.chdir", "os.rmdir", "os.truncate", "os.symlink", "os.link"}

    def hook(event, args):
        if event in watched and args:
            check(args[0])
            if event in ("os.rename", "os.symlink", "os.link") and len(args) > 1:
                check(args[1])

    sys.addaudithook(hook)


_forage_jail()
'''


@dataclass
class ProcessResult:
    exit_status: int
    duration: float
    timed_out: bool
    stdout: bytes = b""
    stderr: bytes = b""


def _killpg(pgid: int, sig: int) -> None:
    try:
        os.killpg(pgid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def run_process(
    argv: Sequence[str],
    *,
    cwd: str | Path,
    timeout: float,
    grace: float = GRACE_SECONDS,
    env: dict[str, str] | None = None,
    stdout_path: Path | None = None,
    stderr_path: Path | None = None,
) -> ProcessResult:
    """Run ``argv`` in its own process group; SIGTERM at ``timeout``, SIGKILL after ``grace``.

    The whole group is killed once the leader exits, so no child outlives the call.
    """
    with tempfile.TemporaryDirectory(prefix="forage-proc-") as tmp:
        out_path = stdout_path or Path(tmp) / "stdout"
        err_path = stderr_path or Path(tmp) / "stderr"
        with open(out_path, "wb") as out, open(err_path, "wb") as err:
            start = time.monotonic()
            proc = subprocess.Popen(
                list(argv), cwd=cwd, env=env, stdin=subprocess.DEVNULL,
                stdout=out, stderr=err, start_new_session=True,
            )
            pgid = proc.pid
            timed_out = False
            try:
                proc.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                timed_out = True
                _killpg(pgid, signal.SIGTERM)
                try:
                    proc.wait(timeout=grace)
                except subprocess.TimeoutExpired:
                    _killpg(pgid, signal.SIGKILL)
                    proc.wait()
            _killpg(pgid, signal.SIGKILL)
            duration = time.monotonic() - start
        return ProcessResult(proc.returncode, duration, timed_out, out_path.read_bytes(), err_path.read_bytes())


def _tail(data: bytes) -> str:
    return data[-TAIL_BYTES:].decode("utf-8", errors="replace")


@dataclass
class ExecutionReport:
    phase: str
    exit_status: int
    duration: float
    stdout_tail: str
    stderr_tail: str
    timed_out: bool
    artifacts_written: list[str] = field(default_factory=list)
    denials: list[str] = field(default_factory=list)
    denied_writes: list[str] = field(default_factory=list)
    skipped: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _snapshot(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in root.rglob("*") if p.is_file()}


def _run_phase(
    phase: str,
    script: Path,
    layout: WorkspaceLayout,
    command: Sequence[str],
    timeout: float,
    *,
    round_no: int,
    archive_dir: Path | None,
    grace: float,
) -> tuple[ExecutionReport, Path]:
    stage = layout.root / ".exec" / f"r{round_no:03d}-{phase}"
    if stage.exists():
        shutil.rmtree(stage)
    work = stage / "shared"
    bindir = stage / "bin"
    jaildir = stage / ".jail"
    shutil.copytree(layout.shared, work)
    bindir.mkdir()
    jaildir.mkdir()
    staged_script = bindir / script.name
    shutil.copyfile(script, staged_script)
    (jaildir / "sitecustomize.py").write_text(_JAIL_HOOK, encoding="utf-8")
    deny_log = jaildir / "denied.log"
    before = _snapshot(work)

    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(p for p in (str(jaildir), env.get("PYTHONPATH", "")) if p)
    env["FORAGE_JAIL_ALLOW"] = str(stage)
    env["FORAGE_JAIL_DENY"] = str(layout.root)
    env["FORAGE_JAIL_LOG"] = str(deny_log)
    env["PYTHONDONTWRITEBYTECODE"] = "1"

    out_path = err_path = None
    if archive_dir is not None:
        archive_dir.mkdir(parents=True, exist_ok=True)
        out_path, err_path = archive_dir / f"{phase}.stdout", archive_dir / f"{phase}.stderr"
    result = run_process([*command, str(staged_script)], cwd=work, timeout=timeout, grace=grace,
                         env=env, stdout_path=out_path, stderr_path=err_path)

    denials = []
    if deny_log.exists():
        denials = sorted(set(deny_log.read_text(encoding="utf-8").split()))
    for path in denials:
        shown = os.path.relpath(path, layout.root).replace(os.sep, "/")
        layout.audit.append(AccessAuditEntry(Role.EXECUTOR, shown, "denied", round_no, _now(), "r"))

    after = _snapshot(work)
    allowed = PHASE_OUTPUTS[phase]
    changed = sorted(k for k, v in after.items() if before.get(k) != v)
    report = ExecutionReport(
        phase=phase,
        exit_status=result.exit_status,
        duration=result.duration,
        stdout_tail=_tail(result.stdout),
        stderr_tail=_tail(result.stderr),
        timed_out=result.timed_out,
        denials=[os.path.relpath(p, layout.root).replace(os.sep, "/") for p in denials],
        denied_writes=[f"shared/{k}" for k in changed if k not in allowed],
    )
    return report, stage


def _copy_back(layout: WorkspaceLayout, stage: Path, name: str, round_no: int) -> bool:
    src = stage / "shared" / name
    target = resolve_path(Role.EXECUTOR, f"shared/{name}", layout, mode="w", round_no=round_no)
    if not src.is_file():
        return False
    data = src.read_bytes()
    if target.exists() and target.read_bytes() == data:
        return False
    tmp = target.with_name(f".{name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, target)
    return True


def execute_action(
    layout: WorkspaceLayout,
    command: Sequence[str],
    timeout: float,
    *,
    round_no: int = 0,
    archive_dir: Path | None = None,
    grace: float = GRACE_SECONDS,
) -> ExecutionReport:
    script = resolve_path(Role.EXECUTOR, f"plan_ws/{ACTION_SCRIPT}", layout, round_no=round_no)
    if not script.is_file():
        raise NothingToExecute("no action script in plan_ws")
    report, stage = _run_phase("action", script, layout, command, timeout,
                               round_no=round_no, archive_dir=archive_dir, grace=grace)
    try:
        if report.exit_status == 0 and not report.timed_out:
            if _copy_back(layout, stage, "dataset.json", round_no):
                report.artifacts_written.append("shared/dataset.json")
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return report


def execute_eval(
    layout: WorkspaceLayout,
    command: Sequence[str],
    eval_timeout: float,
    *,
    round_no: int = 0,
    archive_dir: Path | None = None,
    grace: float = GRACE_SECONDS,
) -> tuple[Metrics, ExecutionReport]:
    """Run the eval script; raises :class:`MetricsUnparseable` (with ``.report``) on failure."""
    script = resolve_path(Role.EXECUTOR, f"eval_ws/{EVAL_SCRIPT}", layout, round_no=round_no)
    if not script.is_file():
        raise NothingToExecute("no eval script in eval_ws")
    report, stage = _run_phase("eval", script, layout, command, eval_timeout,
                               round_no=round_no, archive_dir=archive_dir, grace=grace)
    try:
        staged = stage / "shared" / "metrics.json"
        if report.timed_out:
            problem = f"eval script timed out after {eval_timeout}s"
        elif report.exit_status != 0:
            problem = f"eval script exited {report.exit_status}"
        elif not staged.is_file():
            problem = "eval script wrote no metrics.json"
        else:
            problem = None
        if problem is None:
            try:
                metrics = Metrics.from_json(staged.read_bytes())
            except MetricsUnparseable as exc:
                problem = str(exc)
                if archive_dir is not None:
                    shutil.copyfile(staged, archive_dir / "metrics.rejected.json")
        if problem is not None:
            exc = MetricsUnparseable(problem)
            exc.report = report  # type: ignore[attr-defined]
            raise exc
        if _copy_back(layout, stage, "metrics.json", round_no):
            report.artifacts_written.append("shared/metrics.json")
        return metrics, report
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def default_command() -> tuple[str, ...]:
    return (sys.executable,)


def dump_report(report: ExecutionReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True)
