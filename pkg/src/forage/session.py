"""Persistent per-role agent sessions with turn and wall-clock budgets.

One turn is one backend call (reason, act, observe), counted here rather
than reported by the agent. File actions go through the workspace jail.
"""

from __future__ import annotations

import enum
import itertools
import logging
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from forage.backends import TOOLS, AgentBackend, BackendRequest
from forage.config import Supplies
from forage.errors import BackendDown, IsolationDenied, IsolationLeak, MetricsUnparseable, SessionDead
from forage.leaks import LeakScanner
from forage.protocol import EvaluatorPayload, Metrics, PlannerPayload, validate_lessons
from forage.workspace import Role, WorkspaceLayout, resolve_path

log = logging.getLogger(__name__)

EVAL_SCRIPT = "eval.py"
ACTION_SCRIPT = "action.py"
MAX_READ_BYTES = 4 * 1024 * 1024

_session_ids = itertools.count(1)


class Termination(str, enum.Enum):
    COMPLETED = "completed"
    TURN_EXHAUSTED = "turn_exhausted"
    TIMEOUT = "timeout"
    BACKEND_ERROR = "backend_error"


@dataclass
class Usage:
    tokens_in: int = 0
    tokens_out: int = 0
    cost: float = 0.0

    def add(self, doc: dict[str, Any] | None) -> None:
        if not doc:
            return
        self.tokens_in += int(doc.get("tokens_in", 0) or 0)
        self.tokens_out += int(doc.get("tokens_out", 0) or 0)
        self.cost += float(doc.get("cost", 0.0) or 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {"tokens_in": self.tokens_in, "tokens_out": self.tokens_out, "cost": self.cost}


@dataclass
class AgentTurnOutcome:
    structured_response: dict[str, Any] | None
    turns_used: int
    usage: Usage
    termination: Termination
    error: str = ""
    denials: int = 0

    def __post_init__(self):
        if self.structured_response is None and self.termination is Termination.COMPLETED:
            raise ValueError("a completed turn must carry a structured response")

    def to_dict(self) -> dict[str, Any]:
        return {
            "structured_response": self.structured_response,
            "turns_used": self.turns_used,
            "usage": self.usage.to_dict(),
            "termination": self.termination.value,
            "error": self.error,
            "denials": self.denials,
        }


@dataclass
class SessionHandle:
    role: Role
    backend: AgentBackend
    system_prompt: str
    history: list[dict[str, Any]] = field(default_factory=list)
    alive: bool = True
    session_id: str = ""
    replaces: str | None = None

    def __post_init__(self):
        if not self.session_id:
            self.session_id = f"{self.role.value}-{next(_session_ids)}"


def open_session(role: Role | str, system_prompt: str, backend: AgentBackend) -> SessionHandle:
    role = Role(role)
    if role is Role.EXECUTOR:
        raise ValueError("the executor is not an agent")
    try:
        backend.ping()
    except BackendDown:
        raise
    except Exception as exc:
        raise BackendDown(f"{backend.describe()}: {exc}") from None
    return SessionHandle(role, backend, system_prompt)


def execute_tool(role: Role, action: Any, layout: WorkspaceLayout | None) -> dict[str, Any]:
    """Run one file action inside the jail and describe the result."""
    if not isinstance(action, dict):
        return {"ok": False, "error": "action must be an object"}
    tool, path = action.get("tool"), action.get("path")
    result: dict[str, Any] = {"tool": tool, "path": path}
    if tool not in TOOLS:
        return {**result, "ok": False, "error": f"unknown tool {tool!r}"}
    if layout is None:
        return {**result, "ok": False, "error": "no workspace attached"}
    mode = "w" if tool == "write_file" else "r"
    try:
        real = resolve_path(role, path if isinstance(path, str) else "", layout, mode=mode)
    except IsolationDenied as exc:
        return {**result, "ok": False, "denied": True, "error": str(exc)}
    try:
        if tool == "read_file":
            if not real.is_file():
                return {**result, "ok": False, "error": "not found"}
            data = real.read_bytes()[:MAX_READ_BYTES]
            return {**result, "ok": True, "content": data.decode("utf-8", errors="replace")}
        if tool == "list_dir":
            if not real.is_dir():
                return {**result, "ok": False, "error": "not a directory"}
            names = sorted(p.name + ("/" if p.is_dir() else "") for p in real.iterdir())
            return {**result, "ok": True, "entries": names}
        content = action.get("content")
        if not isinstance(content, str):
            return {**result, "ok": False, "error": "content must be a string"}
        if real.is_dir():
            return {**result, "ok": False, "error": "is a directory"}
        real.parent.mkdir(parents=True, exist_ok=True)
        real.write_text(content, encoding="utf-8")
        return {**result, "ok": True, "bytes": len(content.encode("utf-8"))}
    except OSError as exc:
        return {**result, "ok": False, "error": str(exc)}


class _Deadline(Exception):
    pass


def _call_with_deadline(fn: Callable[[Any], Any], arg: Any, timeout: float) -> Any:
    """Run ``fn(arg)`` on a daemon thread; a hung backend is abandoned, not joined."""
    box: dict[str, Any] = {}

    def target():
        try:
            box["value"] = fn(arg)
        except BaseException as exc:  # surfaced to the caller below
            box["error"] = exc

    worker = threading.Thread(target=target, daemon=True)
    worker.start()
    worker.join(max(timeout, 0.0))
    if worker.is_alive():
        raise _Deadline()
    if "error" in box:
        raise box["error"]
    return box["value"]


def _validator_for(role: Role, phase: str) -> Callable[[Any], Any]:
    if phase == "postmortem":
        return validate_lessons
    return EvaluatorPayload.from_dict if role is Role.EVALUATOR else PlannerPayload.from_dict


def invoke_round(
    session: SessionHandle,
    round_input: str,
    supplies: Supplies,
    *,
    layout: WorkspaceLayout | None = None,
    round_no: int = 0,
    phase: str = "round",
    validator: Callable[[Any], Any] | None = None,
) -> AgentTurnOutcome:
    """Drive the backend for at most ``max_turns`` cycles within ``round_timeout``."""
    if not session.alive:
        raise SessionDead(f"session {session.session_id} is dead")
    validator = validator or _validator_for(session.role, phase)
    deadline = time.monotonic() + supplies.round_timeout
    usage = Usage()
    tool_results: list[dict[str, Any]] = []
    denials = 0
    payload: dict[str, Any] | None = None
    termination = Termination.TURN_EXHAUSTED
    error = ""
    turns = 0

    while turns < supplies.max_turns:
        request = BackendRequest(
            role=session.role.value,
            phase=phase,
            round_no=round_no,
            turn=turns + 1,
            max_turns=supplies.max_turns,
            system_prompt=session.system_prompt,
            history=list(session.history),
            round_input=round_input,
            tool_results=list(tool_results),
        )
        response = None
        for attempt in (1, 2):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                termination = Termination.TIMEOUT
                break
            try:
                response = _call_with_deadline(session.backend.step, request, remaining)
                break
            except _Deadline:
                termination = Termination.TIMEOUT
                break
            except Exception as exc:
                error = f"{type(exc).__name__}: {exc}"
                log.warning("%s backend call failed (attempt %d): %s", session.session_id, attempt, error)
                termination = Termination.BACKEND_ERROR
        if response is None:
            break
        turns += 1
        if not isinstance(response, dict):
            termination, error = Termination.BACKEND_ERROR, "response is not an object"
            break
        usage.add(response.get("usage"))
        if "final" in response:
            try:
                validator(response["final"])
            except Exception as exc:
                termination, error = Termination.BACKEND_ERROR, f"invalid structured payload: {exc}"
                break
            payload = response["final"]
            termination, error = Termination.COMPLETED, ""
            break
        if "action" not in response:
            termination, error = Termination.BACKEND_ERROR, "response has neither action nor final"
            break
        result = execute_tool(session.role, response["action"], layout)
        denials += bool(result.get("denied"))
        tool_results.append(result)
        termination, error = Termination.TURN_EXHAUSTED, ""

    if termination in (Termination.TIMEOUT, Termination.BACKEND_ERROR) and payload is None:
        # A hung call is abandoned on its thread; a repeated transport failure ends the session.
        session.alive = False
    outcome = AgentTurnOutcome(payload, turns, usage, termination, error, denials)
    session.history.append({
        "round": round_no,
        "phase": phase,
        "input": round_input,
        "payload": payload,
        "termination": termination.value,
        "turns_used": turns,
    })
    return outcome


@dataclass
class SalvageResult:
    artifacts: dict[str, Path] = field(default_factory=dict)
    rejected: dict[str, str] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.artifacts)


def _smoke_eval(script: Path, command: tuple[str, ...], timeout: float) -> str | None:
    from forage.executor import run_process

    with tempfile.TemporaryDirectory(prefix="forage-smoke-") as tmp:
        work = Path(tmp)
        (work / "dataset.json").write_text("[]\n", encoding="utf-8")
        staged = work / script.name
        staged.write_bytes(script.read_bytes())
        result = run_process([*command, str(staged)], cwd=work, timeout=timeout, grace=1.0)
        if result.timed_out:
            return "smoke run timed out"
        if result.exit_status != 0:
            return f"smoke run exited {result.exit_status}"
    return None


def _smoke_action(script: Path, command: tuple[str, ...]) -> str | None:
    source = script.read_text(encoding="utf-8", errors="replace")
    if not source.strip():
        return "empty script"
    if Path(command[0]).name.startswith("python"):
        try:
            compile(source, str(script), "exec")
        except SyntaxError as exc:
            return f"does not compile: {exc}"
    return None


def salvage(
    layout: WorkspaceLayout,
    role: Role | str,
    *,
    command: tuple[str, ...] = (sys.executable,),
    smoke_timeout: float = 30.0,
) -> SalvageResult:
    """Collect well-formed work the role left on disk before its turn ended abnormally."""
    role = Role(role)
    result = SalvageResult()
    if role is Role.EVALUATOR:
        script = layout.eval_ws / EVAL_SCRIPT
        if script.is_file():
            problem = _smoke_eval(script, command, smoke_timeout)
            if problem:
                result.rejected["eval_script"] = problem
            else:
                result.artifacts["eval_script"] = script
        if layout.metrics.is_file():
            try:
                Metrics.from_json(layout.metrics.read_bytes())
                result.artifacts["metrics"] = layout.metrics
            except MetricsUnparseable as exc:
                result.rejected["metrics"] = str(exc)
    elif role is Role.PLANNER:
        script = layout.plan_ws / ACTION_SCRIPT
        if script.is_file():
            problem = _smoke_action(script, command)
            if problem:
                result.rejected["action_script"] = problem
            else:
                result.artifacts["action_script"] = script
    for name, why in result.rejected.items():
        log.info("salvage(%s): rejected %s: %s", role.value, name, why)
    return result


def build_trajectory_summary(session: SessionHandle, scanner: LeakScanner | None = None) -> str:
    """Role-scoped recap of a session's own rounds, for a replacement agent."""
    lines = [f"You are replacing a previous {session.role.value} session ({session.session_id})."]
    for exchange in session.history:
        if exchange.get("phase") != "round":
            continue
        payload = exchange.get("payload") or {}
        head = f"Round {exchange['round']}: {exchange['termination']}"
        if session.role is Role.EVALUATOR and payload:
            den = (payload.get("metrics") or {}).get("denominator")
            verdict = (payload.get("stop_decision") or {}).get("verdict", "continue")
            lines.append(f"{head}; denominator estimate {den}; verdict {verdict}")
            if payload.get("discovery_summary"):
                lines.append(f"  discovery: {' '.join(str(payload['discovery_summary']).split())}")
        elif session.role is Role.PLANNER and payload:
            written = "yes" if payload.get("action_script_written") else "no"
            lines.append(f"{head}; strategy {payload.get('strategy_name')}; action script written: {written}")
        else:
            lines.append(f"{head}; no structured response")
    text = "\n".join(lines) + "\n"
    if scanner is not None:
        scanner.check(text, f"{session.role.value} replacement summary")
    return text


def replace_session(
    role: Role | str,
    trajectory_summary: str,
    backend: AgentBackend,
    *,
    base_prompt: str,
    scanner: LeakScanner | None = None,
    replaces: SessionHandle | None = None,
) -> SessionHandle:
    """Open a fresh session primed with ``trajectory_summary``.

    ``scanner`` holds the opposing role's private markers; any hit raises
    :class:`IsolationLeak` before the new session is created.
    """
    role = Role(role)
    if replaces is not None and replaces.alive:
        raise ValueError("only a dead session can be replaced")
    if scanner is not None:
        if scanner.owner is role:
            raise ValueError("the scanner must carry the opposing role's markers")
        scanner.check(trajectory_summary, f"{role.value} replacement summary")
    prompt = f"{base_prompt}\n\n## Your trajectory so far\n{trajectory_summary}"
    session = open_session(role, prompt, backend)
    session.replaces = replaces.session_id if replaces is not None else None
    return session


__all__ = [
    "ACTION_SCRIPT",
    "EVAL_SCRIPT",
    "AgentTurnOutcome",
    "IsolationLeak",
    "SalvageResult",
    "SessionHandle",
    "Termination",
    "Usage",
    "build_trajectory_summary",
    "execute_tool",
    "invoke_round",
    "open_session",
    "replace_session",
    "salvage",
]
