"""Run workspace provisioning and the path jail that keeps the two agents apart.

Layout under a run root::

    eval_ws/                 Evaluator only
    plan_ws/                 Planner only
    shared/dataset.json
    shared/metrics.json
    shared/eval_contract.md
    shared/knowledge/*.md, shared/knowledge/INDEX.md
    audit.log

Agents never get host paths. Every file request goes through
:func:`resolve_path`, which canonicalizes (symlinks and dot segments
included) before testing subtree membership, and records the verdict.
"""

from __future__ import annotations

import enum
import os
import shutil
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from forage.errors import DuplicateRun, GuardViolation, IsolationDenied, SeedUnavailable

SEP = "\x1f"


class Role(str, enum.Enum):
    EVALUATOR = "evaluator"
    PLANNER = "planner"
    EXECUTOR = "executor"

    @property
    def opponent(self) -> "Role":
        if self is Role.EVALUATOR:
            return Role.PLANNER
        if self is Role.PLANNER:
            return Role.EVALUATOR
        raise ValueError("the executor has no opposing role")


PRIVATE_DIR = {Role.EVALUATOR: "eval_ws", Role.PLANNER: "plan_ws"}


@dataclass(frozen=True)
class AccessAuditEntry:
    role: Role
    requested_path: str
    verdict: str  # "allowed" | "denied"
    round: int
    timestamp: str
    mode: str = "r"

    def to_line(self) -> str:
        path = self.requested_path.replace(SEP, "?").replace("\n", "?").replace("\r", "?")
        return SEP.join([self.timestamp, self.role.value, self.verdict, path, str(self.round), self.mode])

    @classmethod
    def from_line(cls, line: str) -> "AccessAuditEntry":
        parts = line.rstrip("\n").split(SEP)
        if len(parts) < 4:
            raise ValueError(f"bad audit line: {line!r}")
        round_no = int(parts[4]) if len(parts) > 4 and parts[4] else 0
        mode = parts[5] if len(parts) > 5 else "r"
        return cls(Role(parts[1]), parts[3], parts[2], round_no, parts[0], mode)


class AuditLog:
    """Append-only access log; appends are serialized through one lock."""

    def __init__(self, path: Path | None):
        self.path = path
        self.entries: list[AccessAuditEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: AccessAuditEntry) -> None:
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_line() + "\n")

    def __len__(self) -> int:
        return len(self.entries)


def load_audit_log(path: str | Path) -> list[AccessAuditEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(AccessAuditEntry.from_line(line))
    return entries


@dataclass
class WorkspaceLayout:
    root: Path
    eval_ws: Path
    plan_ws: Path
    shared: Path
    audit: AuditLog = field(repr=False, compare=False, default=None)  # type: ignore[assignment]
    current_round: int = field(default=0, compare=False)

    @classmethod
    def at(cls, root: str | Path) -> "WorkspaceLayout":
        root = Path(root).resolve()
        return cls(root, root / "eval_ws", root / "plan_ws", root / "shared", AuditLog(root / "audit.log"))

    @property
    def dataset(self) -> Path:
        return self.shared / "dataset.json"

    @property
    def metrics(self) -> Path:
        return self.shared / "metrics.json"

    @property
    def contract(self) -> Path:
        return self.shared / "eval_contract.md"

    @property
    def knowledge(self) -> Path:
        return self.shared / "knowledge"

    @property
    def audit_path(self) -> Path:
        return self.root / "audit.log"

    def private_dir(self, role: Role) -> Path:
        return self.eval_ws if role is Role.EVALUATOR else self.plan_ws

    def subtrees(self, role: Role, mode: str = "r") -> tuple[Path, ...]:
        role = Role(role)
        if role is Role.EXECUTOR:
            if mode == "r":
                return (self.shared, self.eval_ws, self.plan_ws)
            return (self.shared,)
        return (self.private_dir(role), self.shared)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def provision_run(
    run_id: str,
    seed_knowledge: str | Path | None = None,
    *,
    experiment_root: str | Path,
) -> WorkspaceLayout:
    """Create an isolated run workspace, optionally staging seed knowledge."""
    from forage.knowledge import KnowledgeStore, seed_from

    if not run_id or "/" in run_id or run_id in (".", ".."):
        raise ValueError(f"invalid run id {run_id!r}")
    experiment_root = Path(experiment_root)
    experiment_root.mkdir(parents=True, exist_ok=True)
    root = experiment_root / run_id
    try:
        root.mkdir()
    except FileExistsError:
        raise DuplicateRun(f"run {run_id!r} already exists under {experiment_root}") from None
    layout = WorkspaceLayout.at(root)
    try:
        for d in (layout.eval_ws, layout.plan_ws, layout.shared, layout.knowledge):
            d.mkdir(parents=True)
        layout.dataset.write_text("[]\n", encoding="utf-8")
        layout.metrics.write_text("{}\n", encoding="utf-8")
        layout.audit_path.touch()
        store = KnowledgeStore(layout.knowledge)
        if seed_knowledge is not None:
            seed_from(seed_knowledge, store)
        else:
            store.write_index()
    except BaseException:
        shutil.rmtree(root, ignore_errors=True)
        raise
    return layout


def _display(real: str, root: str) -> str:
    try:
        rel = os.path.relpath(real, root)
    except ValueError:
        return real
    if rel == "." or rel.startswith(".." + os.sep) or rel == "..":
        return real if rel != "." else "."
    return rel.replace(os.sep, "/")


def _inside(path: str, base: str) -> bool:
    return path == base or path.startswith(base.rstrip(os.sep) + os.sep)


def resolve_path(
    role: Role | str,
    requested: str,
    layout: WorkspaceLayout,
    *,
    mode: str = "r",
    round_no: int | None = None,
) -> Path:
    """Canonicalize ``requested`` for ``role`` or raise :class:`IsolationDenied`.

    ``requested`` is interpreted relative to the run root. Every call is
    appended to the layout's audit log, allowed or not.
    """
    role = Role(role)
    if mode not in ("r", "w"):
        raise ValueError(f"mode must be 'r' or 'w', got {mode!r}")
    round_no = layout.current_round if round_no is None else round_no
    root = os.path.realpath(layout.root)
    verdict = "denied"
    shown = str(requested)
    try:
        if not isinstance(requested, str) or "\x00" in requested or requested == "":
            raise IsolationDenied(role.value, str(requested), "malformed path")
        candidate = requested if os.path.isabs(requested) else os.path.join(root, requested)
        real = os.path.realpath(candidate)
        shown = _display(real, root)
        allowed = [os.path.realpath(p) for p in layout.subtrees(role, mode)]
        if not any(_inside(real, base) for base in allowed):
            raise IsolationDenied(role.value, requested)
        verdict = "allowed"
        return Path(real)
    finally:
        if layout.audit is not None:
            layout.audit.append(AccessAuditEntry(role, shown, verdict, round_no, _now(), mode))


@dataclass
class BreachReport:
    contaminated: bool
    denials: int
    by_role_round: dict[tuple[str, int], list[str]]
    total_entries: int

    def render(self) -> str:
        lines = [f"{self.denials} denials in {self.total_entries} audited accesses"]
        if self.by_role_round:
            lines.append(f"{'role':<10} {'round':>5}  denied paths")
            for (role, rnd), paths in sorted(self.by_role_round.items()):
                lines.append(f"{role:<10} {rnd:>5}  {len(paths)}: {', '.join(paths[:5])}"
                             + (" ..." if len(paths) > 5 else ""))
        lines.append("contaminated" if self.contaminated else "clean")
        return "\n".join(lines)


def _cross_private(entry: AccessAuditEntry) -> bool:
    path = entry.requested_path
    top = path.split("/", 1)[0]
    if entry.role is Role.EXECUTOR:
        return entry.mode == "w" and top in PRIVATE_DIR.values()
    if entry.role in PRIVATE_DIR:
        if top == PRIVATE_DIR[entry.role.opponent]:
            return True
        # anything outside the run root or at its top level is not grantable either
        return os.path.isabs(path) or top not in ("shared", PRIVATE_DIR[entry.role])
    return False


def detect_breach(audit_log: Iterable[AccessAuditEntry]) -> BreachReport:
    """Group denials by role and round. An allowed cross-private access is a guard bug."""
    entries: Sequence[AccessAuditEntry] = list(audit_log)
    grouped: dict[tuple[str, int], list[str]] = defaultdict(list)
    for entry in entries:
        if entry.verdict == "allowed":
            if _cross_private(entry):
                raise GuardViolation(
                    f"{entry.role.value} was allowed {entry.mode!r} access to {entry.requested_path!r} "
                    f"in round {entry.round}"
                )
        else:
            grouped[(entry.role.value, entry.round)].append(entry.requested_path)
    denials = sum(len(v) for v in grouped.values())
    return BreachReport(False, denials, dict(grouped), len(entries))
