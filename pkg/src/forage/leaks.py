"""Sentinel scanning for text that crosses from one role to the other."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from forage.errors import IsolationLeak
from forage.workspace import PRIVATE_DIR, Role, WorkspaceLayout

MIN_FINGERPRINT = 24
SCRIPT_NAMES = {Role.EVALUATOR: "eval.py", Role.PLANNER: "action.py"}


def _text_files(root: Path) -> Iterable[Path]:
    if not root.is_dir():
        return []
    return sorted(p for p in root.rglob("*") if p.is_file())


def _lines(path: Path) -> set[str]:
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError:
        return set()
    return {line.strip() for line in text.splitlines()}


@dataclass
class LeakScanner:
    """Flags text containing any marker private to ``owner``."""

    owner: Role
    markers: set[str] = field(default_factory=set)

    @classmethod
    def for_private_tree(cls, layout: WorkspaceLayout, owner: Role, extra: Iterable[str] = ()) -> "LeakScanner":
        """Markers: the private dir name, its file paths, and long lines not also present in shared files."""
        private = layout.private_dir(owner)
        shared_lines: set[str] = set()
        for path in _text_files(layout.shared):
            shared_lines |= _lines(path)
        markers = {f"{PRIVATE_DIR[owner]}/", SCRIPT_NAMES[owner]}
        for path in _text_files(private):
            markers.add(f"{PRIVATE_DIR[owner]}/{path.relative_to(private).as_posix()}")
            for line in _lines(path):
                if len(line) >= MIN_FINGERPRINT and line not in shared_lines:
                    markers.add(line)
        markers.update(m for m in extra if m)
        return cls(owner, markers)

    def hits(self, text: str) -> list[str]:
        return sorted(m for m in self.markers if m in text)

    def check(self, text: str, where: str) -> None:
        found = self.hits(text)
        if found:
            preview = ", ".join(repr(m[:40]) for m in found[:3])
            raise IsolationLeak(f"{where} contains {self.owner.value}-private content: {preview}")
