"""Task specifications and supply parameters that provision a run."""

from __future__ import annotations

import dataclasses
import enum
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from forage.errors import IncompleteTask, InvalidSupplies, MalformedTask


class TaskKind(str, enum.Enum):
    STRUCTURED_EXPLORATION = "structured_exploration"
    REASONING = "reasoning"


class Effort(str, enum.Enum):
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    prompt: str
    task_kind: TaskKind
    preferred_sources: tuple[str, ...] = ()
    required_fields: tuple[str, ...] = ()
    soft_coverage_target: float = 0.9
    # Optional per-task knobs carried alongside the canonical keys.
    supply_overrides: Mapping[str, Any] = field(default_factory=dict)
    interpreter: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.prompt, str) or not self.prompt.strip():
            raise IncompleteTask("prompt must be non-empty")
        target = self.soft_coverage_target
        if isinstance(target, bool) or not isinstance(target, (int, float)) or math.isnan(target):
            raise IncompleteTask(f"soft_coverage_target must be a number, got {target!r}")
        if not 0.0 < target <= 1.0:
            raise IncompleteTask(f"soft_coverage_target must lie in (0, 1], got {target}")
        if self.task_kind is TaskKind.STRUCTURED_EXPLORATION and not self.required_fields:
            raise IncompleteTask("structured_exploration tasks need at least one required field")

    def executor_command(self) -> tuple[str, ...]:
        return self.interpreter or (sys.executable,)


@dataclass(frozen=True)
class Supplies:
    """Per-run budgets. ``effort`` is passed to backends opaquely."""

    max_turns: int
    round_timeout: float
    max_rounds: int
    effort: Effort
    eval_timeout: float

    def __post_init__(self):
        for name in ("max_turns", "max_rounds"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise InvalidSupplies(f"{name} must be a positive integer, got {value!r}")
        for name in ("round_timeout", "eval_timeout"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise InvalidSupplies(f"{name} must be positive seconds, got {value!r}")
        if not isinstance(self.effort, Effort):
            raise InvalidSupplies(f"effort must be an Effort, got {self.effort!r}")

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["effort"] = self.effort.value
        return data


# eval_timeout=None means "same as round_timeout".
DEFAULT_SUPPLIES: dict[TaskKind, dict[str, Any]] = {
    TaskKind.STRUCTURED_EXPLORATION: {
        "max_turns": 15,
        "round_timeout": 1200.0,
        "max_rounds": 8,
        "effort": Effort.MEDIUM,
        "eval_timeout": None,
    },
    TaskKind.REASONING: {
        "max_turns": 50,
        "round_timeout": 1200.0,
        "max_rounds": 8,
        "effort": Effort.HIGH,
        "eval_timeout": 600.0,
    },
}

_SUPPLY_KEYS = {f.name for f in dataclasses.fields(Supplies)}


def resolve_supplies(task_kind: TaskKind | str, overrides: Mapping[str, Any] | None = None) -> Supplies:
    """Merge per-kind defaults with ``overrides`` (overrides win)."""
    kind = TaskKind(task_kind)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(overrides) - _SUPPLY_KEYS
    if unknown:
        raise InvalidSupplies(f"unknown supply keys: {sorted(unknown)}")
    merged = dict(DEFAULT_SUPPLIES[kind])
    merged.update(overrides)
    if merged["eval_timeout"] is None:
        merged["eval_timeout"] = merged["round_timeout"]
    try:
        merged["effort"] = Effort(merged["effort"])
    except ValueError as exc:
        raise InvalidSupplies(str(exc)) from None
    for key in ("round_timeout", "eval_timeout"):
        if isinstance(merged[key], int) and not isinstance(merged[key], bool):
            merged[key] = float(merged[key])
    return Supplies(**merged)


_REQUIRED_KEYS = ("task_id", "prompt", "task_kind", "soft_coverage_target")


def parse_task_spec(text: str, source: str = "<task>") -> TaskSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedTask(f"{source}: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedTask(f"{source}: expected a key-value document")
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise IncompleteTask(f"{source}: missing keys {missing}")
    try:
        kind = TaskKind(doc["task_kind"])
    except ValueError:
        raise MalformedTask(f"{source}: unknown task_kind {doc['task_kind']!r}") from None

    def str_list(key: str) -> tuple[str, ...]:
        value = doc.get(key) or []
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise MalformedTask(f"{source}: {key} must be a list of strings")
        return tuple(value)

    if kind is TaskKind.STRUCTURED_EXPLORATION and "required_fields" not in doc:
        raise IncompleteTask(f"{source}: missing keys ['required_fields']")
    supplies = doc.get("supplies") or {}
    if not isinstance(supplies, dict):
        raise MalformedTask(f"{source}: supplies must be a mapping")
    interpreter = doc.get("interpreter") or []
    if isinstance(interpreter, str):
        interpreter = interpreter.split()
    return TaskSpec(
        task_id=str(doc["task_id"]),
        prompt=doc["prompt"] if isinstance(doc["prompt"], str) else "",
        task_kind=kind,
        preferred_sources=str_list("preferred_sources"),
        required_fields=str_list("required_fields"),
        soft_coverage_target=doc["soft_coverage_target"],
        supply_overrides=dict(supplies),
        interpreter=tuple(str(part) for part in interpreter),
    )


def load_task_spec(path: str | Path) -> TaskSpec:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise MalformedTask(f"{path}: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedTask(f"{path}: not UTF-8 ({exc})") from None
    return parse_task_spec(text, str(path))


def dump_task_spec(task: TaskSpec) -> str:
    doc: dict[str, Any] = {
        "task_id": task.task_id,
        "prompt": task.prompt,
        "task_kind": task.task_kind.value,
        "preferred_sources": list(task.preferred_sources),
        "required_fields": list(task.required_fields),
        "soft_coverage_target": task.soft_coverage_target,
    }
    if task.supply_overrides:
        doc["supplies"] = dict(task.supply_overrides)
    if task.interpreter:
        doc["interpreter"] = list(task.interpreter)
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)
