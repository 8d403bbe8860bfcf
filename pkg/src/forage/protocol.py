"""Wire types exchanged between the engine, the agents and the executor.

Structured payloads are JSON documents. Unknown keys are preserved so
newer agents can add fields without breaking older harnesses.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from forage.errors import MetricsUnparseable

PAYLOAD_SCHEMA_VERSION = 1

METRICS_KEYS = ("numerator", "denominator", "coverage", "per_field_quality", "notes")


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


@dataclass(frozen=True)
class Metrics:
    numerator: int
    denominator: int
    coverage: float
    per_field_quality: dict[str, float] = field(default_factory=dict)
    notes: str = ""
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def needs_denominator_review(self) -> bool:
        # Collected beyond the estimate is a signal to fix the denominator, never capped.
        return self.coverage > 1.0

    @classmethod
    def from_document(cls, doc: Any) -> "Metrics":
        if not isinstance(doc, dict):
            raise MetricsUnparseable("metrics document must be a JSON object")
        num, den, cov = doc.get("numerator"), doc.get("denominator"), doc.get("coverage")
        if not _is_int(num) or num < 0:
            raise MetricsUnparseable(f"numerator must be a non-negative integer, got {num!r}")
        if not _is_int(den):
            raise MetricsUnparseable(f"denominator must be an integer, got {den!r}")
        if den <= 0:
            raise MetricsUnparseable(f"denominator must be positive, got {den}; coverage is undefined")
        if not _is_number(cov) or cov < 0:
            raise MetricsUnparseable(f"coverage must be a non-negative number, got {cov!r}")
        quality = doc.get("per_field_quality", {}) or {}
        if not isinstance(quality, dict) or not all(_is_number(v) for v in quality.values()):
            raise MetricsUnparseable("per_field_quality must map field names to numbers")
        notes = doc.get("notes", "")
        if notes is None:
            notes = ""
        if not isinstance(notes, str):
            notes = json.dumps(notes, sort_keys=True)
        extra = {k: v for k, v in doc.items() if k not in METRICS_KEYS}
        return cls(num, den, float(cov), {str(k): float(v) for k, v in quality.items()}, notes, extra)

    @classmethod
    def from_json(cls, text: str | bytes) -> "Metrics":
        try:
            doc = json.loads(text)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MetricsUnparseable(f"metrics is not valid JSON: {exc}") from None
        return cls.from_document(doc)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "numerator": self.numerator,
            "denominator": self.denominator,
            "coverage": self.coverage,
            "per_field_quality": dict(self.per_field_quality),
            "notes": self.notes,
        }
        doc.update(self.extra)
        return doc


class Verdict(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class StopDecision:
    verdict: Verdict
    rationale: str = ""
    denominator_stable: bool = False
    remaining_gaps: tuple[str, ...] = ()

    def __post_init__(self):
        if self.verdict is Verdict.STOP and not self.rationale.strip():
            raise ValueError("a stop verdict needs a rationale")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StopDecision":
        return cls(
            Verdict(data.get("verdict", "continue")),
            str(data.get("rationale", "") or ""),
            bool(data.get("denominator_stable", False)),
            tuple(str(g) for g in data.get("remaining_gaps", []) or []),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "rationale": self.rationale,
            "denominator_stable": self.denominator_stable,
            "remaining_gaps": list(self.remaining_gaps),
        }


@dataclass(frozen=True)
class Gap:
    description: str
    severity: str = "medium"


@dataclass(frozen=True)
class GapReport:
    gaps: tuple[Gap, ...] = ()
    suspected_overcounts: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "GapReport":
        data = data or {}
        gaps = []
        for g in data.get("gaps", []) or []:
            if isinstance(g, str):
                gaps.append(Gap(g))
            else:
                gaps.append(Gap(str(g["description"]), str(g.get("severity", "medium"))))
        return cls(tuple(gaps), tuple(str(s) for s in data.get("suspected_overcounts", []) or []))

    def to_dict(self) -> dict[str, Any]:
        return {
            "gaps": [{"description": g.description, "severity": g.severity} for g in self.gaps],
            "suspected_overcounts": list(self.suspected_overcounts),
        }


@dataclass(frozen=True)
class EvalContract:
    """The Evaluator-authored public terms of engagement."""

    version: int
    markdown: str
    format_spec: dict[str, str] = field(default_factory=dict)
    quality_dimensions: tuple[str, ...] = ()
    mandatory_fields: tuple[str, ...] = ()
    rules: dict[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, markdown: str, version: int = 1) -> "EvalContract":
        sections: dict[str, list[str]] = {}
        current = ""
        for line in markdown.splitlines():
            if line.startswith("## "):
                current = line[3:].strip().lower()
                sections.setdefault(current, [])
            elif line.strip():
                sections.setdefault(current, []).append(line.strip())

        def bullets(name: str) -> list[str]:
            return [l[2:].strip() for l in sections.get(name, []) if l.startswith("- ")]

        def kv(name: str) -> dict[str, str]:
            out = {}
            for item in bullets(name):
                key, sep, value = item.partition(":")
                if sep:
                    out[key.strip()] = value.strip()
            return out

        mandatory: list[str] = []
        for line in sections.get("mandatory fields", []):
            mandatory.extend(p.strip() for p in line.lstrip("- ").split(",") if p.strip())
        return cls(
            version=version,
            markdown=markdown,
            format_spec=kv("record format"),
            quality_dimensions=tuple(bullets("quality dimensions")),
            mandatory_fields=tuple(mandatory),
            rules=kv("rules"),
        )


def _check_keys(data: Any, required: tuple[str, ...], what: str) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ValueError(f"{what} payload must be a JSON object")
    missing = [k for k in required if k not in data]
    if missing:
        raise ValueError(f"{what} payload missing {missing}")
    return data


@dataclass(frozen=True)
class EvaluatorPayload:
    metrics: dict[str, Any]
    gap_report: GapReport
    stop_decision: StopDecision
    contract_markdown: str
    discovery_summary: str
    extra: dict[str, Any] = field(default_factory=dict)

    KEYS = ("metrics", "gap_report", "stop_decision", "contract_markdown", "discovery_summary")

    @property
    def declared_denominator(self) -> int | None:
        value = self.metrics.get("denominator")
        return value if _is_int(value) and value > 0 else None

    @classmethod
    def from_dict(cls, data: Any) -> "EvaluatorPayload":
        data = _check_keys(data, cls.KEYS, "evaluator")
        if not isinstance(data["metrics"], dict):
            raise ValueError("evaluator metrics must be an object")
        return cls(
            metrics=dict(data["metrics"]),
            gap_report=GapReport.from_dict(data["gap_report"]),
            stop_decision=StopDecision.from_dict(data["stop_decision"] or {}),
            contract_markdown=str(data["contract_markdown"] or ""),
            discovery_summary=str(data["discovery_summary"] or ""),
            extra={k: v for k, v in data.items() if k not in cls.KEYS},
        )

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "metrics": self.metrics,
            "gap_report": self.gap_report.to_dict(),
            "stop_decision": self.stop_decision.to_dict(),
            "contract_markdown": self.contract_markdown,
            "discovery_summary": self.discovery_summary,
        }
        doc.update(self.extra)
        return doc


@dataclass(frozen=True)
class PlannerPayload:
    strategy_name: str
    action_script_written: bool
    notes: Any = ""
    extra: dict[str, Any] = field(default_factory=dict)

    KEYS = ("strategy_name", "action_script_written", "notes")

    @classmethod
    def from_dict(cls, data: Any) -> "PlannerPayload":
        data = _check_keys(data, ("strategy_name", "action_script_written"), "planner")
        return cls(
            strategy_name=str(data["strategy_name"]),
            action_script_written=bool(data["action_script_written"]),
            notes=data.get("notes", ""),
            extra={k: v for k, v in data.items() if k not in cls.KEYS},
        )

    def to_dict(self) -> dict[str, Any]:
        doc = {"strategy_name": self.strategy_name, "action_script_written": self.action_script_written,
               "notes": self.notes}
        doc.update(self.extra)
        return doc


def validate_lessons(data: Any) -> list[dict[str, Any]]:
    data = _check_keys(data, ("lessons",), "post-mortem")
    lessons = data["lessons"]
    if not isinstance(lessons, list) or not all(isinstance(l, dict) for l in lessons):
        raise ValueError("lessons must be a list of objects")
    return lessons


_SLUG_SAFE = re.compile(r"\s+")


def one_line(text: str) -> str:
    return _SLUG_SAFE.sub(" ", text).strip()
