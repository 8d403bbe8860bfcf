"""Per-round records, run summaries, cost accounting and condition reports.

Files under a run root: ``trajectory.jsonl`` (one JSON line per round),
``summary.json``, ``costs.json``, plus ``rounds/NNN/`` with the dataset,
contract, metrics and full executor streams of each round.
"""

from __future__ import annotations

import enum
import json
import math
import os
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from forage.errors import NoData, RecorderOrderViolation, StoreIO

TRAJECTORY_FILE = "trajectory.jsonl"
SUMMARY_FILE = "summary.json"
COSTS_FILE = "costs.json"


class StopReason(str, enum.Enum):
    JUDGMENT = "judgment"
    BUDGET = "budget"
    PLATEAU = "plateau"
    ABORTED = "aborted"


@dataclass
class RoundRecord:
    round_no: int
    evaluator_outcome: dict[str, Any] | None
    planner_outcome: dict[str, Any] | None
    execution_reports: list[dict[str, Any]]
    metrics: dict[str, Any] | None
    contract_version: int
    degraded: bool
    denials_this_round: int
    stop_decision: dict[str, Any] | None = None
    declared_denominator: int | None = None
    review_flag: bool = False
    independence_violation: bool = False
    salvaged: dict[str, list[str]] = field(default_factory=dict)
    replaced: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    cost: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RoundRecord":
        return cls(**doc)

    @property
    def numerator(self) -> int | None:
        return None if self.metrics is None else self.metrics["numerator"]

    @property
    def denominator(self) -> int | None:
        return None if self.metrics is None else self.metrics["denominator"]

    @property
    def coverage(self) -> float | None:
        return None if self.metrics is None else self.metrics["coverage"]


@dataclass
class CostReport:
    per_round: list[float] = field(default_factory=list)
    usage_breakdown: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.per_round)

    def add_round(self, amount: float) -> None:
        self.per_round.append(amount)

    def add_usage(self, role: str, usage: dict[str, Any]) -> None:
        slot = self.usage_breakdown.setdefault(role, {"tokens_in": 0, "tokens_out": 0, "cost": 0.0})
        for key in slot:
            slot[key] += usage.get(key, 0) or 0

    def to_dict(self) -> dict[str, Any]:
        return {"per_round": self.per_round, "total": self.total, "usage_breakdown": self.usage_breakdown}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CostReport":
        return cls(list(doc.get("per_round", [])), dict(doc.get("usage_breakdown", {})))


@dataclass
class RunSummary:
    run_id: str
    rounds: int
    final_denominator: int | None
    final_coverage: float | None
    denominator_trajectory: list[int | None]
    cost_total: float
    knowledge_before: int
    knowledge_after: int
    stop_reason: StopReason
    task_id: str = ""
    numerator_trajectory: list[int | None] = field(default_factory=list)
    coverage_trajectory: list[float | None] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.stop_reason = StopReason(self.stop_reason)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["stop_reason"] = self.stop_reason.value
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunSummary":
        return cls(**doc)

    def trajectory_text(self) -> str:
        return "→".join("-" if d is None else str(d) for d in self.denominator_trajectory)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Recorder:
    """Single writer for one run's trajectory files."""

    def __init__(self, run_root: str | Path):
        self.run_root = Path(run_root)
        self.path = self.run_root / TRAJECTORY_FILE
        existing = load_trajectory(self.run_root) if self.path.exists() else []
        self.last_round = existing[-1].round_no if existing else 0

    def record_round(self, record: RoundRecord) -> None:
        """Append ``record`` durably before returning."""
        if record.round_no <= self.last_round:
            raise RecorderOrderViolation(
                f"round {record.round_no} recorded after round {self.last_round}")
        line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False)
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreIO(f"cannot append to {self.path}: {exc}") from None
        self.last_round = record.round_no

    def round_dir(self, round_no: int) -> Path:
        path = self.run_root / "rounds" / f"{round_no:03d}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_summary(self, summary: RunSummary) -> None:
        _write_atomic(self.run_root / SUMMARY_FILE, json.dumps(summary.to_dict(), indent=2, sort_keys=True))

    def write_costs(self, costs: CostReport) -> None:
        _write_atomic(self.run_root / COSTS_FILE, json.dumps(costs.to_dict(), indent=2, sort_keys=True))


def record_round(recorder: Recorder, record: RoundRecord) -> None:
    recorder.record_round(record)


def load_trajectory(run_root: str | Path) -> list[RoundRecord]:
    path = Path(run_root) / TRAJECTORY_FILE
    records = []
    if not path.exists():
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                records.append(RoundRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError):
                break  # torn final line from a killed writer
    return records


def load_summary(path: str | Path) -> RunSummary:
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_FILE
    return RunSummary.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_costs(run_root: str | Path) -> CostReport:
    return CostReport.from_dict(json.loads((Path(run_root) / COSTS_FILE).read_text(encoding="utf-8")))


def summarize_run(
    run_id: str,
    records: Sequence[RoundRecord],
    costs: CostReport,
    knowledge_before: int,
    knowledge_after: int,
    stop_reason: StopReason | str,
    *,
    task_id: str = "",
    flags: Iterable[str] = (),
) -> RunSummary:
    """Pure aggregation over the round records."""
    denoms = [r.denominator for r in records]
    final = next((r for r in reversed(records) if r.metrics is not None), None)
    return RunSummary(
        run_id=run_id,
        rounds=len(records),
        final_denominator=None if final is None else final.denominator,
        final_coverage=None if final is None else final.coverage,
        denominator_trajectory=denoms,
        cost_total=costs.total,
        knowledge_before=knowledge_before,
        knowledge_after=knowledge_after,
        stop_reason=StopReason(stop_reason),
        task_id=task_id,
        numerator_trajectory=[r.numerator for r in records],
        coverage_trajectory=[r.coverage for r in records],
        flags=list(flags),
    )


@dataclass
class ConditionReport:
    condition: str
    runs: int
    coverage_mean: float | None
    coverage_min: float | None
    coverage_max: float | None
    cost_mean: float
    cost_std: float
    rounds_mean: float
    denom_min: int | None
    denom_max: int | None
    spread: int | None
    spread_pct: float | None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def aggregate_condition(summaries: Sequence[RunSummary], condition: str = "") -> ConditionReport:
    """Mean/range/std over a condition's runs.

    Spread is ``max - min`` of the final denominators, and ``spread_pct``
    expresses it relative to the smallest denominator.
    """
    if not summaries:
        raise NoData("no run summaries to aggregate")
    covs = [s.final_coverage for s in summaries if s.final_coverage is not None]
    dens = [s.final_denominator for s in summaries if s.final_denominator is not None]
    costs = [s.cost_total for s in summaries]
    lo, hi = (min(dens), max(dens)) if dens else (None, None)
    spread = None if lo is None else hi - lo
    return ConditionReport(
        condition=condition,
        runs=len(summaries),
        coverage_mean=statistics.fmean(covs) if covs else None,
        coverage_min=min(covs) if covs else None,
        coverage_max=max(covs) if covs else None,
        cost_mean=statistics.fmean(costs),
        cost_std=statistics.pstdev(costs) if len(costs) > 1 else 0.0,
        rounds_mean=statistics.fmean(s.rounds for s in summaries),
        denom_min=lo,
        denom_max=hi,
        spread=spread,
        spread_pct=None if lo is None else (100.0 * spread / lo if lo else math.nan),
    )


def _pct(value: float | None, digits: int = 1) -> str:
    return "-" if value is None else f"{100 * value:.{digits}f}%"


def render_run_table(summaries: Sequence[RunSummary]) -> str:
    lines = [f"{'Run':<16} {'Rounds':>6} {'Final Denom':>11} {'Coverage':>9} {'Cost':>8}  Denom Trajectory"]
    for s in summaries:
        den = "-" if s.final_denominator is None else str(s.final_denominator)
        lines.append(f"{s.run_id:<16} {s.rounds:>6} {den:>11} {_pct(s.final_coverage):>9} "
                     f"{'$' + format(s.cost_total, '.2f'):>8}  {s.trajectory_text()}")
    return "\n".join(lines)


def render_condition_table(reports: Sequence[ConditionReport]) -> str:
    header = (f"{'Condition':<20} {'Runs':>4} {'Rounds':>6} {'Coverage':>9} {'Cov range':>15} "
              f"{'Denom Range':>12} {'Spread':>11} {'Cost mean':>9} {'Cost std':>8}")
    lines = [header]
    for r in reports:
        cov_range = "-" if r.coverage_min is None else f"{_pct(r.coverage_min)}–{_pct(r.coverage_max)}"
        rng = "-" if r.denom_min is None else f"{r.denom_min}–{r.denom_max}"
        spread = "-" if r.spread is None else f"{r.spread} ({r.spread_pct:.0f}%)"
        lines.append(f"{r.condition:<20} {r.runs:>4} {r.rounds_mean:>6.1f} {_pct(r.coverage_mean):>9} "
                     f"{cov_range:>15} {rng:>12} {spread:>11} {'$' + format(r.cost_mean, '.2f'):>9} "
                     f"{'$' + format(r.cost_std, '.2f'):>8}")
    lines.append("Coverage is relative to each run's own final denominator; "
                 "per-round coverage in trajectories is relative to that round's denominator.")
    return "\n".join(lines)
