"""The per-run loop: Evaluator, then Planner, then the deterministic executor.

Each round the Evaluator sees only artifacts from earlier rounds, commits
to a denominator and a public contract, and hands the Planner a gap
report. The executor then runs the Planner's action script followed by
the Evaluator's eval script. A run halts on a stop verdict, on the round
budget, or when fresh metrics stop moving for ``plateau_window`` rounds.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from forage.backends import AgentBackend
from forage.config import Supplies, TaskSpec, dump_task_spec
from forage.errors import (
    BackendDown,
    IsolationLeak,
    MetricsUnparseable,
    NothingToExecute,
    RunAborted,
)
from forage.executor import GRACE_SECONDS, execute_action, execute_eval
from forage.knowledge import KnowledgeStore, copy_store, seed_from
from forage.leaks import LeakScanner
from forage.protocol import EvalContract, EvaluatorPayload, GapReport, Metrics, StopDecision, Verdict
from forage.session import (
    ACTION_SCRIPT,
    EVAL_SCRIPT,
    AgentTurnOutcome,
    SessionHandle,
    Termination,
    build_trajectory_summary,
    invoke_round,
    open_session,
    replace_session,
    salvage,
)
from forage.trajectory import CostReport, Recorder, RoundRecord, RunSummary, StopReason, summarize_run
from forage.workspace import Role, WorkspaceLayout, provision_run

log = logging.getLogger(__name__)

PLATEAU_WINDOW = 2
INDEX_OPEN = "<knowledge-index>"
INDEX_CLOSE = "</knowledge-index>"

SELF_AUDIT_CHECKLIST = (
    "Is my denominator still accurate?",
    "Is my evaluation rigorous enough?",
    "Am I being too lenient?",
    "Should I expand the denominator rather than accepting overcounting?",
)

ANCHORING_INSTRUCTION = (
    "Ground the denominator independently: derive it from sources you have verified yourself, "
    "never from the records that have been collected."
)

EXPLORATION_MANDATE = (
    "Explore before you estimate. Locate the sources that define the full scope of the task, "
    "decide which kinds of item count, and only then commit to a denominator."
)

REVIEW_FLAG = (
    "Denominator review required: the last round counted more accepted records than your estimate "
    "allowed (coverage {coverage:.4f}). Treat this as evidence that the estimate is too small and "
    "expand it. Coverage is reported as measured and is never capped at 1."
)

_ROLE_BRIEF = {
    Role.EVALUATOR: (
        "You are the Evaluator. You decide what a complete answer to the task looks like and measure "
        "how close the shared dataset is to it.\n"
        "Files: eval_ws/ is yours alone; shared/ is visible to both roles. Paths are relative to the run "
        "root; tools are read_file, write_file and list_dir.\n"
        "Each round write eval_ws/eval.py. The executor runs it with shared/ as the working directory; "
        "it must read dataset.json and write metrics.json with keys numerator, denominator, coverage, "
        "per_field_quality and notes.\n"
        "Finish each round with a JSON object holding metrics, gap_report, stop_decision, "
        "contract_markdown and discovery_summary. The contract is published to both roles. The "
        "discovery summary tells the Planner which sources exist, never how you found or scored them."
    ),
    Role.PLANNER: (
        "You are the Planner. You collect the data the task asks for, guided by the published "
        "evaluation contract and the gap report you receive each round.\n"
        "Files: plan_ws/ is yours alone; shared/ is visible to both roles. Paths are relative to the run "
        "root; tools are read_file, write_file and list_dir.\n"
        "Each round write plan_ws/action.py. The executor runs it with shared/ as the working directory; "
        "only its changes to dataset.json are kept.\n"
        "Finish each round with a JSON object holding strategy_name, action_script_written and notes."
    ),
}


def system_prompt(role: Role | str, task: TaskSpec, index_text: str) -> str:
    role = Role(role)
    task_lines = [
        f"## Task {task.task_id} ({task.task_kind.value})",
        task.prompt.strip(),
    ]
    if task.required_fields:
        task_lines.append(f"Required fields: {', '.join(task.required_fields)}")
    if task.preferred_sources:
        task_lines.append(f"Suggested sources: {', '.join(task.preferred_sources)}")
    task_lines.append(f"Soft coverage target: {task.soft_coverage_target:.0%}")
    return (
        f"{_ROLE_BRIEF[role]}\n\n" + "\n".join(task_lines) + "\n\n"
        "## Organizational knowledge\n"
        "Entries are advisory. Read any of them under shared/knowledge/ by id.\n"
        f"{INDEX_OPEN}\n{index_text.rstrip()}\n{INDEX_CLOSE}\n"
    )


def extract_index(prompt: str) -> str:
    start = prompt.find(INDEX_OPEN)
    end = prompt.find(INDEX_CLOSE, start + 1)
    if start < 0 or end < 0:
        return ""
    return prompt[start + len(INDEX_OPEN):end].strip("\n") + "\n"


def _metrics_doc(metrics: Metrics | Mapping[str, Any] | None) -> dict[str, Any] | None:
    if metrics is None:
        return None
    if isinstance(metrics, Metrics):
        return metrics.to_document()
    return dict(metrics)


def build_evaluator_input(
    round_no: int,
    metrics: Metrics | Mapping[str, Any] | None = None,
    contract: EvalContract | None = None,
    *,
    review: Metrics | Mapping[str, Any] | None = None,
) -> str:
    """Round briefing for the Evaluator. From round 2 on it carries the fixed self-audit checklist."""
    if round_no < 1:
        raise ValueError("round_no starts at 1")
    parts = [f"# Round {round_no}"]
    if round_no == 1:
        parts += ["## Mandate", EXPLORATION_MANDATE, ANCHORING_INSTRUCTION]
    else:
        doc = _metrics_doc(metrics)
        parts += ["## Latest metrics",
                  json.dumps(doc, sort_keys=True) if doc else "No metrics were produced yet."]
        if contract is not None:
            parts += [f"## Current contract (version {contract.version})", contract.markdown.rstrip()]
        else:
            parts += ["## Current contract", "No contract has been published yet."]
        parts += ["## Reminder", ANCHORING_INSTRUCTION]
        parts += ["## Self-audit checklist"] + [f"{i}. {q}" for i, q in enumerate(SELF_AUDIT_CHECKLIST, 1)]
    if review is not None:
        cov = _metrics_doc(review)["coverage"]
        parts += ["## Denominator review", REVIEW_FLAG.format(coverage=cov)]
    return "\n".join(parts) + "\n"


def build_planner_input(
    contract: EvalContract,
    metrics: Metrics | Mapping[str, Any] | None,
    gap_report: GapReport,
    discovery_summary: str,
    *,
    round_no: int = 0,
    scanner: LeakScanner | None = None,
) -> str:
    """Round briefing for the Planner.

    ``scanner`` carries the Evaluator's private markers; a hit raises
    :class:`IsolationLeak` and nothing is returned.
    """
    doc = _metrics_doc(metrics)
    if doc:
        metric_line = (f"numerator: {doc['numerator']}, denominator: {doc['denominator']}, "
                       f"coverage: {doc['coverage']:.4f}")
    else:
        metric_line = "No metrics were produced yet."
    lines = [f"# Round {round_no} briefing" if round_no else "# Briefing",
             f"## Evaluation contract (version {contract.version})", contract.markdown.rstrip(),
             "## Latest metrics", metric_line,
             f"## Gap report ({len(gap_report.gaps)} gaps)"]
    lines += [f"- [{g.severity}] {g.description}" for g in gap_report.gaps] or ["None reported."]
    lines += ["## Suspected overcounts"]
    lines += [f"- {s}" for s in gap_report.suspected_overcounts] or ["None reported."]
    lines += ["## Discovery summary", discovery_summary.strip() or "None provided."]
    text = "\n".join(lines) + "\n"
    if scanner is not None:
        scanner.check(text, "planner briefing")
    return text


class Halt(str, enum.Enum):
    CONTINUE = "continue"
    HALT = "halt"


def _pair(m: Any) -> tuple[Any, Any]:
    if isinstance(m, Metrics):
        return (m.numerator, m.denominator)
    if isinstance(m, Mapping):
        return (m.get("numerator"), m.get("denominator"))
    return tuple(m)  # type: ignore[return-value]


def plateau_detect(history: Sequence[Any], window: int = PLATEAU_WINDOW) -> bool:
    """True iff the last ``window`` entries carry identical (numerator, denominator) pairs."""
    if window < 1:
        raise ValueError("plateau window must be at least 1")
    if len(history) < window:
        return False
    tail = [_pair(m) for m in history[-window:]]
    return all(p == tail[0] for p in tail)


def halt_reason(
    decision: StopDecision | None,
    round_no: int,
    supplies: Supplies,
    metrics_history: Sequence[Any],
    *,
    plateau_window: int = PLATEAU_WINDOW,
) -> StopReason | None:
    if decision is not None and decision.verdict is Verdict.STOP:
        return StopReason.JUDGMENT
    if plateau_window > 1 and plateau_detect(metrics_history, plateau_window):
        return StopReason.PLATEAU
    if round_no >= supplies.max_rounds:
        return StopReason.BUDGET
    return None


def decide_stop(
    decision: StopDecision | None,
    round_no: int,
    supplies: Supplies,
    metrics_history: Sequence[Any],
    *,
    plateau_window: int = PLATEAU_WINDOW,
) -> Halt:
    reason = halt_reason(decision, round_no, supplies, metrics_history, plateau_window=plateau_window)
    return Halt.CONTINUE if reason is None else Halt.HALT


def _now_id() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


@dataclass
class RunResult:
    summary: RunSummary
    layout: WorkspaceLayout
    records: list[RoundRecord]


class RoundEngine:
    """State for one run. Use :func:`run` unless the records are needed."""

    def __init__(
        self,
        task: TaskSpec,
        supplies: Supplies,
        backends: Mapping[Role | str, AgentBackend],
        seed: str | Path | None = None,
        *,
        experiment_root: str | Path,
        run_id: str | None = None,
        lineage: str | Path | None = None,
        plateau_window: int = PLATEAU_WINDOW,
        command: Sequence[str] | None = None,
        grace: float = GRACE_SECONDS,
        smoke_timeout: float = 30.0,
        replacement_backends: Mapping[Role | str, AgentBackend] | None = None,
        label: str = "",
    ):
        self.task = task
        self.supplies = supplies
        self.backends = {Role(k): v for k, v in backends.items()}
        self.replacements = {Role(k): v for k, v in (replacement_backends or {}).items()}
        for role in (Role.EVALUATOR, Role.PLANNER):
            if role not in self.backends:
                raise ValueError(f"no backend for {role.value}")
        self.seed = Path(seed) if seed is not None else None
        self.lineage = Path(lineage) if lineage is not None else None
        self.experiment_root = Path(experiment_root)
        self.run_id = run_id or f"{task.task_id}-{_now_id()}"
        self.plateau_window = plateau_window
        self.command = tuple(command) if command else task.executor_command()
        self.grace = grace
        self.smoke_timeout = smoke_timeout
        self.label = label

        self.layout: WorkspaceLayout | None = None
        self.recorder: Recorder | None = None
        self.costs = CostReport()
        self.sessions: dict[Role, SessionHandle | None] = {Role.EVALUATOR: None, Role.PLANNER: None}
        self.base_prompts: dict[Role, str] = {}
        self.contract_md: str | None = None
        self.contract_version = 0
        self.contract_frozen = False
        self.latest: Metrics | None = None
        self.fresh_history: list[Metrics] = []
        self.review_pending: Metrics | None = None
        self.records: list[RoundRecord] = []
        self.flags: list[str] = []
        self.knowledge_before = 0
        self.commit_store: KnowledgeStore | None = None

    # -- setup ---------------------------------------------------------------

    def _provision(self) -> None:
        stage_from = self.seed
        if self.lineage is not None:
            lineage_store = KnowledgeStore(self.lineage)
            if self.seed is not None:
                seed_from(self.seed, lineage_store)
            if not (self.lineage / "INDEX.md").exists():
                lineage_store.write_index()
            stage_from = self.lineage
        self.layout = provision_run(self.run_id, stage_from, experiment_root=self.experiment_root)
        staged = KnowledgeStore(self.layout.knowledge)
        self.knowledge_before = len(staged)
        if self.lineage is not None:
            self.commit_store = KnowledgeStore(self.lineage)
        else:
            target = self.layout.root / "postmortem" / "knowledge"
            copy_store(self.layout.knowledge, target)
            self.commit_store = KnowledgeStore(target)
        self.recorder = Recorder(self.layout.root)
        index_text = staged.index_text()
        notes = []
        if self.task.task_kind.value == "structured_exploration" and "eval_timeout" not in self.task.supply_overrides:
            notes.append("eval_timeout not given for this task kind; it follows round_timeout")
        meta = {
            "run_id": self.run_id,
            "label": self.label,
            "supplies": self.supplies.to_dict(),
            "plateau_window": self.plateau_window,
            "command": list(self.command),
            "backends": {r.value: b.describe() for r, b in self.backends.items()},
            "seed_knowledge": str(self.seed) if self.seed else None,
            "lineage": str(self.lineage) if self.lineage else None,
            "knowledge_staged": self.knowledge_before,
            "index_bytes": len(index_text.encode("utf-8")),
            "notes": notes,
        }
        _write_json(self.layout.root / "run.json", meta)
        (self.layout.root / "task.yaml").write_text(dump_task_spec(self.task), encoding="utf-8")
        for note in notes:
            log.info("%s: %s", self.run_id, note)
        log.info("%s: staged knowledge index is %d bytes", self.run_id, meta["index_bytes"])
        for role in (Role.EVALUATOR, Role.PLANNER):
            self.base_prompts[role] = system_prompt(role, self.task, index_text)

    def _open_sessions(self) -> None:
        for role in (Role.EVALUATOR, Role.PLANNER):
            try:
                self.sessions[role] = open_session(role, self.base_prompts[role], self.backends[role])
            except BackendDown as exc:
                raise RunAborted(f"cannot open {role.value} session: {exc}", self.layout.root) from None

    # -- helpers ---------------------------------------------------------------

    def _available(self, role: Role) -> bool:
        s = self.sessions[role]
        return s is not None and s.alive

    def _scanner(self, owner: Role) -> LeakScanner:
        return LeakScanner.for_private_tree(self.layout, owner)

    def _replace(self, role: Role) -> None:
        dead = self.sessions[role]
        summary = build_trajectory_summary(dead) if dead is not None else ""
        backend = self.replacements.get(role, self.backends[role])
        self.sessions[role] = replace_session(
            role, summary, backend, base_prompt=self.base_prompts[role],
            scanner=self._scanner(role.opponent), replaces=dead,
        )

    def _write_contract(self, markdown: str) -> None:
        tmp = self.layout.contract.with_name(".eval_contract.md.tmp")
        tmp.write_text(markdown, encoding="utf-8")
        os.replace(tmp, self.layout.contract)
        self.contract_md = markdown
        self.contract_version += 1

    def _archive_scripts(self, round_no: int, archive: Path) -> None:
        for private, name in ((self.layout.eval_ws, EVAL_SCRIPT), (self.layout.plan_ws, ACTION_SCRIPT)):
            script = private / name
            if script.is_file():
                shutil.copyfile(script, archive / name)
                history = private / ".history"
                history.mkdir(exist_ok=True)
                os.replace(script, history / f"r{round_no:03d}-{name}")

    def _archive_state(self, archive: Path, metrics: Metrics | None, fresh: bool) -> None:
        shutil.copyfile(self.layout.dataset, archive / "dataset.json")
        if self.layout.contract.exists():
            shutil.copyfile(self.layout.contract, archive / "eval_contract.md")
        if metrics is not None:
            doc = metrics.to_document()
            if not fresh:
                doc = {"carried_forward": True, **doc}
            _write_json(archive / "metrics.json", doc)

    def _usage(self, role: str, outcome: AgentTurnOutcome | None) -> float:
        if outcome is None:
            return 0.0
        self.costs.add_usage(role, outcome.usage.to_dict())
        return outcome.usage.cost

    # -- one round ---------------------------------------------------------------

    def _round(self, r: int) -> StopReason | None:
        layout = self.layout
        layout.current_round = r
        audit_mark = len(layout.audit)
        archive = self.recorder.round_dir(r)
        notes: list[str] = []
        replaced: list[str] = []
        salvaged: dict[str, list[str]] = {}
        degraded = False

        for role in (Role.EVALUATOR, Role.PLANNER):
            s = self.sessions[role]
            if s is not None and not s.alive:
                try:
                    self._replace(role)
                    replaced.append(role.value)
                    notes.append(f"{role.value} session replaced ({self.sessions[role].session_id})")
                except BackendDown as exc:
                    notes.append(f"{role.value} replacement failed: {exc}")
                    self.sessions[role] = s if s is not None else None
        if not self._available(Role.EVALUATOR) and not self._available(Role.PLANNER):
            raise RunAborted(f"round {r}: both sessions are dead and could not be replaced", layout.root)

        # Evaluator: sees only artifacts from earlier rounds.
        ev_out: AgentTurnOutcome | None = None
        payload: EvaluatorPayload | None = None
        eval_ready = False
        if self._available(Role.EVALUATOR):
            contract = EvalContract.parse(self.contract_md, self.contract_version) if self.contract_md else None
            ev_input = build_evaluator_input(r, self.latest, contract, review=self.review_pending)
            self._scanner(Role.PLANNER).check(ev_input, "evaluator briefing")
            ev_out = invoke_round(self.sessions[Role.EVALUATOR], ev_input, self.supplies,
                                  layout=layout, round_no=r)
            self.review_pending = None
            if ev_out.termination is Termination.COMPLETED:
                payload = EvaluatorPayload.from_dict(ev_out.structured_response)
                eval_ready = (layout.eval_ws / EVAL_SCRIPT).is_file()
            else:
                notes.append(f"evaluator turn ended: {ev_out.termination.value} {ev_out.error}".rstrip())
        else:
            notes.append("evaluator unavailable")
        if payload is None:
            found = salvage(layout, Role.EVALUATOR, command=self.command, smoke_timeout=self.smoke_timeout)
            if found.artifacts:
                salvaged["evaluator"] = sorted(found.artifacts)
            if found.rejected:
                notes.append(f"evaluator salvage rejected: {found.rejected}")
            eval_ready = "eval_script" in found.artifacts

        stop_decision = payload.stop_decision if payload is not None else None
        if stop_decision is not None and stop_decision.verdict is Verdict.STOP:
            if payload.contract_markdown.strip() and payload.contract_markdown != self.contract_md:
                notes.append("contract revision in the stop round ignored; the contract is frozen")
            self.contract_frozen = True
            self._archive_state(archive, self.latest, fresh=False)
            self._archive_scripts(r, archive)
            cost = self._usage("evaluator", ev_out)
            self.costs.add_round(cost)
            self._record(RoundRecord(
                round_no=r, evaluator_outcome=ev_out.to_dict(), planner_outcome=None, execution_reports=[],
                metrics=_metrics_doc(self.latest), contract_version=self.contract_version, degraded=False,
                denials_this_round=self._denials_since(audit_mark), stop_decision=stop_decision.to_dict(),
                declared_denominator=payload.declared_denominator, salvaged=salvaged, replaced=replaced,
                notes=notes, cost=cost,
            ))
            return StopReason.JUDGMENT

        if payload is not None and payload.contract_markdown.strip() and payload.contract_markdown != self.contract_md:
            self._write_contract(payload.contract_markdown)
            notes.append(f"contract version {self.contract_version} published")

        # Planner.
        pl_out: AgentTurnOutcome | None = None
        evaluator_usable = payload is not None or eval_ready
        run_action = False
        if not evaluator_usable:
            degraded = True
            notes.append("no usable evaluator output; planner skipped and metrics carried forward")
        elif self.contract_md is None:
            degraded = True
            notes.append("no contract published yet; planner skipped")
        elif not self._available(Role.PLANNER):
            degraded = True
            notes.append("planner unavailable")
        else:
            gap_report = payload.gap_report if payload is not None else GapReport()
            discovery = payload.discovery_summary if payload is not None else ""
            contract = EvalContract.parse(self.contract_md, self.contract_version)
            scanner = self._scanner(Role.EVALUATOR)
            try:
                pl_input = build_planner_input(contract, self.latest, gap_report, discovery,
                                               round_no=r, scanner=scanner)
            except IsolationLeak as exc:
                notes.append(f"discovery summary withheld: {exc}")
                self.flags.append(f"leak_blocked_round_{r}")
                try:
                    pl_input = build_planner_input(contract, self.latest, gap_report,
                                                   "[withheld: failed the isolation scan]",
                                                   round_no=r, scanner=scanner)
                except IsolationLeak as exc2:
                    notes.append(f"planner briefing withheld: {exc2}")
                    pl_input = None
            if pl_input is None:
                degraded = True
            else:
                pl_out = invoke_round(self.sessions[Role.PLANNER], pl_input, self.supplies,
                                      layout=layout, round_no=r)
                run_action = True
                if pl_out.termination is not Termination.COMPLETED:
                    notes.append(f"planner turn ended: {pl_out.termination.value} {pl_out.error}".rstrip())
                    found = salvage(layout, Role.PLANNER, command=self.command)
                    if found.artifacts:
                        salvaged["planner"] = sorted(found.artifacts)
                    if found.rejected:
                        notes.append(f"planner salvage rejected: {found.rejected}")
                    run_action = "action_script" in found.artifacts
                    if not run_action:
                        degraded = True

        # Executor: action strictly before eval.
        reports = []
        if run_action:
            try:
                report = execute_action(layout, self.command, self.supplies.round_timeout,
                                        round_no=r, archive_dir=archive, grace=self.grace)
                reports.append(report.to_dict())
                if report.exit_status != 0 or report.timed_out:
                    notes.append(f"action script exit {report.exit_status}"
                                 + (" (timed out)" if report.timed_out else ""))
            except NothingToExecute as exc:
                degraded = True
                notes.append(f"action phase skipped: {exc}")

        fresh: Metrics | None = None
        if eval_ready:
            try:
                fresh, report = execute_eval(layout, self.command, self.supplies.eval_timeout,
                                             round_no=r, archive_dir=archive, grace=self.grace)
                reports.append(report.to_dict())
            except MetricsUnparseable as exc:
                degraded = True
                notes.append(f"metrics rejected: {exc}")
                if getattr(exc, "report", None) is not None:
                    reports.append(exc.report.to_dict())
            except NothingToExecute as exc:
                degraded = True
                notes.append(f"eval phase skipped: {exc}")
        elif evaluator_usable:
            degraded = True
            notes.append("no eval script this round; metrics carried forward")

        independence_violation = False
        review_flag = False
        declared = payload.declared_denominator if payload is not None else None
        if fresh is not None:
            self.latest = fresh
            if not degraded:
                self.fresh_history.append(fresh)
            if declared is not None and fresh.denominator != declared:
                independence_violation = True
                notes.append(f"metrics denominator {fresh.denominator} differs from the declared {declared}")
            if fresh.needs_denominator_review:
                review_flag = True
                self.review_pending = fresh
        self._archive_state(archive, self.latest, fresh=fresh is not None)
        self._archive_scripts(r, archive)

        cost = self._usage("evaluator", ev_out) + self._usage("planner", pl_out)
        self.costs.add_round(cost)
        self._record(RoundRecord(
            round_no=r,
            evaluator_outcome=ev_out.to_dict() if ev_out else None,
            planner_outcome=pl_out.to_dict() if pl_out else None,
            execution_reports=reports,
            metrics=_metrics_doc(self.latest),
            contract_version=self.contract_version,
            degraded=degraded,
            denials_this_round=self._denials_since(audit_mark),
            stop_decision=stop_decision.to_dict() if stop_decision else None,
            declared_denominator=declared,
            review_flag=review_flag,
            independence_violation=independence_violation,
            salvaged=salvaged,
            replaced=replaced,
            notes=notes,
            cost=cost,
        ))
        return halt_reason(stop_decision, r, self.supplies, self.fresh_history, plateau_window=self.plateau_window)

    def _denials_since(self, mark: int) -> int:
        return sum(1 for e in self.layout.audit.entries[mark:] if e.verdict == "denied")

    def _record(self, record: RoundRecord) -> None:
        self.recorder.record_round(record)
        self.records.append(record)

    # -- whole run ---------------------------------------------------------------

    def execute(self) -> RunResult:
        from forage.postmortem import run_postmortem

        self._provision()
        stop_reason = StopReason.BUDGET
        aborted: RunAborted | None = None
        try:
            self._open_sessions()
            for r in range(1, self.supplies.max_rounds + 1):
                reason = self._round(r)
                if reason is not None:
                    stop_reason = reason
                    break
        except RunAborted as exc:
            aborted = exc
            stop_reason = StopReason.ABORTED
            self.flags.append("aborted")
            log.warning("%s aborted: %s", self.run_id, exc)

        pre = summarize_run(self.run_id, self.records, self.costs, self.knowledge_before, self.knowledge_before,
                            stop_reason, task_id=self.task.task_id, flags=self.flags)
        committed = run_postmortem(
            self.records, pre, self.sessions, self.backends, self.commit_store, self.supplies,
            layout=self.layout, abort_cause=str(aborted) if aborted else "", costs=self.costs,
        )
        if aborted is not None and committed:
            self.flags.append("postmortem_from_partial_trajectory")
        summary = summarize_run(self.run_id, self.records, self.costs, self.knowledge_before,
                                len(self.commit_store), stop_reason, task_id=self.task.task_id, flags=self.flags)
        self.recorder.write_costs(self.costs)
        self.recorder.write_summary(summary)
        if aborted is not None:
            raise RunAborted(str(aborted), self.layout.root)
        return RunResult(summary, self.layout, self.records)


def run(
    task: TaskSpec,
    supplies: Supplies,
    backends: Mapping[Role | str, AgentBackend],
    seed: str | Path | None = None,
    **kwargs: Any,
) -> RunSummary:
    """Execute one run and return its persisted summary."""
    return RoundEngine(task, supplies, backends, seed, **kwargs).execute().summary
