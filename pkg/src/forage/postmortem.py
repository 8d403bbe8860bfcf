"""End-of-run lesson extraction into the knowledge store.

Each role gets a narrative of its own rounds only. The Evaluator's
covers denominators, coverage, contract versions and discovery; the
Planner's covers strategies, scripts and execution results. Each
narrative is scanned for the other role's private markers before any
backend sees it.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping, Sequence

from forage.backends import AgentBackend
from forage.config import Supplies
from forage.errors import BackendDown, MalformedEntry, SessionDead
from forage.knowledge import KnowledgeEntry, KnowledgeStore, slugify, split_version
from forage.leaks import LeakScanner
from forage.protocol import one_line
from forage.session import SessionHandle, Termination, invoke_round, open_session
from forage.trajectory import CostReport, RoundRecord, RunSummary
from forage.workspace import Role, WorkspaceLayout

log = logging.getLogger(__name__)

EXTRACTION_PROMPT = (
    "The run is over. Read the narrative of your own rounds and record lessons that would help a "
    "future team on a similar task. Answer with a JSON object {\"lessons\": [...]}, each lesson "
    "holding id (snake_case), scope (universal or a domain), type (advisory), summary (one line) "
    "and content."
)


def _fmt(value: Any) -> str:
    return "-" if value is None else str(value)


def _payload(outcome: Mapping[str, Any] | None) -> dict[str, Any]:
    if not outcome:
        return {}
    return outcome.get("structured_response") or {}


def _evaluator_narrative(summary: RunSummary, records: Sequence[RoundRecord]) -> list[str]:
    lines = [
        f"Evaluator narrative for run {summary.run_id}",
        f"denominator trajectory: {'→'.join(_fmt(d) for d in summary.denominator_trajectory)}",
        "coverage trajectory: " + "→".join(
            "-" if c is None else f"{c:.3f}" for c in summary.coverage_trajectory),
    ]
    for rec in records:
        payload = _payload(rec.evaluator_outcome)
        lines.append(f"## Round {rec.round_no}")
        if rec.evaluator_outcome is None:
            lines.append("turn: not run")
        else:
            lines.append(f"turn: {rec.evaluator_outcome.get('termination')}")
        declared = rec.declared_denominator
        lines.append(f"denominator estimate: {_fmt(declared)}")
        if rec.metrics is not None:
            m = rec.metrics
            lines.append(f"measured: {m['numerator']}/{m['denominator']} coverage {m['coverage']:.4f}")
        lines.append(f"contract version: {rec.contract_version}")
        if payload.get("discovery_summary"):
            lines.append(f"discovery: {one_line(str(payload['discovery_summary']))}")
        for obs in payload.get("observations", []) or []:
            lines.append(f"observation: {one_line(str(obs))}")
        verdict = (rec.stop_decision or {}).get("verdict", "continue")
        lines.append(f"verdict: {verdict}")
        if rec.review_flag:
            lines.append("coverage exceeded the estimate; review requested")
        if rec.degraded:
            lines.append("round degraded")
    lines.append(f"final: rounds={summary.rounds} denominator={_fmt(summary.final_denominator)} "
                 f"stop={summary.stop_reason.value}")
    return lines


def _planner_narrative(summary: RunSummary, records: Sequence[RoundRecord]) -> list[str]:
    lines = [f"Planner narrative for run {summary.run_id}"]
    for rec in records:
        lines.append(f"## Round {rec.round_no}")
        if rec.planner_outcome is None:
            lines.append("turn: not run")
            continue
        lines.append(f"turn: {rec.planner_outcome.get('termination')}")
        payload = _payload(rec.planner_outcome)
        if payload:
            written = "written" if payload.get("action_script_written") else "not written"
            lines.append(f"strategy: {payload.get('strategy_name')} (action script {written})")
            notes = payload.get("notes")
            if isinstance(notes, Mapping):
                lines.append("observation: " + " ".join(f"{k}={one_line(str(v))}" for k, v in sorted(notes.items())))
            elif notes:
                lines.append(f"notes: {one_line(str(notes))}")
        for report in rec.execution_reports:
            if report.get("phase") != "action":
                continue
            changed = "dataset updated" if report.get("artifacts_written") else "dataset unchanged"
            lines.append(f"result: action exit {report.get('exit_status')}, {changed}"
                         + (", timed out" if report.get("timed_out") else ""))
    lines.append(f"final: rounds={summary.rounds} stop={summary.stop_reason.value}")
    return lines


def build_narrative(
    role: Role | str,
    summary: RunSummary,
    records: Sequence[RoundRecord],
    *,
    scanner: LeakScanner | None = None,
    abort_cause: str = "",
) -> str:
    """Role-scoped plain-text narrative, one section per round."""
    role = Role(role)
    if role is Role.EXECUTOR:
        raise ValueError("the executor has no narrative")
    if not records:
        cause = abort_cause or summary.stop_reason.value
        lines = [f"{role.value.capitalize()} narrative for run {summary.run_id}",
                 f"The run was aborted before any round completed: {one_line(cause)}",
                 f"final: rounds=0 stop={summary.stop_reason.value}"]
    elif role is Role.EVALUATOR:
        lines = _evaluator_narrative(summary, records)
    else:
        lines = _planner_narrative(summary, records)
    text = "\n".join(lines) + "\n"
    if scanner is not None:
        if scanner.owner is role:
            raise ValueError("the scanner must carry the opposing role's markers")
        scanner.check(text, f"{role.value} narrative")
    return text


def _to_entry(raw: Any) -> KnowledgeEntry | None:
    if not isinstance(raw, Mapping):
        return None
    data = dict(raw)
    proposed = str(data.get("id") or data.get("summary") or "lesson")
    data["id"] = split_version(slugify(proposed))[0]
    data.setdefault("type", "advisory")
    try:
        return KnowledgeEntry.from_payload(data)
    except MalformedEntry as exc:
        log.warning("dropping malformed lesson %r: %s", proposed, exc)
        return None


def extract_lessons(
    session: SessionHandle | AgentBackend,
    narrative: str,
    supplies: Supplies,
    *,
    role: Role | str | None = None,
    usage_sink: list[dict[str, Any]] | None = None,
) -> list[KnowledgeEntry]:
    """Ask the role for lessons; a live session keeps its context, otherwise a fresh one is primed.

    A failed attempt is retried once; a second failure yields no lessons.
    """
    for attempt in (1, 2):
        try:
            if isinstance(session, SessionHandle) and session.alive:
                handle = session
            else:
                backend = session.backend if isinstance(session, SessionHandle) else session
                r = Role(role) if role is not None else session.role  # type: ignore[union-attr]
                handle = open_session(r, f"{EXTRACTION_PROMPT}\n\n{narrative}", backend)
            outcome = invoke_round(handle, narrative, supplies, phase="postmortem")
        except (BackendDown, SessionDead) as exc:
            log.warning("lesson extraction attempt %d failed: %s", attempt, exc)
            continue
        if usage_sink is not None:
            usage_sink.append(outcome.usage.to_dict())
        if outcome.termination is Termination.COMPLETED:
            entries = [_to_entry(l) for l in outcome.structured_response.get("lessons", [])]
            return [e for e in entries if e is not None]
        log.warning("lesson extraction attempt %d ended: %s %s", attempt, outcome.termination.value, outcome.error)
    log.warning("lesson extraction skipped after two failures; run results stand")
    return []


def commit_lessons(store: KnowledgeStore, entries: Sequence[KnowledgeEntry], run_id: str = "") -> list[str]:
    """Append each entry (versioning on collision), stamp ``source_run`` and refresh the index."""
    ids = []
    for entry in entries:
        if run_id:
            entry = entry.with_source_run(run_id)
        if entry.version > 1:
            entry = entry.with_id(entry.base_id)
        ids.append(store.append_entry(entry))
    store.write_index()
    return ids


def run_postmortem(
    records: Sequence[RoundRecord],
    summary: RunSummary,
    sessions: Mapping[Role, SessionHandle | None],
    backends: Mapping[Role, AgentBackend],
    store: KnowledgeStore,
    supplies: Supplies,
    *,
    layout: WorkspaceLayout | None = None,
    abort_cause: str = "",
    costs: CostReport | None = None,
) -> list[str]:
    """Build both narratives, extract and commit. Returns the stored ids."""
    stored: list[str] = []
    out_dir = layout.root / "postmortem" if layout is not None else None
    if out_dir is not None:
        out_dir.mkdir(exist_ok=True)
    for role in (Role.EVALUATOR, Role.PLANNER):
        scanner = LeakScanner.for_private_tree(layout, role.opponent) if layout is not None else None
        narrative = build_narrative(role, summary, records, scanner=scanner, abort_cause=abort_cause)
        if out_dir is not None:
            (out_dir / f"{role.value}_narrative.txt").write_text(narrative, encoding="utf-8")
        if not records:
            continue
        source = sessions.get(role) or backends[role]
        usage: list[dict[str, Any]] = []
        entries = extract_lessons(source, narrative, supplies, role=role, usage_sink=usage)
        if costs is not None:
            for u in usage:
                costs.add_usage("postmortem", u)
        stored.extend(commit_lessons(store, entries, summary.run_id))
    if out_dir is not None:
        (out_dir / "committed.txt").write_text("".join(f"{i}\n" for i in stored), encoding="utf-8")
    return stored


def rerun_postmortem(
    run_root: str | Path,
    backends: Mapping[Role | str, AgentBackend],
    store_dir: str | Path,
    supplies: Supplies,
) -> list[str]:
    """Extract again from a finished run's files into ``store_dir``."""
    from forage.trajectory import load_summary, load_trajectory

    run_root = Path(run_root)
    records = load_trajectory(run_root)
    summary = load_summary(run_root)
    layout = WorkspaceLayout.at(run_root)
    layout.audit = None  # read-only pass; no new audit lines
    return run_postmortem(
        records, summary, {}, {Role(k): v for k, v in backends.items()}, KnowledgeStore(store_dir), supplies,
        layout=layout,
    )
