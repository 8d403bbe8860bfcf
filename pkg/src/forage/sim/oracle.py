"""Expected trajectories computed without the harness.

The oracle calls the same policy functions as the scripted backends but
keeps the dataset in memory, recounts metrics itself and applies its own
stop rules. No sessions, no path jail and no subprocesses are involved,
so agreement with a harness run checks the plumbing end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from forage.config import Supplies
from forage.knowledge import KnowledgeStore
from forage.protocol import EvalContract, EvaluatorPayload
from forage.sim.backend import lesson_cap
from forage.sim.policy import (
    DEFAULT_MANDATORY,
    SimPolicyParams,
    apply_decision,
    contract_terms,
    evaluator_decide,
    evaluator_payload,
    parse_briefing,
    parse_hints,
    planner_decide,
    record_in_scope,
    record_valid,
    render_contract,
    select_lessons,
)
from forage.sim.universe import HiddenUniverse, draw, norm


@dataclass
class OracleTrajectory:
    pairs: list[tuple[int, int]]
    stop_reason: str
    rounds: int
    coverages: list[float] = field(default_factory=list)
    final_dataset: list[Any] = field(default_factory=list)

    @property
    def denominators(self) -> list[int]:
        return [d for _, d in self.pairs]


def recount(dataset: Sequence[Any], contract_markdown: str, *, cap_at_collected: bool = False,
            denominator: int | None = None) -> tuple[int, int, float]:
    """(numerator, denominator, coverage) from the dataset and the published contract alone."""
    contract = EvalContract.parse(contract_markdown)
    counted, mandatory = contract_terms(contract_markdown)
    rate = float(contract.rules.get("name_match_rate", "1.0"))
    salt = contract.rules.get("name_match_salt", "")
    ids = set()
    for rec in dataset:
        if record_in_scope(rec, counted) and record_valid(rec, mandatory):
            name = str(rec["product_name"])
            ids.add(norm(name) if draw(salt, name) < rate else name)
    num = len(ids)
    den = denominator if denominator is not None else num
    if cap_at_collected:
        den = max(den, num)
    return num, den, num / den


def staged_lessons(knowledge_dir: str | Path | None, cap: int) -> list[tuple[str, str]]:
    if knowledge_dir is None or not Path(knowledge_dir).is_dir():
        return []
    store = KnowledgeStore(knowledge_dir)
    out = []
    for entry_id in select_lessons(store.index_text(), cap):
        path = Path(knowledge_dir) / f"{entry_id}.md"
        if path.is_file():
            out.append((entry_id, path.read_text(encoding="utf-8")))
    return out


def _briefing(payload: dict[str, Any], contract_md: str, version: int) -> dict[str, Any]:
    from forage.engine import build_planner_input

    parsed = EvaluatorPayload.from_dict(payload)
    text = build_planner_input(EvalContract.parse(contract_md, version), None, parsed.gap_report,
                               parsed.discovery_summary)
    return parse_briefing(text)


def oracle_trajectory(
    universe: HiddenUniverse,
    params: SimPolicyParams,
    supplies: Supplies,
    *,
    knowledge_dir: str | Path | None = None,
    mandatory: Sequence[str] = DEFAULT_MANDATORY,
    plateau_window: int = 2,
    degenerate: bool = False,
) -> OracleTrajectory:
    """Per-round (numerator, denominator) pairs a fault-free harness run must reproduce."""
    lessons = staged_lessons(knowledge_dir, lesson_cap(supplies.max_turns))
    eval_hints = parse_hints(lessons, params, "evaluator")
    plan_hints = parse_hints(lessons, params, "planner")

    dataset: list[Any] = []
    latest: dict[str, Any] | None = None
    fresh: list[tuple[int, int]] = []
    pairs: list[tuple[int, int]] = []
    coverages: list[float] = []
    contract_md = ""
    version = 0
    reason = "budget"
    rounds = 0
    for r in range(1, supplies.max_rounds + 1):
        rounds = r
        decision = evaluator_decide(universe, params, eval_hints, r, dataset, latest, mandatory)
        if decision.stop:
            pairs.append((latest["numerator"], latest["denominator"]))
            coverages.append(latest["coverage"])
            reason = "judgment"
            break
        payload = evaluator_payload(decision, degenerate=degenerate)
        new_md = render_contract(decision)
        if new_md != contract_md:
            contract_md, version = new_md, version + 1
        plan = planner_decide(universe, params, plan_hints, contract_md, dataset,
                              _briefing(payload, contract_md, version))
        dataset = apply_decision(dataset, plan)
        num, den, cov = recount(dataset, contract_md, cap_at_collected=degenerate,
                                denominator=decision.denominator)
        latest = {"numerator": num, "denominator": den, "coverage": cov}
        fresh.append((num, den))
        pairs.append((num, den))
        coverages.append(cov)
        if plateau_window > 1 and len(fresh) >= plateau_window and len(set(fresh[-plateau_window:])) == 1:
            reason = "plateau"
            break
        if r >= supplies.max_rounds:
            reason = "budget"
            break
    return OracleTrajectory(pairs, reason, rounds, coverages, dataset)

