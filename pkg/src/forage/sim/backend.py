"""Scripted agent backends driven by the policy equations.

The backends are stateless across calls: each request carries the tool
results gathered so far this round, so the next action is recomputed
from them. Knowledge is read through the jailed file tools like any
other agent would, one file per turn.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from typing import Any, Mapping, Sequence

from forage.backends import AgentBackend, BackendKind, BackendRequest
from forage.errors import BackendDown, BackendError
from forage.sim.policy import (
    DEFAULT_MANDATORY,
    SimPolicyParams,
    evaluator_decide,
    evaluator_payload,
    extract_from_narrative,
    parse_briefing,
    parse_hints,
    planner_decide,
    planner_payload,
    render_action_script,
    render_eval_script,
    select_lessons,
)
from forage.sim.universe import HiddenUniverse

UNIT_COST = 0.01
RESERVED_TURNS = 4  # two state reads, one write, one final answer


def lesson_cap(max_turns: int) -> int:
    return max(0, max_turns - RESERVED_TURNS)


def _usage(request: BackendRequest) -> dict[str, Any]:
    return {
        "tokens_in": (len(request.system_prompt) + len(request.round_input)) // 4,
        "tokens_out": 64,
        "cost": UNIT_COST,
    }


def _read(path: str) -> dict[str, Any]:
    return {"tool": "read_file", "path": path}


def _json_content(result: Mapping[str, Any] | None, default: Any) -> Any:
    if not result or not result.get("ok"):
        return default
    try:
        return json.loads(result.get("content", ""))
    except ValueError:
        return default


class _SimBase(AgentBackend):
    kind = BackendKind.SCRIPTED_SIM
    role = ""

    def __init__(self, universe: HiddenUniverse, params: SimPolicyParams, model_id: str = "sim"):
        super().__init__(model_id=f"{model_id}-{self.role}-seed{params.seed}", effort_hint="scripted")
        self.universe = universe
        self.params = params

    def _plan(self, request: BackendRequest) -> tuple[list[str], list[dict[str, Any]]]:
        from forage.engine import extract_index

        lessons = select_lessons(extract_index(request.system_prompt), lesson_cap(request.max_turns))
        return lessons, [_read(f"shared/knowledge/{i}.md") for i in lessons]

    def _lessons(self, ids: Sequence[str], results: Sequence[Mapping[str, Any]]) -> list[tuple[str, str]]:
        return [(i, r.get("content", "")) for i, r in zip(ids, results) if r.get("ok")]

    def step(self, request: BackendRequest) -> dict[str, Any]:
        if request.phase == "postmortem":
            lessons = extract_from_narrative(self.role, request.round_input)
            return {"final": {"lessons": lessons}, "usage": _usage(request)}
        return {**self._round_step(request), "usage": _usage(request)}

    def _round_step(self, request: BackendRequest) -> dict[str, Any]:
        raise NotImplementedError


class SimEvaluatorBackend(_SimBase):
    """Scripted Evaluator. With ``degenerate`` its eval script caps the denominator at the collected count."""

    role = "evaluator"

    def __init__(self, universe: HiddenUniverse, params: SimPolicyParams,
                 mandatory: Sequence[str] = DEFAULT_MANDATORY, *, degenerate: bool = False):
        super().__init__(universe, params)
        self.mandatory = tuple(mandatory) or DEFAULT_MANDATORY
        self.degenerate = degenerate

    def decide(self, request: BackendRequest):
        ids, reads = self._plan(request)
        results = request.tool_results
        n = len(reads)
        metrics = _json_content(results[n] if len(results) > n else None, None)
        if not isinstance(metrics, dict) or "denominator" not in metrics:
            metrics = None
        dataset = _json_content(results[n + 1] if len(results) > n + 1 else None, [])
        if not isinstance(dataset, list):
            dataset = []
        hints = parse_hints(self._lessons(ids, results[:n]), self.params, "evaluator")
        return evaluator_decide(self.universe, self.params, hints, request.round_no, dataset, metrics,
                                self.mandatory)

    def _round_step(self, request: BackendRequest) -> dict[str, Any]:
        _, reads = self._plan(request)
        plan = reads + [_read("shared/metrics.json"), _read("shared/dataset.json")]
        done = len(request.tool_results)
        if done < len(plan):
            return {"action": plan[done]}
        decision = self.decide(request)
        if done == len(plan):
            script = render_eval_script(decision, self.params, degenerate=self.degenerate)
            return {"action": {"tool": "write_file", "path": "eval_ws/eval.py", "content": script}}
        return {"final": evaluator_payload(decision, degenerate=self.degenerate)}


class SimPlannerBackend(_SimBase):
    role = "planner"

    def decide(self, request: BackendRequest):
        ids, reads = self._plan(request)
        results = request.tool_results
        n = len(reads)
        contract = results[n].get("content", "") if len(results) > n and results[n].get("ok") else ""
        dataset = _json_content(results[n + 1] if len(results) > n + 1 else None, [])
        if not isinstance(dataset, list):
            dataset = []
        hints = parse_hints(self._lessons(ids, results[:n]), self.params, "planner")
        return planner_decide(self.universe, self.params, hints, contract, dataset,
                              parse_briefing(request.round_input))

    def action_script(self, request: BackendRequest) -> str:
        return render_action_script(self.decide(request), self.params)

    def _round_step(self, request: BackendRequest) -> dict[str, Any]:
        _, reads = self._plan(request)
        plan = reads + [_read("shared/eval_contract.md"), _read("shared/dataset.json")]
        done = len(request.tool_results)
        if done < len(plan):
            return {"action": plan[done]}
        if done == len(plan):
            return {"action": {"tool": "write_file", "path": "plan_ws/action.py",
                               "content": self.action_script(request)}}
        return {"final": planner_payload(self.decide(request), written=True)}


# --- wrappers for failure injection and isolation probing ---------------------

FAULT_MODES = ("error", "hang", "exhaust", "invalid", "no_script", "crash_script", "die_after_write",
               "runaway", "down")

RUNAWAY_MARKER = "forage-runaway-child"


def runaway_script(marker: str = RUNAWAY_MARKER) -> str:
    return (
        "import subprocess, sys, time\n"
        f"subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(120)', {marker!r}])\n"
        "time.sleep(120)\n"
    )


class FaultyBackend(AgentBackend):
    """Wraps a backend and injects one fault mode per listed round.

    ``down`` fails the round and every later health check, so the role
    cannot be replaced.
    """

    def __init__(self, inner: AgentBackend, faults: Mapping[int, str], *, hang_seconds: float = 3.0,
                 marker: str = RUNAWAY_MARKER):
        super().__init__(inner.model_id, inner.effort_hint)
        self.kind = inner.kind
        self.inner = inner
        self.faults = dict(faults)
        self.hang_seconds = hang_seconds
        self.marker = marker
        self.is_down = False
        for mode in self.faults.values():
            if mode not in FAULT_MODES:
                raise ValueError(f"unknown fault mode {mode!r}")

    def ping(self) -> None:
        if self.is_down:
            raise BackendDown("injected outage")
        self.inner.ping()

    def step(self, request: BackendRequest) -> dict[str, Any]:
        mode = self.faults.get(request.round_no) if request.phase == "round" else None
        if self.is_down:
            raise BackendError("injected outage")
        if mode is None:
            return self.inner.step(request)
        if mode == "down":
            self.is_down = True
            raise BackendError("injected outage")
        if mode == "error":
            raise BackendError("injected transport failure")
        if mode == "hang":
            time.sleep(self.hang_seconds)
            return self.inner.step(request)
        if mode == "exhaust":
            return {"action": {"tool": "list_dir", "path": "shared"}, "usage": _usage(request)}
        if mode == "invalid":
            return {"final": {"unexpected": True}, "usage": _usage(request)}
        if mode == "no_script":
            return {"final": {"strategy_name": "abandoned", "action_script_written": False,
                              "notes": "no script this round"}, "usage": _usage(request)}
        if mode == "die_after_write":
            if any(r.get("tool") == "write_file" and r.get("ok") for r in request.tool_results):
                raise BackendError("injected failure after writing")
            return self.inner.step(request)
        response = self.inner.step(request)
        action = response.get("action")
        if isinstance(action, dict) and action.get("tool") == "write_file":
            if mode == "crash_script":
                action = {**action, "content": "raise SystemExit(3)\n"}
            elif mode == "runaway":
                action = {**action, "content": runaway_script(self.marker)}
            response = {**response, "action": action}
        return response

    def describe(self) -> dict[str, str]:
        return {**self.inner.describe(), "faults": json.dumps(self.faults, sort_keys=True)}


PROBE_PATHS = ("eval_ws/eval.py", "shared/../eval_ws/eval.py", "plan_ws/../eval_ws")

EXECUTOR_PROBE = (
    "import os as _os\n"
    "try:\n"
    "    open(_os.path.join(_os.getcwd(), '..', '..', '..', 'eval_ws', 'eval.py')).read()\n"
    "except OSError:\n"
    "    pass\n"
)


class BreachProbePlanner(AgentBackend):
    """A planner that tries to read the Evaluator's workspace every round before working normally."""

    def __init__(self, inner: AgentBackend, probes: Sequence[str] = PROBE_PATHS):
        super().__init__(inner.model_id, inner.effort_hint)
        self.kind = inner.kind
        self.inner = inner
        self.probes = tuple(probes)

    def ping(self) -> None:
        self.inner.ping()

    def step(self, request: BackendRequest) -> dict[str, Any]:
        if request.phase != "round":
            return self.inner.step(request)
        done = len(request.tool_results)
        if done < len(self.probes):
            return {"action": _read(self.probes[done]), "usage": _usage(request)}
        response = self.inner.step(replace(request, tool_results=request.tool_results[len(self.probes):]))
        action = response.get("action")
        if isinstance(action, dict) and action.get("tool") == "write_file":
            response = {**response, "action": {**action, "content": EXECUTOR_PROBE + action["content"]}}
        return response

    def describe(self) -> dict[str, str]:
        return {**self.inner.describe(), "probe": "breach"}
