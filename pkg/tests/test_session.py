from __future__ import annotations

import time

import pytest

from forage.backends import AgentBackend
from forage.config import resolve_supplies
from forage.errors import BackendDown, BackendError, IsolationLeak, SessionDead
from forage.leaks import LeakScanner
from forage.session import (
    Termination,
    build_trajectory_summary,
    execute_tool,
    invoke_round,
    open_session,
    replace_session,
    salvage,
)
from forage.workspace import Role, load_audit_log

PLANNER_FINAL = {"strategy_name": "curated", "action_script_written": True, "notes": ""}


class Scripted(AgentBackend):
    """Replays a fixed list of responses; callables receive the request."""

    def __init__(self, responses, down=False):
        super().__init__("scripted", "n/a")
        self.responses = list(responses)
        self.calls = 0
        self.down = down
        self.requests = []

    def ping(self):
        if self.down:
            raise BackendDown("down")

    def step(self, request):
        self.requests.append(request)
        item = self.responses[min(self.calls, len(self.responses) - 1)]
        self.calls += 1
        if isinstance(item, Exception):
            raise item
        if callable(item):
            return item(request)
        return item


def supplies(**kw):
    base = {"max_turns": 5, "round_timeout": 5.0}
    base.update(kw)
    return resolve_supplies("structured_exploration", base)


class TestTools:
    def test_read_write_list(self, layout):
        w = execute_tool(Role.PLANNER, {"tool": "write_file", "path": "plan_ws/action.py", "content": "x"}, layout)
        assert w["ok"] and w["bytes"] == 1
        r = execute_tool(Role.PLANNER, {"tool": "read_file", "path": "plan_ws/action.py"}, layout)
        assert r["content"] == "x"
        ls = execute_tool(Role.PLANNER, {"tool": "list_dir", "path": "shared"}, layout)
        assert "knowledge/" in ls["entries"] and "dataset.json" in ls["entries"]

    def test_denied_cross_read(self, layout):
        (layout.eval_ws / "eval.py").write_text("secret")
        r = execute_tool(Role.PLANNER, {"tool": "read_file", "path": "eval_ws/eval.py"}, layout)
        assert r["denied"] and not r["ok"] and "content" not in r
        assert load_audit_log(layout.audit_path)[-1].verdict == "denied"

    @pytest.mark.parametrize("action", [
        "read", {"tool": "rm", "path": "shared"}, {"tool": "write_file", "path": "shared/x"},
        {"tool": "read_file", "path": "shared/absent"}, {"tool": "list_dir", "path": "shared/dataset.json"},
        {"tool": "write_file", "path": "shared/knowledge", "content": "x"},
    ])
    def test_bad_actions(self, layout, action):
        assert not execute_tool(Role.PLANNER, action, layout)["ok"]


class TestInvokeRound:
    def test_completes(self, layout):
        backend = Scripted([
            {"action": {"tool": "read_file", "path": "shared/dataset.json"}, "usage": {"cost": 0.5}},
            {"final": PLANNER_FINAL, "usage": {"cost": 0.25, "tokens_in": 10}},
        ])
        s = open_session(Role.PLANNER, "sys", backend)
        out = invoke_round(s, "go", supplies(), layout=layout, round_no=1)
        assert out.termination is Termination.COMPLETED
        assert out.turns_used == 2
        assert out.usage.cost == pytest.approx(0.75)
        assert backend.requests[1].tool_results[0]["content"] == "[]\n"
        assert s.history[-1]["payload"] == PLANNER_FINAL and s.alive

    def test_turn_exhaustion(self, layout):
        backend = Scripted([{"action": {"tool": "list_dir", "path": "shared"}}])
        s = open_session(Role.PLANNER, "sys", backend)
        out = invoke_round(s, "go", supplies(max_turns=3), layout=layout)
        assert out.termination is Termination.TURN_EXHAUSTED
        assert out.turns_used == 3 and backend.calls == 3
        assert out.structured_response is None
        assert s.alive

    def test_denials_counted(self, layout):
        backend = Scripted([{"action": {"tool": "read_file", "path": "eval_ws/eval.py"}}, {"final": PLANNER_FINAL}])
        out = invoke_round(open_session(Role.PLANNER, "s", backend), "go", supplies(), layout=layout)
        assert out.denials == 1 and out.termination is Termination.COMPLETED

    def test_transient_error_retried_once(self, layout):
        backend = Scripted([BackendError("blip"), {"final": PLANNER_FINAL}])
        out = invoke_round(open_session(Role.PLANNER, "s", backend), "go", supplies(), layout=layout)
        assert out.termination is Termination.COMPLETED

    def test_repeated_error_kills_session(self, layout):
        backend = Scripted([BackendError("blip")])
        s = open_session(Role.PLANNER, "s", backend)
        out = invoke_round(s, "go", supplies(), layout=layout)
        assert out.termination is Termination.BACKEND_ERROR and "blip" in out.error
        assert backend.calls == 2
        assert not s.alive
        with pytest.raises(SessionDead):
            invoke_round(s, "again", supplies(), layout=layout)

    def test_timeout(self, layout):
        def slow(request):
            time.sleep(2)
            return {"final": PLANNER_FINAL}
        s = open_session(Role.PLANNER, "s", Scripted([slow]))
        t0 = time.monotonic()
        out = invoke_round(s, "go", supplies(round_timeout=0.3), layout=layout)
        assert time.monotonic() - t0 < 1.5
        assert out.termination is Termination.TIMEOUT and not s.alive

    @pytest.mark.parametrize("resp", [{"final": {"oops": 1}}, {"neither": 1}, ["not", "a", "dict"]])
    def test_invalid_responses(self, layout, resp):
        s = open_session(Role.PLANNER, "s", Scripted([resp]))
        out = invoke_round(s, "go", supplies(), layout=layout)
        assert out.termination is Termination.BACKEND_ERROR
        assert out.structured_response is None

    def test_open_requires_health(self):
        with pytest.raises(BackendDown):
            open_session(Role.PLANNER, "s", Scripted([], down=True))
        with pytest.raises(ValueError):
            open_session(Role.EXECUTOR, "s", Scripted([]))


class TestSalvage:
    def test_good_eval_script_and_metrics(self, layout):
        (layout.eval_ws / "eval.py").write_text("import json\njson.load(open('dataset.json'))\n")
        layout.metrics.write_text('{"numerator": 1, "denominator": 2, "coverage": 0.5}')
        res = salvage(layout, Role.EVALUATOR, smoke_timeout=10)
        assert set(res.artifacts) == {"eval_script", "metrics"} and res

    def test_bad_eval_script_rejected(self, layout):
        (layout.eval_ws / "eval.py").write_text("raise SystemExit(2)\n")
        res = salvage(layout, Role.EVALUATOR, smoke_timeout=10)
        assert "eval_script" in res.rejected and "metrics" in res.rejected
        assert not res

    def test_action_script_compile_check(self, layout):
        (layout.plan_ws / "action.py").write_text("def (:\n")
        assert "action_script" in salvage(layout, Role.PLANNER).rejected
        (layout.plan_ws / "action.py").write_text("print(1)\n")
        assert "action_script" in salvage(layout, Role.PLANNER).artifacts

    def test_nothing_left(self, layout):
        assert not salvage(layout, Role.PLANNER)


class TestReplacement:
    def _dead_evaluator(self, layout):
        payload = {"metrics": {"numerator": 5, "denominator": 10, "coverage": 0.5},
                   "gap_report": {"gaps": []}, "stop_decision": {"verdict": "continue"},
                   "contract_markdown": "", "discovery_summary": "series   A and B"}
        s = open_session(Role.EVALUATOR, "sys", Scripted([{"final": payload}, BackendError("x")]))
        invoke_round(s, "r1", supplies(), layout=layout, round_no=1)
        invoke_round(s, "r2", supplies(), layout=layout, round_no=2)
        assert not s.alive
        return s

    def test_summary_and_replace(self, layout):
        dead = self._dead_evaluator(layout)
        text = build_trajectory_summary(dead)
        assert "Round 1: completed; denominator estimate 10; verdict continue" in text
        assert "discovery: series A and B" in text
        assert "Round 2: backend_error; no structured response" in text
        fresh = replace_session(Role.EVALUATOR, text, Scripted([]), base_prompt="BASE", replaces=dead)
        assert fresh.replaces == dead.session_id and fresh.session_id != dead.session_id
        assert fresh.system_prompt.startswith("BASE") and text in fresh.system_prompt

    def test_live_session_not_replaceable(self, layout):
        s = open_session(Role.PLANNER, "s", Scripted([]))
        with pytest.raises(ValueError):
            replace_session(Role.PLANNER, "", Scripted([]), base_prompt="", replaces=s)

    def test_leaking_summary_blocked(self, layout):
        (layout.plan_ws / "action.py").write_text("PLANNER_ONLY_STRATEGY_CONSTANT = 12345678\n")
        scanner = LeakScanner.for_private_tree(layout, Role.PLANNER)
        with pytest.raises(IsolationLeak):
            replace_session(Role.EVALUATOR, "saw PLANNER_ONLY_STRATEGY_CONSTANT = 12345678", Scripted([]),
                            base_prompt="", scanner=scanner)
        with pytest.raises(ValueError):
            replace_session(Role.PLANNER, "x", Scripted([]), base_prompt="", scanner=scanner)
