from __future__ import annotations

import json
import math
import statistics

import pytest

from forage.errors import NoData, RecorderOrderViolation
from forage.trajectory import (
    CostReport,
    Recorder,
    RoundRecord,
    RunSummary,
    StopReason,
    aggregate_condition,
    load_costs,
    load_summary,
    load_trajectory,
    render_condition_table,
    render_run_table,
    summarize_run,
)


def rec(r, num=None, den=None):
    metrics = None if num is None else {"numerator": num, "denominator": den, "coverage": num / den}
    return RoundRecord(r, None, None, [], metrics, 1, metrics is None, 0)


def summary(run_id, den, cov, cost, rounds=4):
    return RunSummary(run_id, rounds, den, cov, [den] * rounds, cost, 0, 0, StopReason.JUDGMENT)


class TestRecorder:
    def test_append_and_load(self, tmp_path):
        r = Recorder(tmp_path)
        for i in (1, 2, 3):
            r.record_round(rec(i, i, 10))
        assert [x.round_no for x in load_trajectory(tmp_path)] == [1, 2, 3]
        assert load_trajectory(tmp_path)[1] == rec(2, 2, 10)

    def test_order_enforced(self, tmp_path):
        r = Recorder(tmp_path)
        r.record_round(rec(2))
        with pytest.raises(RecorderOrderViolation):
            r.record_round(rec(2))
        with pytest.raises(RecorderOrderViolation):
            Recorder(tmp_path).record_round(rec(1))

    def test_torn_tail_ignored(self, tmp_path):
        r = Recorder(tmp_path)
        r.record_round(rec(1, 1, 2))
        with open(tmp_path / "trajectory.jsonl", "a") as fh:
            fh.write('{"round_no": 2, "evalu')
        assert [x.round_no for x in load_trajectory(tmp_path)] == [1]

    def test_summary_and_costs_round_trip(self, tmp_path):
        r = Recorder(tmp_path)
        s = summary("a", 266, 1.0, 5.13)
        r.write_summary(s)
        c = CostReport([1.0, 2.5])
        c.add_usage("planner", {"tokens_in": 3, "cost": 0.5})
        r.write_costs(c)
        assert load_summary(tmp_path) == s
        assert load_summary(tmp_path / "summary.json") == s
        assert load_costs(tmp_path).total == 3.5
        assert json.loads((tmp_path / "costs.json").read_text())["usage_breakdown"]["planner"]["tokens_in"] == 3


class TestSummarize:
    def test_trajectories(self):
        recs = [rec(1, 254, 285), rec(2, 280, 285), rec(3), rec(4, 285, 285)]
        s = summarize_run("run_001", recs, CostReport([1, 2, 0, 2.61]), 0, 8, "plateau")
        assert s.denominator_trajectory == [285, 285, None, 285]
        assert s.final_coverage == 1.0 and s.final_denominator == 285
        assert s.cost_total == pytest.approx(5.61)
        assert s.trajectory_text() == "285→285→-→285"
        assert s.stop_reason is StopReason.PLATEAU

    def test_no_metrics(self):
        s = summarize_run("x", [rec(1)], CostReport(), 0, 0, StopReason.ABORTED)
        assert s.final_coverage is None and s.final_denominator is None


class TestAggregate:
    def test_statistics_oracle(self):
        runs = [summary("a", 270, 0.9, 4.0, 3), summary("b", 300, 1.0, 6.0, 5)]
        r = aggregate_condition(runs, "c")
        assert r.coverage_mean == pytest.approx(0.95)
        assert (r.coverage_min, r.coverage_max) == (0.9, 1.0)
        assert r.cost_mean == 5.0 and r.cost_std == pytest.approx(1.0)  # population std of {4, 6}
        assert r.rounds_mean == 4.0
        assert (r.denom_min, r.denom_max, r.spread) == (270, 300, 30)
        assert r.spread_pct == pytest.approx(100 * 30 / 270)

    def test_single_run(self):
        r = aggregate_condition([summary("a", 266, 1.0, 5.0)])
        assert r.cost_std == 0.0 and r.spread == 0 and r.spread_pct == 0.0

    def test_empty(self):
        with pytest.raises(NoData):
            aggregate_condition([])

    def test_missing_metrics(self):
        r = aggregate_condition([RunSummary("a", 1, None, None, [None], 1.0, 0, 0, "aborted")])
        assert r.coverage_mean is None and r.spread is None and r.spread_pct is None

    def test_zero_denominator_spread(self):
        r = aggregate_condition([summary("a", 0, None, 1.0), summary("b", 5, None, 1.0)])
        assert math.isnan(r.spread_pct)

    def test_tables(self):
        runs = [summary("run_001", 285, 1.0, 5.61), summary("run_002", 303, 0.98, 5.72)]
        table = render_run_table(runs)
        assert "run_001" in table and "$5.61" in table and "285→285→285→285" in table
        cond = render_condition_table([aggregate_condition(runs, "seeded")])
        assert "285–303" in cond and "18 (6%)" in cond
        assert f"${statistics.pstdev([5.61, 5.72]):.2f}" in cond
