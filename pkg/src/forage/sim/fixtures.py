"""Loading the shipped fixture grid and running its entries through the harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from forage.config import Supplies, TaskSpec, parse_task_spec, resolve_supplies
from forage.sim.backend import SimEvaluatorBackend, SimPlannerBackend
from forage.sim.oracle import OracleTrajectory, oracle_trajectory
from forage.sim.policy import DEFAULT_MANDATORY, SimPolicyParams
from forage.sim.universe import HiddenUniverse, gen_universe
from forage.workspace import Role

PRIMARY_UNIVERSE = "u270"


def builtin_task(name: str = "nvidia") -> TaskSpec:
    text = resources.files("forage").joinpath("data", "tasks", f"{name}.yaml").read_text(encoding="utf-8")
    return parse_task_spec(text, f"{name}.yaml")


def _grid_text() -> str:
    return resources.files("forage.sim").joinpath("grid.yaml").read_text(encoding="utf-8")


@dataclass(frozen=True)
class FixtureRun:
    name: str
    universe: str
    seed: int
    condition: str  # "cold" or "seeded"
    policy: str


@dataclass
class Grid:
    universes: dict[str, dict[str, int]]
    policies: dict[str, dict[str, float]]
    supplies: dict[str, Any]
    plateau_window: int
    lineage_policy: str
    lineage_seeds: tuple[int, ...]
    runs: list[FixtureRun]
    _cache: dict[str, HiddenUniverse] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Grid":
        spec = doc["runs"]
        runs = []
        for u in spec["universes"]:
            for seed in spec["seeds"]:
                for cond in spec["conditions"]:
                    prefix = "" if u == PRIMARY_UNIVERSE else f"{u}-"
                    runs.append(FixtureRun(f"{prefix}seed{seed}-{cond}", u, int(seed), cond, spec["policy"]))
        return cls(
            universes={k: dict(v) for k, v in doc["universes"].items()},
            policies={k: dict(v) for k, v in doc["policies"].items()},
            supplies=dict(doc["supplies"]),
            plateau_window=int(doc.get("plateau_window", 2)),
            lineage_policy=doc["lineage"]["policy"],
            lineage_seeds=tuple(int(s) for s in doc["lineage"]["seeds"]),
            runs=runs,
        )

    def universe(self, name: str) -> HiddenUniverse:
        if name not in self._cache:
            u = self.universes[name]
            self._cache[name] = gen_universe(u["seed"], u["n_items"], u["n_sources"])
        return self._cache[name]

    def params(self, policy: str, seed: int) -> SimPolicyParams:
        return SimPolicyParams(seed=seed, **self.policies[policy])

    def supplies_for(self, task: TaskSpec | None = None, **overrides: Any) -> Supplies:
        kind = task.task_kind if task is not None else "structured_exploration"
        return resolve_supplies(kind, {**self.supplies, **overrides})

    def run(self, name: str) -> FixtureRun:
        for r in self.runs:
            if r.name == name:
                return r
        raise KeyError(f"no fixture named {name!r}; known: {', '.join(r.name for r in self.runs)}")


def load_grid(path: str | Path | None = None) -> Grid:
    text = Path(path).read_text(encoding="utf-8") if path is not None else _grid_text()
    return Grid.from_dict(yaml.safe_load(text))


def sim_backends(universe: HiddenUniverse, params: SimPolicyParams,
                 mandatory: Sequence[str] = DEFAULT_MANDATORY, *, degenerate: bool = False) -> dict[Role, Any]:
    return {
        Role.EVALUATOR: SimEvaluatorBackend(universe, params, mandatory, degenerate=degenerate),
        Role.PLANNER: SimPlannerBackend(universe, params),
    }


def harness_pairs(records: Sequence[Any]) -> list[tuple[int, int]]:
    """Per-round (numerator, denominator) pairs from recorded rounds; None where no metrics exist."""
    out = []
    for rec in records:
        m = rec.metrics if hasattr(rec, "metrics") else rec.get("metrics")
        out.append(None if m is None else (m["numerator"], m["denominator"]))
    return out


def build_lineage(grid: Grid, universe_name: str, lineage_dir: str | Path, experiment_root: str | Path,
                  task: TaskSpec | None = None) -> list[Any]:
    """Run the lineage policy once per lineage seed, accumulating lessons in ``lineage_dir``."""
    from forage.engine import RoundEngine

    task = task or builtin_task()
    universe = grid.universe(universe_name)
    summaries = []
    for seed in grid.lineage_seeds:
        params = grid.params(grid.lineage_policy, seed)
        engine = RoundEngine(
            task, grid.supplies_for(task), sim_backends(universe, params, task.required_fields),
            experiment_root=experiment_root, run_id=f"lineage-{universe_name}-seed{seed}",
            lineage=lineage_dir, plateau_window=grid.plateau_window, label="lineage",
        )
        summaries.append(engine.execute().summary)
    return summaries


def run_fixture(grid: Grid, name: str, experiment_root: str | Path, *, seed_dir: str | Path | None = None,
                task: TaskSpec | None = None, run_id: str | None = None, **engine_kw: Any):
    """Run one grid entry through the full harness. Seeded entries need ``seed_dir``."""
    from forage.engine import RoundEngine

    fx = grid.run(name)
    if fx.condition == "seeded" and seed_dir is None:
        raise ValueError(f"{name} is a seeded fixture; pass seed_dir")
    task = task or builtin_task()
    universe = grid.universe(fx.universe)
    params = grid.params(fx.policy, fx.seed)
    backends = engine_kw.pop("backends", None) or sim_backends(universe, params, task.required_fields)
    engine = RoundEngine(
        task, grid.supplies_for(task), backends, seed_dir if fx.condition == "seeded" else None,
        experiment_root=experiment_root, run_id=run_id or name, plateau_window=grid.plateau_window,
        label=fx.condition, **engine_kw,
    )
    return engine.execute()


def fixture_oracle(grid: Grid, name: str, *, seed_dir: str | Path | None = None,
                   task: TaskSpec | None = None) -> OracleTrajectory:
    fx = grid.run(name)
    task = task or builtin_task()
    return oracle_trajectory(
        grid.universe(fx.universe), grid.params(fx.policy, fx.seed), grid.supplies_for(task),
        knowledge_dir=seed_dir if fx.condition == "seeded" else None,
        mandatory=task.required_fields or DEFAULT_MANDATORY, plateau_window=grid.plateau_window,
    )
