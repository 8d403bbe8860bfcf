from __future__ import annotations

from pathlib import Path

import pytest

from forage.config import resolve_supplies
from forage.sim.fixtures import build_lineage, builtin_task, load_grid, run_fixture
from forage.workspace import provision_run

FIXTURES = Path(__file__).parent / "fixtures"
APPENDIX_KB = FIXTURES / "knowledge_appendix"
REPO = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def grid():
    return load_grid()


@pytest.fixture(scope="session")
def nvidia_task():
    return builtin_task("nvidia")


@pytest.fixture
def layout(tmp_path):
    return provision_run("run_001", experiment_root=tmp_path / "exp")


@pytest.fixture
def fast_supplies():
    return resolve_supplies("structured_exploration", {"round_timeout": 20, "eval_timeout": 20, "max_rounds": 8})


@pytest.fixture(scope="session")
def lineages(grid, tmp_path_factory):
    """Seed stores built by the lineage policy, one per universe."""
    root = tmp_path_factory.mktemp("lineages")
    out = {}
    for name in grid.universes:
        build_lineage(grid, name, root / f"kb-{name}", root / "runs")
        out[name] = root / f"kb-{name}"
    return out


@pytest.fixture(scope="session")
def grid_runs(grid, lineages, tmp_path_factory):
    """Every grid entry executed once through the full harness."""
    root = tmp_path_factory.mktemp("grid")
    results = {}
    for fx in grid.runs:
        seed = lineages[fx.universe] if fx.condition == "seeded" else None
        results[fx.name] = run_fixture(grid, fx.name, root, seed_dir=seed)
    return results
