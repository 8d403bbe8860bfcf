from __future__ import annotations

import os
import signal
import subprocess
import sys
import textwrap
import time

from conftest import REPO
from forage.trajectory import TRAJECTORY_FILE, load_trajectory

DRIVER = textwrap.dedent("""
    import sys
    from forage.sim import FaultyBackend
    from forage.sim.fixtures import builtin_task, load_grid, run_fixture, sim_backends
    from forage.workspace import Role

    grid = load_grid()
    task = builtin_task()
    backends = sim_backends(grid.universe("u60"), grid.params("weak", 7), task.required_fields)
    backends[Role.PLANNER] = FaultyBackend(backends[Role.PLANNER], {3: "hang"}, hang_seconds=120)
    run_fixture(grid, "u60-seed7-cold", sys.argv[1], run_id="killed")
""")


class TestKilledRun:
    def test_trajectory_survives_sigkill(self, tmp_path):
        env = {**os.environ, "PYTHONPATH": str(REPO / "src")}
        proc = subprocess.Popen([sys.executable, "-c", DRIVER, str(tmp_path)], env=env,
                                start_new_session=True)
        path = tmp_path / "killed" / TRAJECTORY_FILE
        deadline = time.monotonic() + 60
        try:
            while time.monotonic() < deadline:
                if path.exists() and len(path.read_text().splitlines()) >= 2:
                    break
                assert proc.poll() is None, "driver exited early"
                time.sleep(0.05)
            else:
                raise AssertionError("two rounds were never recorded")
        finally:
            os.killpg(proc.pid, signal.SIGKILL)
            proc.wait()
        records = load_trajectory(tmp_path / "killed")
        assert [r.round_no for r in records] == [1, 2]
        assert all(r.metrics is not None for r in records)
        assert not (tmp_path / "killed" / "summary.json").exists()
