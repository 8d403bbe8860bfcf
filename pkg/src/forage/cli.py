"""Command-line entry points: run, seed, postmortem, report and audit.

Exit codes: 0 success, 1 nothing to report, 2 configuration error,
3 aborted run, 4 guard violation.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from forage.config import Effort, TaskSpec, load_task_spec, resolve_supplies
from forage.errors import BackendDown, ConfigError, DuplicateRun, GuardViolation, NoData, RunAborted, SeedUnavailable
from forage.workspace import Role

EXIT_OK = 0
EXIT_NODATA = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_GUARD = 4

DEFAULT_SIM_SEED = 7

log = logging.getLogger("forage")


def _resolve_task(value: str | None) -> TaskSpec:
    from forage.sim.fixtures import builtin_task

    if value is None:
        return builtin_task()
    path = Path(value)
    if path.exists():
        return load_task_spec(path)
    name = path.stem if path.suffix in (".yaml", ".yml") else value
    try:
        return builtin_task(name)
    except FileNotFoundError:
        raise ConfigError(f"task file {value!r} not found") from None


def _llm_backends(model: str | None, effort: str) -> dict[Role, Any]:
    from forage.backends import LLMEndpointBackend

    if not model:
        raise ConfigError("--backend llm needs --model")
    return {role: LLMEndpointBackend(model, effort) for role in (Role.EVALUATOR, Role.PLANNER)}


def _sim_setup(args: argparse.Namespace, task: TaskSpec):
    from forage.sim.fixtures import load_grid, sim_backends

    grid = load_grid()
    if args.fixture:
        try:
            fx = grid.run(args.fixture)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        if fx.condition == "seeded" and not args.seed_knowledge:
            raise ConfigError(f"fixture {fx.name} is seeded; pass --seed-knowledge")
        universe, params = grid.universe(fx.universe), grid.params(fx.policy, fx.seed)
    else:
        universe = grid.universe("u270")
        params = grid.params("weak", args.sim_seed)
    return grid, sim_backends(universe, params, task.required_fields)


def cmd_run(args: argparse.Namespace) -> int:
    from forage.engine import RoundEngine

    task = _resolve_task(args.task)
    overrides = dict(task.supply_overrides)
    grid = None
    if args.backend == "sim":
        grid, backends = _sim_setup(args, task)
        overrides.update(grid.supplies)
    else:
        backends = _llm_backends(args.model, args.effort or "medium")
    overrides.update({"max_rounds": args.rounds, "max_turns": args.turns, "round_timeout": args.timeout,
                      "effort": args.effort})
    supplies = resolve_supplies(task.task_kind, overrides)
    engine = RoundEngine(
        task, supplies, backends, args.seed_knowledge,
        experiment_root=args.out, run_id=args.run_id or args.fixture, lineage=args.lineage,
        plateau_window=grid.plateau_window if grid is not None else 2,
        label=args.label or (args.fixture.rsplit("-", 1)[-1] if args.fixture else ""),
    )
    try:
        result = engine.execute()
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        if engine.layout is not None:
            print(f"partial trajectory kept under {engine.layout.root}", file=sys.stderr)
        return EXIT_ABORTED
    s = result.summary
    cov = "n/a" if s.final_coverage is None else f"{100 * s.final_coverage:.1f}%"
    print(f"run root:     {result.layout.root}")
    print(f"rounds:       {s.rounds} ({s.stop_reason.value})")
    print(f"coverage:     {cov}")
    print(f"denominator:  {s.final_denominator} [{s.trajectory_text()}]")
    print(f"cost:         ${s.cost_total:.2f}")
    print(f"knowledge:    {s.knowledge_before}→{s.knowledge_after}")
    return EXIT_OK


def cmd_seed(args: argparse.Namespace) -> int:
    from forage.knowledge import KnowledgeStore, seed_from

    store = KnowledgeStore(args.dest)
    copied = seed_from(args.source, store)
    print(f"copied {copied} entries into {args.dest} ({len(store)} total)")
    return EXIT_OK


def cmd_postmortem(args: argparse.Namespace) -> int:
    from forage.postmortem import rerun_postmortem

    run_root = Path(args.run_root)
    meta_path = run_root / "run.json"
    if not meta_path.is_file():
        raise NoData(f"{run_root} has no run.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    supplies_doc = dict(meta.get("supplies", {}))
    task = _resolve_task(str(run_root / "task.yaml"))
    supplies = resolve_supplies(task.task_kind, supplies_doc)
    if args.backend == "sim":
        _, backends = _sim_setup(args, task)
    else:
        backends = _llm_backends(args.model, args.effort or "medium")
    stored = rerun_postmortem(run_root, backends, args.out, supplies)
    print(f"stored {len(stored)} lessons in {args.out}")
    for entry_id in stored:
        print(f"  {entry_id}")
    return EXIT_OK


def _find_summaries(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("summary.json") if p.is_file())


def _label(summary_path: Path) -> str:
    meta = summary_path.parent / "run.json"
    if meta.is_file():
        try:
            return json.loads(meta.read_text(encoding="utf-8")).get("label") or "all"
        except ValueError:
            pass
    return "all"


def cmd_report(args: argparse.Namespace) -> int:
    from forage.trajectory import aggregate_condition, load_summary, render_condition_table, render_run_table

    root = Path(args.root)
    paths = _find_summaries(root) if root.is_dir() else []
    if not paths:
        raise NoData(f"no summary.json under {root}")
    summaries = [(p, load_summary(p)) for p in paths]
    groups: dict[str, list] = {}
    if args.condition:
        for spec in args.condition:
            name, _, pattern = spec.partition("=")
            pattern = pattern or name
            groups[name] = [s for p, s in summaries
                            if fnmatch.fnmatch(s.run_id, pattern) or fnmatch.fnmatch(p.parent.name, pattern)]
    else:
        for p, s in summaries:
            groups.setdefault(_label(p), []).append(s)
    reports = [aggregate_condition(runs, name) for name, runs in groups.items() if runs]
    if not reports:
        raise NoData("no runs matched the requested conditions")
    print(render_run_table([s for _, s in summaries]))
    print()
    print(render_condition_table(reports))
    out = Path(args.json) if args.json else root / "report.json"
    doc = {"runs": [s.to_dict() for _, s in summaries], "conditions": [r.to_dict() for r in reports]}
    out.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    print(f"\nmachine-readable report: {out}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    from forage.workspace import detect_breach, load_audit_log

    path = Path(args.run_root) / "audit.log"
    if not path.is_file():
        raise NoData(f"{path} does not exist")
    try:
        report = detect_breach(load_audit_log(path))
    except GuardViolation as exc:
        print(f"GUARD VIOLATION: {exc}")
        return EXIT_GUARD
    print(report.render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forage", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def backend_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--backend", choices=("sim", "llm"), default="sim")
        p.add_argument("--model", help="model id for --backend llm")
        p.add_argument("--effort", choices=[e.value for e in Effort])
        p.add_argument("--fixture", help="grid entry to run with --backend sim, e.g. seed7-cold")
        p.add_argument("--sim-seed", type=int, default=DEFAULT_SIM_SEED,
                       help="policy seed when --backend sim is used without --fixture")
        p.add_argument("--seed-knowledge", help="knowledge directory to stage before the run")

    p = sub.add_parser("run", help="execute one run")
    p.add_argument("--task", help="task file, or a built-in task name (nvidia, uniprot, q10)")
    backend_flags(p)
    p.add_argument("--rounds", type=int, help="max rounds")
    p.add_argument("--turns", type=int, help="max turns per round")
    p.add_argument("--timeout", type=float, help="round timeout in seconds")
    p.add_argument("--out", default="experiments", help="experiment root")
    p.add_argument("--lineage", help="lineage store that receives this run's lessons")
    p.add_argument("--run-id")
    p.add_argument("--label", help="condition label recorded in run.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("seed", help="copy a knowledge store into another")
    p.add_argument("source")
    p.add_argument("dest")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("postmortem", help="extract lessons again from a finished run")
    p.add_argument("run_root")
    p.add_argument("--out", required=True, help="knowledge directory to append to")
    backend_flags(p)
    p.set_defaults(func=cmd_postmortem)

    p = sub.add_parser("report", help="condition tables over finished runs")
    p.add_argument("root", help="experiment root to search for summary.json files")
    p.add_argument("--condition", action="append",
                   help="NAME=GLOB over run ids; repeatable. Default groups by run label")
    p.add_argument("--json", help="where to write the machine-readable report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("audit", help="summarize a run's access log")
    p.add_argument("run_root")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DuplicateRun, SeedUnavailable, BackendDown) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoData as exc:
        print(f"no data: {exc}", file=sys.stderr)
        return EXIT_NODATA
    except GuardViolation as exc:
        print(f"GUARD VIOLATION: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
