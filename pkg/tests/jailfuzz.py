"""Path-jail fuzzing shared by the workspace tests and the acceptance suite.

The oracle walks the requested path component by component against a
table of the symlinks it planted itself, so it never calls realpath.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

from forage.errors import IsolationDenied
from forage.workspace import Role, WorkspaceLayout, resolve_path

VOCAB = ("shared", "eval_ws", "plan_ws", "..", ".", "knowledge", "to_eval", "up", "loop", "out",
         "a", "eval.py", "action.py", "dataset.json", "run_001", "", "audit.log")

ALLOWED = {
    (Role.EVALUATOR, "r"): ("eval_ws", "shared"),
    (Role.EVALUATOR, "w"): ("eval_ws", "shared"),
    (Role.PLANNER, "r"): ("plan_ws", "shared"),
    (Role.PLANNER, "w"): ("plan_ws", "shared"),
    (Role.EXECUTOR, "r"): ("shared", "eval_ws", "plan_ws"),
    (Role.EXECUTOR, "w"): ("shared",),
}


@dataclass
class Jail:
    layout: WorkspaceLayout
    root: str
    outside: str
    links: dict[str, str]


def plant(layout: WorkspaceLayout, outside: str) -> Jail:
    """Plant symlinks that point back in, across and out of the run root."""
    root = os.path.realpath(layout.root)
    outside = os.path.realpath(outside)
    os.makedirs(outside, exist_ok=True)
    (layout.eval_ws / "eval.py").write_text("x = 1\n")
    (layout.plan_ws / "action.py").write_text("y = 2\n")
    spec = {
        os.path.join(root, "shared", "to_eval"): (os.path.join(root, "eval_ws"), os.path.join(root, "eval_ws")),
        os.path.join(root, "plan_ws", "up"): ("..", root),
        os.path.join(root, "shared", "knowledge", "loop"): ("../knowledge", os.path.join(root, "shared", "knowledge")),
        os.path.join(root, "eval_ws", "out"): (outside, outside),
        os.path.join(root, "shared", "out"): (outside, outside),
    }
    links = {}
    for path, (target, resolved) in spec.items():
        os.symlink(target, path)
        links[path] = resolved
    return Jail(layout, root, outside, links)


def oracle_resolve(jail: Jail, requested: str) -> str:
    start = requested if requested.startswith("/") else jail.root + "/" + requested
    parts: list[str] = []
    for comp in start.split("/"):
        if comp in ("", "."):
            continue
        if comp == "..":
            if parts:
                parts.pop()
            continue
        parts.append(comp)
        here = "/" + "/".join(parts)
        if here in jail.links:
            parts = [p for p in jail.links[here].split("/") if p]
    return "/" + "/".join(parts)


def oracle_allowed(jail: Jail, role: Role, mode: str, requested: str) -> bool:
    if requested == "" or "\x00" in requested:
        return False
    real = oracle_resolve(jail, requested)
    for sub in ALLOWED[(role, mode)]:
        base = jail.root + "/" + sub
        if real == base or real.startswith(base + "/"):
            return True
    return False


def random_request(rng: random.Random, jail: Jail) -> str:
    comps = [rng.choice(VOCAB) for _ in range(rng.randint(0, 7))]
    path = "/".join(comps)
    roll = rng.random()
    if roll < 0.15:
        path = jail.root + "/" + path
    elif roll < 0.2:
        path = jail.outside + "/" + path
    elif roll < 0.22:
        path = path + "\x00"
    return path


def check_one(jail: Jail, role: Role, mode: str, requested: str) -> str | None:
    """None when the guard agrees with the oracle, otherwise a description of the mismatch."""
    expected = oracle_allowed(jail, role, mode, requested)
    try:
        got = resolve_path(role, requested, jail.layout, mode=mode)
    except IsolationDenied:
        return None if not expected else f"{role.value} {mode} {requested!r}: denied, oracle allows"
    if not expected:
        return f"{role.value} {mode} {requested!r}: allowed as {got}, oracle denies"
    if str(got) != oracle_resolve(jail, requested):
        return f"{role.value} {mode} {requested!r}: resolved to {got}"
    return None


def fuzz(jail: Jail, n: int, seed: int = 0) -> list[str]:
    rng = random.Random(seed)
    failures = []
    for _ in range(n):
        role = rng.choice(list(Role))
        mode = rng.choice("rw")
        msg = check_one(jail, role, mode, random_request(rng, jail))
        if msg:
            failures.append(msg)
    return failures
