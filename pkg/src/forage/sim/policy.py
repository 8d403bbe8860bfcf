"""Closed-form scripted policies for the simulated Evaluator and Planner.

Each decision is a pure function of the universe, the policy parameters,
the adopted lesson hints and what the role can observe this round. The
harness backends and the independent oracle both call these functions;
only the oracle skips the sessions, the jail and the subprocess sandbox.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from forage.knowledge import parse_index, split_version
from forage.sim.universe import HiddenUniverse, Item, Reliability, draw, norm, perceive

DEFAULT_MANDATORY = ("product_name",)
RECORD_FIELDS = ("product_name", "chip_name", "release_date", "variant_class", "source")
HINT_RE = re.compile(r"^hint:\s*(?P<key>[a-z_]+)\s*=\s*(?P<value>.*?)\s*$", re.MULTILINE)
EVAL_HINT_KEYS = ("definition", "dedup", "blocked_source", "source_map")
PLAN_HINT_KEYS = ("curated_baseline", "dedup")
NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven", 8: "eight",
                9: "nine", 10: "ten"}


@dataclass(frozen=True)
class SimPolicyParams:
    seed: int = 0
    explore_rate: float = 0.3
    dedup_skill: float = 0.8
    knowledge_adoption: float = 1.0
    stop_confidence: float = 0.97
    parse_skill: float = 1.0

    def __post_init__(self):
        for name in ("explore_rate", "dedup_skill", "knowledge_adoption", "stop_confidence", "parse_skill"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def eval_salt(self) -> str:
        return f"{self.seed}:eval"

    @property
    def plan_salt(self) -> str:
        return f"{self.seed}:plan"


# --- knowledge -------------------------------------------------------------


def select_lessons(index_text: str, cap: int) -> list[str]:
    """Latest version of each lesson family, in index order, at most ``cap``."""
    if cap <= 0 or not index_text.strip():
        return []
    doc = parse_index(index_text)
    latest: dict[str, tuple[int, str]] = {}
    order: list[str] = []
    for rows in doc.sections.values():
        for entry_id, _summary in rows:
            base, version = split_version(entry_id)
            if base not in latest:
                order.append(base)
            if base not in latest or version > latest[base][0]:
                latest[base] = (version, entry_id)
    return [latest[b][1] for b in order][:cap]


@dataclass(frozen=True)
class Hints:
    definition: tuple[str, ...] | None = None
    dedup_normalized: bool = False
    blocked: frozenset[str] = frozenset()
    source_map: tuple[str, ...] = ()
    curated_baseline: bool = False
    adopted: tuple[str, ...] = ()


def _split_list(value: str) -> tuple[str, ...]:
    if value.strip() in ("", "none"):
        return ()
    return tuple(v.strip() for v in value.split(",") if v.strip())


def parse_hints(lessons: Sequence[tuple[str, str]], params: SimPolicyParams, role: str) -> Hints:
    """Apply each lesson's ``hint:`` lines, subject to a seeded adoption draw.

    The first adopted value of a key wins, so index order sets precedence.
    """
    keys = EVAL_HINT_KEYS if role == "evaluator" else PLAN_HINT_KEYS
    found: dict[str, str] = {}
    adopted = []
    for entry_id, content in lessons:
        pairs = [(m["key"], m["value"]) for m in HINT_RE.finditer(content) if m["key"] in keys]
        if not pairs:
            continue
        if draw(params.seed, "adopt", role, entry_id) >= params.knowledge_adoption:
            continue
        adopted.append(entry_id)
        for key, value in pairs:
            found.setdefault(key, value)
    return Hints(
        definition=_split_list(found["definition"]) if "definition" in found else None,
        dedup_normalized=found.get("dedup") == "normalized",
        blocked=frozenset(_split_list(found.get("blocked_source", ""))),
        source_map=_split_list(found.get("source_map", "")),
        curated_baseline=found.get("curated_baseline") == "yes",
        adopted=tuple(adopted),
    )


# --- shared helpers --------------------------------------------------------


def record_valid(record: Any, mandatory: Iterable[str]) -> bool:
    return isinstance(record, dict) and all(str(record.get(f, "") or "").strip() for f in mandatory)


def record_in_scope(record: Any, counted: Iterable[str]) -> bool:
    return isinstance(record, dict) and (record.get("variant_class", "") or "") in ("", *counted)


def own_definition(universe: HiddenUniverse, params: SimPolicyParams) -> tuple[str, ...]:
    from forage.sim.universe import VARIANT_CLASSES

    return tuple(c for c in VARIANT_CLASSES if draw(params.seed, "definition", c) < 0.5)


def source_order(universe: HiddenUniverse, params: SimPolicyParams, hints: Hints) -> list[str]:
    blocked = [s.source_id for s in universe.sources
               if s.reliability is Reliability.BLOCKED and s.source_id not in hints.blocked]
    readable = sorted((s.source_id for s in universe.readable()),
                      key=lambda sid: (draw(params.seed, "order", sid), sid))
    order = blocked + readable
    mapped = [s for s in hints.source_map if s in order]
    return mapped + [s for s in order if s not in mapped]


def probe_schedule(universe: HiddenUniverse, params: SimPolicyParams, hints: Hints, rounds: int) -> list[list[str]]:
    """Sources first attempted in each of rounds ``1..rounds``."""
    order = source_order(universe, params, hints)
    mapped = [s for s in hints.source_map if s in order]
    readable = {s.source_id for s in universe.readable()}
    done: list[str] = []
    schedule = []
    for r in range(1, rounds + 1):
        remaining = [s for s in order if s not in done]
        if r == 1:
            k = len(mapped) if mapped else 1 + math.ceil(params.explore_rate * (len(order) - 1))
            take = remaining[:k]
            rest = remaining[k:]
            while not any(s in readable for s in take) and rest:
                take.append(rest.pop(0))
        else:
            take = remaining[:math.ceil(params.explore_rate * len(remaining))]
        done.extend(take)
        schedule.append(take)
    return schedule


def _int_rule(rules: dict[str, str], key: str, default: float) -> float:
    try:
        return float(rules[key])
    except (KeyError, ValueError):
        return default


# --- evaluator ---------------------------------------------------------------


@dataclass
class EvaluatorDecision:
    round_no: int
    probed: list[str]
    new_probes: list[str]
    counted: tuple[str, ...]
    mandatory: tuple[str, ...]
    skill: float
    salt: str
    denominator: int
    estimate_numerator: int
    gaps: list[tuple[str, str]]
    overcounts: list[int]
    exhausted: bool
    stop: bool
    rationale: str
    observations: list[str] = field(default_factory=list)
    listings: dict[str, int] = field(default_factory=dict)
    unreachable: list[str] = field(default_factory=list)


def evaluator_decide(
    universe: HiddenUniverse,
    params: SimPolicyParams,
    hints: Hints,
    round_no: int,
    dataset: Sequence[Any],
    prev_metrics: dict[str, Any] | None,
    mandatory: Sequence[str] = DEFAULT_MANDATORY,
) -> EvaluatorDecision:
    """Denominator, gaps and verdict from artifacts of earlier rounds only."""
    mandatory = tuple(mandatory) or DEFAULT_MANDATORY
    counted = hints.definition if hints.definition is not None else own_definition(universe, params)
    skill = 1.0 if hints.dedup_normalized else params.dedup_skill
    salt = params.eval_salt
    schedule = probe_schedule(universe, params, hints, round_no)
    probed = [s for batch in schedule for s in batch]
    order = source_order(universe, params, hints)
    exhausted = len(probed) >= len(order)

    visible: dict[str, tuple[str, Item]] = {}
    listings: dict[str, int] = {}
    unreachable = []
    by_key = universe.by_key
    for sid in probed:
        src = universe.source(sid)
        if src.reliability is Reliability.BLOCKED:
            unreachable.append(sid)
            continue
        n = 0
        for key in src.reveals:
            item = by_key[key]
            if not universe.in_scope(item, counted):
                continue
            n += 1
            spelling = src.spelling(item)
            visible.setdefault(perceive(spelling, skill, salt), (spelling, item))
        listings[sid] = n

    collected: set[str] = set()
    overcounts = []
    for idx, rec in enumerate(dataset):
        if not (record_in_scope(rec, counted) and record_valid(rec, mandatory)):
            continue
        pid = perceive(str(rec.get("product_name")), skill, salt)
        if pid in collected:
            overcounts.append(idx)
        collected.add(pid)

    denominator = max(1, len(set(visible) | collected))
    gaps = [(spelling, "high" if item.variant_class == "" else "medium")
            for pid, (spelling, item) in visible.items() if pid not in collected]

    stop, rationale = False, ""
    if prev_metrics and round_no >= 2 and exhausted:
        prev_den = prev_metrics.get("denominator")
        prev_cov = prev_metrics.get("coverage")
        if (prev_den == denominator and isinstance(prev_cov, (int, float))
                and params.stop_confidence <= prev_cov <= 1.0):
            stop = True
            rationale = (f"every located source has been examined, the estimate held at {denominator} "
                         f"and coverage {prev_cov:.3f} meets the confidence bar")

    def basis(flag: bool) -> str:
        return "lesson" if flag else "own"

    obs = [
        f"definition={','.join(counted) or 'none'} basis={basis(hints.definition is not None)}",
        f"matching={'normalized' if skill >= 1.0 else 'partial'} basis={basis(hints.dedup_normalized)}",
        f"sources_probed={','.join(s for s in probed if s not in unreachable) or 'none'} "
        f"exhausted={'yes' if exhausted else 'no'} basis={basis(bool(hints.source_map))}",
    ]
    new_probes = schedule[-1] if schedule else []
    obs.extend(f"blocked_source={sid}" for sid in new_probes if sid in unreachable)
    if overcounts:
        obs.append(f"recognized_duplicates={len(overcounts)}")
    if prev_metrics and isinstance(prev_metrics.get("coverage"), (int, float)) and prev_metrics["coverage"] > 1.0:
        obs.append("coverage_over_one=yes")

    return EvaluatorDecision(
        round_no=round_no, probed=probed, new_probes=list(new_probes), counted=tuple(counted),
        mandatory=mandatory, skill=skill, salt=salt, denominator=denominator,
        estimate_numerator=len(collected), gaps=gaps, overcounts=overcounts, exhausted=exhausted,
        stop=stop, rationale=rationale, observations=obs, listings=listings, unreachable=unreachable,
    )


def render_contract(decision: EvaluatorDecision) -> str:
    mandatory = ", ".join(decision.mandatory)
    scope_basis = ", ".join(s for s in decision.probed if s not in decision.unreachable) or "none"
    return (
        "# Evaluation contract\n\n"
        "## Record format\n"
        "- product_name: the product name as listed\n"
        "- chip_name: the graphics processor the product uses\n"
        "- release_date: ISO date, YYYY-MM-DD\n"
        "- variant_class: empty for a base product, else memory_variant, bus_variant or oem_rebadge\n"
        "- source: where the record was found\n\n"
        "## Quality dimensions\n"
        "- completeness: every mandatory field is non-empty\n"
        "- uniqueness: one record per product\n\n"
        "## Mandatory fields\n"
        f"{mandatory}\n\n"
        "## Rules\n"
        f"- counted_variants: {', '.join(decision.counted) or 'none'}\n"
        f"- name_match_rate: {decision.skill!r}\n"
        f"- name_match_salt: {decision.salt}\n"
        f"- scope_basis: {scope_basis}\n"
    )


def render_discovery(decision: EvaluatorDecision) -> str:
    readable = [s for s in decision.probed if s not in decision.unreachable]
    lines = [
        f"Readable sources: {', '.join(readable) or 'none'}",
        f"Unreachable sources: {', '.join(decision.unreachable) or 'none'}",
        "Listings per source: " + (", ".join(f"{s}={decision.listings[s]}" for s in readable) or "none"),
        "Scope: base products" + (f" plus {', '.join(decision.counted)}" if decision.counted else " only"),
    ]
    return "\n".join(lines)


def sentinel(role: str, params: SimPolicyParams) -> str:
    return f"forage-sentinel-{role}-{draw(params.seed, 'sentinel', role):.12f}"[:48]


EVAL_TEMPLATE = '''\
"""Coverage metrics for the shared dataset."""
import hashlib
import json

SENTINEL = {sentinel!r}
COUNTED = {counted!r}
MANDATORY = {mandatory!r}
MATCH_RATE = {skill!r}
MATCH_SALT = {salt!r}
DENOMINATOR = {denominator!r}
CAP_AT_COLLECTED = {degenerate!r}


def draw(*parts):
    key = "\\x1f".join(str(p) for p in parts).encode("utf-8")
    return int(hashlib.sha256(key).hexdigest()[:13], 16) / float(16 ** 13)


def norm(name):
    return "".join(ch for ch in name.casefold() if ch.isalnum())


def record_id(name):
    return norm(name) if draw(MATCH_SALT, name) < MATCH_RATE else name


def filled(record, name):
    return bool(str(record.get(name, "") or "").strip())


def main():
    with open("dataset.json", encoding="utf-8") as fh:
        records = json.load(fh)
    scoped = [r for r in records if isinstance(r, dict) and (r.get("variant_class", "") or "") in ("",) + COUNTED]
    valid = [r for r in scoped if all(filled(r, f) for f in MANDATORY)]
    ids = {{record_id(str(r["product_name"])) for r in valid}}
    numerator = len(ids)
    denominator = max(DENOMINATOR, numerator) if CAP_AT_COLLECTED else DENOMINATOR
    quality = {{f: (sum(1 for r in scoped if filled(r, f)) / len(scoped) if scoped else 0.0) for f in MANDATORY}}
    doc = {{
        "numerator": numerator,
        "denominator": denominator,
        "coverage": numerator / denominator,
        "per_field_quality": quality,
        "notes": "%d records, %d in scope, %d valid" % (len(records), len(scoped), len(valid)),
        "records_total": len(records),
    }}
    with open("metrics.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


main()
'''


def render_eval_script(decision: EvaluatorDecision, params: SimPolicyParams, *, degenerate: bool = False) -> str:
    return EVAL_TEMPLATE.format(
        sentinel=sentinel("eval", params), counted=tuple(decision.counted), mandatory=tuple(decision.mandatory),
        skill=decision.skill, salt=decision.salt, denominator=decision.denominator, degenerate=degenerate,
    )


def evaluator_payload(decision: EvaluatorDecision, *, degenerate: bool = False) -> dict[str, Any]:
    den = decision.denominator
    payload = {
        "metrics": {
            "numerator": decision.estimate_numerator,
            "denominator": den,
            "coverage": decision.estimate_numerator / den,
        },
        "gap_report": {
            "gaps": [{"description": f"missing: {name}", "severity": sev} for name, sev in decision.gaps],
            "suspected_overcounts": [str(i) for i in decision.overcounts],
        },
        "stop_decision": {
            "verdict": "stop" if decision.stop else "continue",
            "rationale": decision.rationale,
            "denominator_stable": decision.stop,
            "remaining_gaps": [f"missing: {name}" for name, _ in decision.gaps[:20]],
        },
        "contract_markdown": render_contract(decision),
        "discovery_summary": render_discovery(decision),
        "observations": list(decision.observations),
    }
    if degenerate:
        payload["observations"].append("denominator_policy=cap_at_collected")
    return payload


# --- planner -----------------------------------------------------------------


@dataclass
class PlannerDecision:
    strategy: str
    delete: list[int]
    append: list[dict[str, str]]
    notes: dict[str, Any]

    @property
    def noop(self) -> bool:
        return not self.delete and not self.append


def contract_terms(markdown: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(counted variant classes, mandatory fields) from a contract document."""
    from forage.protocol import EvalContract

    contract = EvalContract.parse(markdown or "")
    counted = _split_list(contract.rules.get("counted_variants", "none"))
    return counted, contract.mandatory_fields or DEFAULT_MANDATORY


_GAP_LINE = re.compile(r"^- \[(?P<sev>[a-z]+)\] missing: (?P<name>.*)$")
_OVER_LINE = re.compile(r"^- (?P<idx>\d+)$")


def parse_briefing(text: str) -> dict[str, Any]:
    """Pull gaps, suspected overcounts and source lists out of a planner briefing."""
    gaps, overcounts, readable, unreachable = [], [], [], []
    section = ""
    for line in text.split("\n"):
        if line.startswith("## "):
            section = line[3:].strip().lower()
            continue
        if section.startswith("gap report"):
            m = _GAP_LINE.match(line)
            if m:
                gaps.append(m["name"])
        elif section.startswith("suspected overcounts"):
            m = _OVER_LINE.match(line.strip())
            if m:
                overcounts.append(int(m["idx"]))
        elif section.startswith("discovery summary"):
            if line.startswith("Readable sources:"):
                readable = list(_split_list(line.split(":", 1)[1]))
            elif line.startswith("Unreachable sources:"):
                unreachable = list(_split_list(line.split(":", 1)[1]))
    return {"gaps": gaps, "overcounts": overcounts, "readable": readable, "unreachable": unreachable}


def planner_decide(
    universe: HiddenUniverse,
    params: SimPolicyParams,
    hints: Hints,
    contract_markdown: str,
    dataset: Sequence[Any],
    briefing: dict[str, Any],
) -> PlannerDecision:
    counted, mandatory = contract_terms(contract_markdown)
    skill = 1.0 if hints.dedup_normalized else params.dedup_skill
    salt = params.plan_salt
    notes: dict[str, Any] = {}

    if not dataset:
        if hints.curated_baseline:
            listed_somewhere = {k for s in universe.readable() for k in s.reveals}
            append = [item.record(source="curated") for item in universe.items
                      if item.key in listed_somewhere and not item.obscure and universe.in_scope(item, counted)]
            notes.update(records_appended=len(append), parse_failures=0)
            return PlannerDecision("curated_baseline", [], append, notes)

        readable_ids = {s.source_id for s in universe.readable()}
        listed = [s for s in briefing.get("readable", []) if s in readable_ids]
        skip = set(briefing.get("unreachable", []))
        extra = [s.source_id for s in universe.readable()
                 if s.source_id not in listed and s.source_id not in skip
                 and draw(salt, "explore", s.source_id) < params.explore_rate]
        by_key = universe.by_key
        seen: dict[str, set[str]] = {}
        append, parse_failures, dup_kept = [], 0, 0
        for sid in listed + extra:
            src = universe.source(sid)
            for key in src.reveals:
                item = by_key[key]
                if not universe.in_scope(item, counted):
                    continue
                spelling = src.spelling(item)
                if key in seen:
                    if spelling in seen[key] or draw(salt, "dup", sid, key) < skill:
                        continue
                    dup_kept += 1
                seen.setdefault(key, set()).add(spelling)
                rec = item.record(spelling, sid)
                if draw(salt, "parse", sid, key) >= params.parse_skill:
                    rec["release_date"] = ""
                    parse_failures += 1
                append.append(rec)
        notes.update(records_appended=len(append), parse_failures=parse_failures,
                     duplicates_kept=dup_kept, sources=",".join(listed + extra) or "none")
        return PlannerDecision("broad_scrape", [], append, notes)

    n = len(dataset)
    delete = sorted({i for i in briefing.get("overcounts", []) if 0 <= i < n})
    gone = set(delete)
    have = {norm(str(r.get("product_name", ""))) for i, r in enumerate(dataset)
            if i not in gone and record_valid(r, mandatory)}
    by_norm = universe.by_norm
    append, skipped, unknown = [], 0, 0
    for name in briefing.get("gaps", []):
        key = norm(name)
        item = by_norm.get(key)
        if item is None:
            unknown += 1
            continue
        if key in have and draw(salt, "recognize", name) < skill:
            skipped += 1
            continue
        append.append(item.record(name, "search"))
        have.add(key)
    notes.update(records_appended=len(append), records_deleted=len(delete),
                 skipped_as_duplicate=skipped, unknown_names=unknown)
    strategy = "gap_fill" if (append or delete) else "no_op"
    return PlannerDecision(strategy, delete, append, notes)


ACTION_TEMPLATE = '''\
"""Apply this round's dataset changes."""
import json

SENTINEL = {sentinel!r}
DELETE = {delete!r}
APPEND = json.loads({append!r})

with open("dataset.json", encoding="utf-8") as fh:
    data = json.load(fh)
for index in sorted(set(DELETE), reverse=True):
    if 0 <= index < len(data):
        del data[index]
data.extend(APPEND)
{extra}with open("dataset.json", "w", encoding="utf-8") as fh:
    json.dump(data, fh, indent=1)
'''


def render_action_script(decision: PlannerDecision, params: SimPolicyParams, extra: str = "") -> str:
    return ACTION_TEMPLATE.format(
        sentinel=sentinel("plan", params), delete=list(decision.delete),
        append=json.dumps(decision.append, ensure_ascii=False, sort_keys=True), extra=extra,
    )


def apply_decision(dataset: list[Any], decision: PlannerDecision) -> list[Any]:
    data = list(dataset)
    for index in sorted(set(decision.delete), reverse=True):
        if 0 <= index < len(data):
            del data[index]
    data.extend(json.loads(json.dumps(decision.append)))
    return data


def planner_payload(decision: PlannerDecision, written: bool) -> dict[str, Any]:
    return {"strategy_name": decision.strategy, "action_script_written": written, "notes": decision.notes}


# --- post-mortem extraction ------------------------------------------------


def _tokens(text: str) -> dict[str, str]:
    out = {}
    for tok in text.split():
        key, sep, value = tok.partition("=")
        if sep:
            out[key] = value
    return out


def _lesson(entry_id: str, scope: str, summary: str, body: str, hint: str | None = None) -> dict[str, Any]:
    content = body.strip() + "\n"
    if hint:
        content += f"\nhint: {hint}\n"
    return {"id": entry_id, "scope": scope, "type": "advisory", "summary": summary, "content": content}


def extract_from_narrative(role: str, narrative: str) -> list[dict[str, Any]]:
    """Deterministic lessons, one per novel event in the narrative."""
    observations = []
    final: dict[str, str] = {}
    strategies = []
    for line in narrative.split("\n"):
        line = line.strip()
        if line.startswith("observation:"):
            observations.append(_tokens(line[len("observation:"):]))
        elif line.startswith("final:"):
            final = _tokens(line[len("final:"):])
        elif line.startswith("strategy:"):
            strategies.append(line.split(":", 1)[1].strip().split()[0] if line.split(":", 1)[1].strip() else "")
    rounds = int(final.get("rounds", "0") or 0)
    if rounds <= 0:
        return []
    lessons: list[dict[str, Any]] = []
    if role == "evaluator":
        blocked = sorted({o["blocked_source"] for o in observations if "blocked_source" in o})
        for sid in blocked:
            lessons.append(_lesson(
                f"{sid}_blocks_automated_access", "web_scraping",
                f"{sid} refuses automated requests; spend probes elsewhere",
                f"Every automated request to {sid} was refused during this run, so it contributed "
                "nothing to the scope estimate. Anchor the estimate on sources that answer.",
                f"blocked_source={sid}"))
        for o in observations:
            if o.get("basis") == "own" and "definition" in o:
                lessons.append(_lesson(
                    "variant_definition_for_catalog_scope", "product_catalog_collection",
                    f"Count base products plus: {o['definition'].replace(',', ', ')}",
                    "Which variants count as separate products moves the total more than any source does. "
                    "This definition produced a stable estimate; reuse it so runs stay comparable.",
                    f"definition={o['definition']}"))
                break
        for o in observations:
            if o.get("basis") == "own" and o.get("matching") == "normalized":
                lessons.append(_lesson(
                    "normalize_names_before_counting", "universal",
                    "Compare names after case folding and stripping punctuation",
                    "Sources spell the same product differently. Counting raw strings inflates both the "
                    "estimate and the apparent gaps.",
                    "dedup=normalized"))
                break
        if any(o.get("coverage_over_one") == "yes" for o in observations):
            lessons.append(_lesson(
                "denominator_should_track_collected_reality", "universal",
                "If more verified records exist than the estimate allows, grow the estimate",
                "Coverage above one means the scope estimate missed real items. Raise the estimate "
                "instead of capping coverage."))
        maps = [o for o in observations if o.get("exhausted") == "yes" and o.get("basis") == "own"]
        if maps and maps[-1].get("sources_probed", "none") != "none":
            lessons.append(_lesson(
                "source_map_for_catalog", "product_catalog_collection",
                f"Readable listings live at {maps[-1]['sources_probed'].replace(',', ', ')}",
                "Probing these sources together in the first round gives the full visible scope at once.",
                f"source_map={maps[-1]['sources_probed']}"))
        word = NUMBER_WORDS.get(rounds, str(rounds))
        den = final.get("denominator", "unknown")
        lessons.append(_lesson(
            f"{word}_round_completion_at_{den}", "product_catalog_collection",
            f"Run finished after {rounds} round(s) with a final estimate of {den} ({final.get('stop', '?')})",
            "Recorded so later runs can compare their trajectory against this one."))
    else:
        broad = any(s == "broad_scrape" for s in strategies)
        failures = sum(int(o.get("parse_failures", "0") or 0) for o in observations)
        if broad and failures:
            lessons.append(_lesson(
                "curated_baseline_beats_parsing_for_structured_catalogs", "data_collection",
                "Start from a curated list of known products, then fill gaps by search",
                f"Parsing listings in the first round lost {failures} date fields. A curated starting "
                "list avoids the parse step and leaves only targeted fills.",
                "curated_baseline=yes"))
        if sum(int(o.get("skipped_as_duplicate", "0") or 0) for o in observations):
            lessons.append(_lesson(
                "gap_names_may_be_spelling_variants", "product_catalog_collection",
                "Some requested names are respellings of records already held",
                "Several requested items matched existing records after normalization. Check the "
                "contract's matching rule before assuming the request is redundant."))
        lessons.append(_lesson(
            "collection_strategy_log", "data_collection",
            f"Strategies used over {rounds} round(s): {', '.join(s for s in strategies if s) or 'none'}",
            "A plain record of what was tried, in order."))
    return lessons
