"""Synthetic open-world catalogs for the scripted backends.

A universe is a hidden set of catalog items plus a handful of sources
that each reveal part of it. Some items are variants (memory, bus or OEM
rebadges) whose inclusion is a definitional choice, and sources spell
names inconsistently, so two honest counters can disagree on the total.
"""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass, field
from typing import Iterable

VARIANT_CLASSES = ("memory_variant", "bus_variant", "oem_rebadge")
SERIES = ("Vela", "Orin", "Kestrel", "Talon", "Nimbus", "Corvid", "Halo", "Strix", "Lumen", "Quill")

OBSCURE_RATE = 0.03
OPEN_SPELLING_RATE = 0.10
NOISY_SPELLING_RATE = 0.35


def draw(*parts: object) -> float:
    """Deterministic uniform value in [0, 1) keyed by ``parts``."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int(hashlib.sha256(key).hexdigest()[:13], 16) / float(16 ** 13)


def norm(name: str) -> str:
    return "".join(ch for ch in name.casefold() if ch.isalnum())


def perceive(name: str, skill: float, salt: str) -> str:
    """The id a counter with matching ``skill`` assigns to ``name``."""
    return norm(name) if draw(salt, name) < skill else name


class Reliability(str, enum.Enum):
    OPEN = "open"
    BLOCKED = "blocked"
    NOISY = "noisy"


@dataclass(frozen=True)
class Item:
    key: str
    product_name: str
    chip_name: str
    release_date: str
    series: str
    variant_class: str = ""  # "" for a base product
    obscure: bool = False

    def record(self, spelling: str | None = None, source: str = "") -> dict[str, str]:
        return {
            "product_name": spelling or self.product_name,
            "chip_name": self.chip_name,
            "release_date": self.release_date,
            "variant_class": self.variant_class,
            "source": source,
        }


@dataclass(frozen=True)
class Source:
    source_id: str
    reliability: Reliability
    reveals: tuple[str, ...]
    spellings: dict[str, str] = field(default_factory=dict, compare=False)

    def spelling(self, item: Item) -> str:
        return self.spellings.get(item.key, item.product_name)


@dataclass(frozen=True)
class HiddenUniverse:
    seed: int
    items: tuple[Item, ...]
    sources: tuple[Source, ...]
    definitional_variants: dict[str, str]
    events: tuple[str, ...] = ()

    def __post_init__(self):
        keys = {i.key for i in self.items}
        for src in self.sources:
            if not set(src.reveals) <= keys:
                raise ValueError(f"source {src.source_id} reveals unknown items")
        if not any(s.reliability is not Reliability.BLOCKED for s in self.sources):
            raise ValueError("a universe needs at least one readable source")

    @property
    def by_key(self) -> dict[str, Item]:
        return {i.key: i for i in self.items}

    @property
    def by_norm(self) -> dict[str, Item]:
        return {norm(i.product_name): i for i in self.items}

    def source(self, source_id: str) -> Source:
        for src in self.sources:
            if src.source_id == source_id:
                return src
        raise KeyError(source_id)

    def readable(self) -> list[Source]:
        return [s for s in self.sources if s.reliability is not Reliability.BLOCKED]

    def in_scope(self, item: Item, counted: Iterable[str]) -> bool:
        return item.variant_class == "" or item.variant_class in set(counted)

    def count_under(self, counted: Iterable[str]) -> int:
        """Size of the full universe under a definitional choice."""
        counted = set(counted)
        return sum(1 for i in self.items if self.in_scope(i, counted))

    def describe(self) -> dict:
        return {
            "seed": self.seed,
            "items": len(self.items),
            "sources": [
                {"id": s.source_id, "reliability": s.reliability.value, "reveals": len(s.reveals)}
                for s in self.sources
            ],
            "variants": {c: sum(1 for v in self.definitional_variants.values() if v == c) for c in VARIANT_CLASSES},
        }


def _respell(name: str, rng: random.Random) -> str:
    options = [
        name.replace(" ", "-"),
        name.upper(),
        name.lower(),
        name.replace(" ", ""),
        name.replace(" ", "  "),
    ]
    options = [o for o in options if o != name]
    return rng.choice(options)


def gen_universe(seed: int, n_items: int, n_sources: int) -> HiddenUniverse:
    """Build a deterministic universe.

    With two or more sources, ``src0`` is blocked (it would reveal every
    item but refuses automated access). With three or more, the last
    source is noisy and spells names inconsistently more often.
    """
    if n_items < 1 or n_sources < 1:
        raise ValueError("n_items and n_sources must be at least 1")
    rng = random.Random(seed)
    events: list[str] = []
    items: list[Item] = []
    seen: set[str] = set()
    bases: list[Item] = []

    def add(item: Item) -> bool:
        n = norm(item.product_name)
        if n in seen:
            return False
        seen.add(n)
        items.append(item)
        events.append(f"item {item.key} {item.variant_class or 'base'} {item.product_name}")
        return True

    while len(items) < n_items:
        if bases and rng.random() < 0.3:
            base = rng.choice(bases)
            cls = rng.choice(VARIANT_CLASSES)
            suffix = {"memory_variant": f" {rng.choice((8, 12, 16, 24))}GB",
                      "bus_variant": rng.choice((" PCIe", " AGP", " MXM")),
                      "oem_rebadge": " OEM"}[cls]
            item = Item(f"i{len(items)}", base.product_name + suffix, base.chip_name,
                        base.release_date, base.series, cls, rng.random() < OBSCURE_RATE)
            add(item)
            continue
        series = rng.choice(SERIES)
        number = rng.randrange(100, 1000) * 10
        date = f"{rng.randrange(2008, 2026)}-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}"
        chip = f"{series[:2].upper()}{number // 10}"
        item = Item(f"i{len(items)}", f"{series} {number}", chip, date, series,
                    "", n_items > 1 and rng.random() < OBSCURE_RATE)
        if add(item):
            bases.append(item)

    keys = [i.key for i in items]
    sources: list[Source] = []
    for idx in range(n_sources):
        sid = f"src{idx}"
        if n_sources == 1:
            rel, reveals = Reliability.OPEN, list(keys)
        elif idx == 0:
            rel, reveals = Reliability.BLOCKED, list(keys)
        else:
            rel = Reliability.NOISY if (n_sources >= 3 and idx == n_sources - 1) else Reliability.OPEN
            share = rng.uniform(0.45, 0.75)
            reveals = [k for k in keys if rng.random() < share]
        rate = NOISY_SPELLING_RATE if rel is Reliability.NOISY else OPEN_SPELLING_RATE
        spellings = {}
        if rel is not Reliability.BLOCKED:
            for k in reveals:
                if rng.random() < rate:
                    item = items[int(k[1:])]
                    spellings[k] = _respell(item.product_name, rng)
        sources.append(Source(sid, rel, tuple(reveals), spellings))
        events.append(f"source {sid} {rel.value} reveals {len(reveals)}")

    variants = {i.key: i.variant_class for i in items if i.variant_class}
    return HiddenUniverse(seed, tuple(items), tuple(sources), variants, tuple(events))
