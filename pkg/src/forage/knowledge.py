"""Append-only, versioned store of advisory lessons.

Each entry is ``<id>.md``: a ``---``-delimited YAML frontmatter block
followed by a markdown body. Entries are never rewritten; a second
observation of ``X`` lands as ``X_v2``, then ``X_v3``.
"""

from __future__ import annotations

import contextlib
import fcntl
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import yaml

from forage.errors import MalformedEntry, SeedUnavailable, StoreIO

INDEX_NAME = "INDEX.md"
LOCK_NAME = ".lock"
ADVISORY = "advisory"

_ID_RE = re.compile(r"^[a-z0-9][a-z0-9_]*$")
_VERSION_RE = re.compile(r"^(?P<base>.+)_v(?P<n>\d+)$")
_FRONTMATTER_KEYS = ("id", "scope", "type", "summary", "source_run", "created_round")


def split_version(entry_id: str) -> tuple[str, int]:
    """``X_v3`` -> ``("X", 3)``; a bare id is version 1."""
    m = _VERSION_RE.match(entry_id)
    if m and int(m["n"]) >= 2:
        return m["base"], int(m["n"])
    return entry_id, 1


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")
    slug = re.sub(r"_+", "_", slug)
    if not slug:
        slug = "lesson"
    if not slug[0].isalnum():
        slug = "x" + slug
    return slug


@dataclass(frozen=True)
class KnowledgeEntry:
    id: str
    scope: str
    summary: str
    content: str = ""
    source_run: str = ""
    entry_type: str = ADVISORY
    created_round: int | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not isinstance(self.id, str) or not _ID_RE.match(self.id):
            raise MalformedEntry(f"id must be snake_case, got {self.id!r}")
        if not isinstance(self.scope, str) or not self.scope.strip():
            raise MalformedEntry("scope must be non-empty")
        if not isinstance(self.summary, str) or not self.summary.strip():
            raise MalformedEntry("summary must be non-empty")
        if "\n" in self.summary:
            raise MalformedEntry("summary must be a single line")
        if self.entry_type != ADVISORY:
            raise MalformedEntry(f"type must be {ADVISORY!r}, got {self.entry_type!r}")

    @property
    def base_id(self) -> str:
        return split_version(self.id)[0]

    @property
    def version(self) -> int:
        return split_version(self.id)[1]

    def with_id(self, new_id: str) -> "KnowledgeEntry":
        return KnowledgeEntry(new_id, self.scope, self.summary, self.content, self.source_run,
                              self.entry_type, self.created_round, dict(self.extra))

    def with_source_run(self, run_id: str) -> "KnowledgeEntry":
        return KnowledgeEntry(self.id, self.scope, self.summary, self.content, run_id,
                              self.entry_type, self.created_round, dict(self.extra))

    def to_markdown(self) -> str:
        meta: dict[str, Any] = {
            "id": self.id,
            "scope": self.scope,
            "type": self.entry_type,
            "summary": self.summary,
            "source_run": self.source_run,
        }
        if self.created_round is not None:
            meta["created_round"] = self.created_round
        meta.update(self.extra)
        head = yaml.safe_dump(meta, sort_keys=False, allow_unicode=True, width=10_000)
        body = self.content
        if body and not body.endswith("\n"):
            body += "\n"
        return f"---\n{head}---\n{body}"

    @classmethod
    def from_payload(cls, data: dict[str, Any]) -> "KnowledgeEntry":
        """Build from a lesson payload: ``{id, scope, type, summary, content}``."""
        try:
            return cls(
                id=data["id"],
                scope=data["scope"],
                summary=data["summary"],
                content=data.get("content", "") or "",
                source_run=data.get("source_run", "") or "",
                entry_type=data.get("type", ADVISORY),
                created_round=data.get("created_round"),
            )
        except KeyError as exc:
            raise MalformedEntry(f"lesson missing {exc.args[0]!r}") from None


def parse_entry(raw: bytes | str, source: str | None = None) -> KnowledgeEntry:
    try:
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    except UnicodeDecodeError:
        raise MalformedEntry("not UTF-8", source) from None
    text = text.lstrip("﻿")
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != "---":
        raise MalformedEntry("missing frontmatter", source)
    for end in range(1, len(lines)):
        if lines[end].rstrip("\r") == "---":
            break
    else:
        raise MalformedEntry("unterminated frontmatter", source)
    try:
        meta = yaml.safe_load("\n".join(lines[1:end])) or {}
    except yaml.YAMLError as exc:
        raise MalformedEntry(f"bad frontmatter: {exc}", source) from None
    if not isinstance(meta, dict):
        raise MalformedEntry("frontmatter is not a mapping", source)
    for key in ("id", "scope", "summary"):
        if meta.get(key) in (None, ""):
            raise MalformedEntry(f"frontmatter lacks {key!r}", source)
    content = "\n".join(lines[end + 1:])
    extra = {k: v for k, v in meta.items() if k not in _FRONTMATTER_KEYS}
    try:
        return KnowledgeEntry(
            id=str(meta["id"]),
            scope=str(meta["scope"]),
            summary=str(meta["summary"]),
            content=content,
            source_run=str(meta.get("source_run") or ""),
            entry_type=str(meta.get("type") or ADVISORY),
            created_round=meta.get("created_round"),
            extra=extra,
        )
    except MalformedEntry as exc:
        raise MalformedEntry(str(exc), source) from None


@dataclass(frozen=True)
class IndexDocument:
    sections: dict[str, list[tuple[str, str]]]
    total_count: int

    def render(self) -> str:
        noun = "entry" if self.total_count == 1 else "entries"
        out = [f"# Knowledge Index ({self.total_count} {noun})", ""]
        for scope, rows in self.sections.items():
            out.append(f"## {scope}")
            for entry_id, summary in rows:
                out.append(f"- **{entry_id}**: {summary}")
            out.append("")
        return "\n".join(out).rstrip("\n") + "\n"


_INDEX_ROW = re.compile(r"^- \*\*(?P<id>[^*]+)\*\*: (?P<summary>.*)$")


def parse_index(text: str) -> IndexDocument:
    sections: dict[str, list[tuple[str, str]]] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("## "):
            current = line[3:].strip()
            sections.setdefault(current, [])
        elif current is not None:
            m = _INDEX_ROW.match(line)
            if m:
                sections[current].append((m["id"], m["summary"]))
    return IndexDocument(sections, sum(len(v) for v in sections.values()))


def _scope_order(scope: str) -> tuple[int, str]:
    return (0 if scope == "universal" else 1, scope)


class KnowledgeStore:
    """A directory of entry files plus a generated ``INDEX.md``."""

    def __init__(self, root: str | Path, create: bool = True):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)

    def _entry_files(self) -> list[Path]:
        if not self.root.is_dir():
            return []
        return sorted(
            p for p in self.root.iterdir()
            if p.is_file() and p.suffix == ".md" and p.name != INDEX_NAME and not p.name.startswith(".")
        )

    def files(self) -> list[Path]:
        return self._entry_files()

    def entries(self) -> list[KnowledgeEntry]:
        return [parse_entry(p.read_bytes(), str(p)) for p in self._entry_files()]

    def ids(self) -> set[str]:
        return {p.stem for p in self._entry_files()}

    def __len__(self) -> int:
        return len(self._entry_files())

    def get(self, entry_id: str) -> KnowledgeEntry:
        path = self.root / f"{entry_id}.md"
        return parse_entry(path.read_bytes(), str(path))

    @contextlib.contextmanager
    def locked(self) -> Iterator[None]:
        try:
            fd = os.open(self.root / LOCK_NAME, os.O_CREAT | os.O_RDWR, 0o644)
        except OSError as exc:
            raise StoreIO(f"cannot open store lock: {exc}") from None
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            yield
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def next_id(self, base_id: str) -> str:
        existing = self.ids()
        if base_id not in existing:
            return base_id
        top = 1
        for name in existing:
            b, n = split_version(name)
            if b == base_id:
                top = max(top, n)
        return f"{base_id}_v{top + 1}"

    def append_entry(self, entry: KnowledgeEntry) -> str:
        """Store ``entry`` under its id, or the next free ``_vN``. Nothing is overwritten."""
        if split_version(entry.id)[1] > 1:
            raise MalformedEntry(f"base id {entry.id!r} must not carry a version suffix")
        with self.locked():
            stored_id = self.next_id(entry.id)
            data = entry.with_id(stored_id).to_markdown().encode("utf-8")
            self._write_new(self.root / f"{stored_id}.md", data)
        return stored_id

    def _write_new(self, target: Path, data: bytes) -> None:
        try:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.link(tmp, target)  # fails rather than replace an existing file
            finally:
                os.unlink(tmp)
        except FileExistsError:
            raise StoreIO(f"{target.name} already exists") from None
        except OSError as exc:
            raise StoreIO(f"writing {target.name}: {exc}") from None

    def build_index(self) -> IndexDocument:
        sections: dict[str, list[tuple[str, str]]] = {}
        for entry in self.entries():
            sections.setdefault(entry.scope, []).append((entry.id, " ".join(entry.summary.split())))
        ordered = {s: sorted(sections[s]) for s in sorted(sections, key=_scope_order)}
        return IndexDocument(ordered, sum(len(v) for v in ordered.values()))

    def write_index(self) -> str:
        text = self.build_index().render()
        tmp = self.root / f".{INDEX_NAME}.tmp"
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, self.root / INDEX_NAME)
        return text

    def index_text(self) -> str:
        path = self.root / INDEX_NAME
        if path.exists():
            return path.read_text(encoding="utf-8")
        return self.build_index().render()


def build_index(store: KnowledgeStore) -> IndexDocument:
    return store.build_index()


def append_entry(store: KnowledgeStore, entry: KnowledgeEntry) -> str:
    return store.append_entry(entry)


def seed_from(source: str | Path, target: KnowledgeStore) -> int:
    """Copy every entry file of ``source`` into ``target`` byte for byte.

    All-or-nothing: every file is validated before the first copy, and a
    failed copy rolls back what this call wrote. The source is only read.
    """
    source = Path(source)
    if not source.is_dir() or not os.access(source, os.R_OK | os.X_OK):
        raise SeedUnavailable(f"cannot read seed directory {source}")
    try:
        files = sorted(
            p for p in source.iterdir()
            if p.is_file() and p.suffix == ".md" and p.name != INDEX_NAME and not p.name.startswith(".")
        )
        blobs = [(p.name, p.read_bytes()) for p in files]
    except OSError as exc:
        raise SeedUnavailable(f"cannot read seed directory {source}: {exc}") from None
    for name, data in blobs:
        entry = parse_entry(data, str(source / name))
        if f"{entry.id}.md" != name:
            raise MalformedEntry(f"file name does not match id {entry.id!r}", str(source / name))
    copied: list[Path] = []
    with target.locked():
        pending = []
        for name, data in blobs:
            dest = target.root / name
            if dest.exists():
                if dest.read_bytes() != data:
                    raise StoreIO(f"{name} already exists in target with different content")
                continue
            pending.append((dest, data))
        try:
            for dest, data in pending:
                target._write_new(dest, data)
                copied.append(dest)
        except StoreIO:
            for dest in copied:
                dest.unlink(missing_ok=True)
            raise
        target.write_index()
    return len(copied)


def copy_store(source: str | Path, dest: str | Path) -> None:
    shutil.copytree(source, dest, ignore=shutil.ignore_patterns(LOCK_NAME, ".tmp-*"))
