"""Hierarchical summary index: a natural-language replica of a repository.

Each indexed file becomes a tree of one-sentence summaries (file, top-level
functions and classes, class methods). The index is an immutable value;
``update_index`` returns a new one that re-summarizes only changed files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path, PurePosixPath
from string import Template
from typing import Iterable, Mapping, Sequence

from .errors import AlmasWarning, NotFoundError, PreconditionError, SchemaError
from .parsing import CODE_EXTENSIONS, ParserRegistry, default_registry
from .prompting import ask_json
from .provider import Message, Provider, approx_tokens

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_SUMMARY_WORDS = 30
TRUNCATION_MARKER = "[...]"
KINDS = ("file", "function", "class", "method")
IGNORED_DIRS = frozenset(
    {"node_modules", "vendor", "venv", "site-packages", "__pycache__", "dist", "build", "target"}
)
_KIND_DEPTH = {"file": 0, "function": 1, "class": 1, "method": 2}


class ParseWarning(AlmasWarning):
    pass


@dataclass(frozen=True)
class CodeUnit:
    id: str
    kind: str
    path: str
    qualified_name: str
    span: tuple[int, int]
    parent_id: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown unit kind {self.kind!r}")
        start, end = self.span
        if not 1 <= start <= end:
            raise PreconditionError(f"invalid span {self.span} for {self.id}")
        if (self.kind == "file") != (self.parent_id is None):
            raise PreconditionError(f"{self.id}: only file units are parentless")


@dataclass(frozen=True)
class SummaryNode:
    unit: CodeUnit
    summary: str
    children: tuple[str, ...] = ()
    content_hash: str | None = None  # file nodes only

    @property
    def unit_id(self) -> str:
        return self.unit.id

    def to_dict(self) -> dict:
        u = self.unit
        return {
            "unit_id": u.id,
            "kind": u.kind,
            "path": u.path,
            "qualified_name": u.qualified_name,
            "span": list(u.span),
            "parent_id": u.parent_id,
            "summary": self.summary,
            "children": list(self.children),
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SummaryNode:
        unit = CodeUnit(
            id=d["unit_id"],
            kind=d["kind"],
            path=d["path"],
            qualified_name=d["qualified_name"],
            span=tuple(d["span"]),
            parent_id=d["parent_id"],
        )
        return cls(unit, d["summary"], tuple(d["children"]), d.get("content_hash"))


@dataclass(frozen=True)
class SummaryIndex:
    version: int
    repo_fingerprint: str
    nodes: Mapping[str, SummaryNode] = field(default_factory=dict)

    @property
    def files(self) -> tuple[str, ...]:
        return tuple(
            uid for uid, n in sorted(self.nodes.items(), key=lambda kv: kv[1].unit.path)
            if n.unit.kind == "file"
        )

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, unit_id) -> bool:
        return unit_id in self.nodes

    def to_document(self, *, include_version: bool = True) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "repo_fingerprint": self.repo_fingerprint,
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
        }
        if include_version:
            doc["version"] = self.version
        return doc

    def to_bytes(self, *, include_version: bool = True) -> bytes:
        doc = self.to_document(include_version=include_version)
        return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode()

    def content_bytes(self) -> bytes:
        """Serialized form without the version counter, for equivalence checks."""
        return self.to_bytes(include_version=False)

    @classmethod
    def from_document(cls, doc: Mapping) -> SummaryIndex:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported index schema_version {doc.get('schema_version')!r}")
        nodes = {}
        for d in doc["nodes"]:
            node = SummaryNode.from_dict(d)
            nodes[node.unit_id] = node
        return cls(int(doc.get("version", 1)), doc["repo_fingerprint"], dict(sorted(nodes.items())))


def save_index(index: SummaryIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(index.to_bytes())
    tmp.replace(path)


def load_index(path: str | Path) -> SummaryIndex:
    return SummaryIndex.from_document(json.loads(Path(path).read_text(encoding="utf-8")))


def lookup_unit(index: SummaryIndex, unit_id: str) -> SummaryNode:
    try:
        return index.nodes[unit_id]
    except KeyError:
        raise NotFoundError(f"unknown unit id {unit_id!r}") from None


# -- extraction --------------------------------------------------------------


def module_name(path: str) -> str:
    p = PurePosixPath(path)
    return ".".join(p.with_suffix("").parts)


def _line_count(text: str) -> int:
    return max(1, len(text.splitlines()))


def extract_units(
    file_path: str,
    file_text: str,
    parser: ParserRegistry | None = None,
    warnings_out: list[str] | None = None,
) -> list[CodeUnit]:
    """Return the file unit followed by its definitions in source order.

    Unsupported languages and unparseable text degrade to a single file unit.
    """
    parser = parser or default_registry()
    path = PurePosixPath(file_path).as_posix()
    file_unit = CodeUnit(
        id=f"{path}::{module_name(path)}::file",
        kind="file",
        path=path,
        qualified_name=module_name(path),
        span=(1, _line_count(file_text)),
    )
    units = [file_unit]
    lang = parser.for_path(path)
    if lang is None:
        return units
    try:
        defs = lang.parse(file_text)
    except (SyntaxError, ValueError) as exc:
        msg = f"{path}: could not parse ({exc.__class__.__name__}: {exc}); indexed as a file unit"
        if warnings_out is not None:
            warnings_out.append(msg)
        warnings.warn(msg, ParseWarning, stacklevel=2)
        return units

    seen: set[str] = set()

    def make(kind, qn, start, end, parent):
        base = qn
        n = 1
        while f"{path}::{qn}::{kind}" in seen:
            n += 1
            qn = f"{base}#{n}"
        uid = f"{path}::{qn}::{kind}"
        seen.add(uid)
        unit = CodeUnit(uid, kind, path, qn, (start, end), parent)
        units.append(unit)
        return unit

    for d in defs:
        top = make(d.kind, d.name, d.start, d.end, file_unit.id)
        for c in d.children:
            make(c.kind, f"{top.qualified_name}.{c.name}", c.start, c.end, top.id)
    return units


# -- scanning ----------------------------------------------------------------


def _is_binary(data: bytes) -> bool:
    return b"\x00" in data[:8192]


def is_indexable(rel_path: str) -> bool:
    p = PurePosixPath(rel_path)
    if any(part.startswith(".") for part in p.parts):
        return False
    if any(part in IGNORED_DIRS for part in p.parts[:-1]):
        return False
    return p.suffix in CODE_EXTENSIONS


def scan_repo(repo_root: str | Path) -> dict[str, bytes]:
    """Indexable files under ``repo_root`` keyed by repo-relative posix path."""
    root = Path(repo_root)
    if not root.is_dir():
        raise PreconditionError(f"repository {root} is not a readable directory")
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file() or p.is_symlink():
            continue
        rel = p.relative_to(root).as_posix()
        if not is_indexable(rel):
            continue
        data = p.read_bytes()
        if _is_binary(data):
            continue
        out[rel] = data
    return out


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fingerprint(files: Mapping[str, bytes]) -> str:
    h = hashlib.sha256()
    for rel in sorted(files):
        h.update(f"{rel}\0{content_hash(files[rel])}\n".encode())
    return h.hexdigest()


# -- summarization -----------------------------------------------------------


def _template(name: str) -> Template:
    text = resources.files("almas.templates").joinpath(name).read_text(encoding="utf-8")
    return Template(text)


def summary_messages(path: str, text: str, units: Sequence[CodeUnit]) -> list[Message]:
    lines = []
    for u in units:
        lines.append(
            _template(f"unit_{u.kind}.txt").substitute(
                unit_id=u.id,
                path=u.path,
                name=u.qualified_name,
                start=u.span[0],
                end=u.span[1],
            ).rstrip("\n")
        )
    user = _template("summary_batch.txt").substitute(
        path=path, source=text.rstrip("\n"), units="\n".join(lines)
    )
    return [Message("system", _template("summary_system.txt").template.strip()), Message("user", user)]


def clamp_summary(text: str, max_words: int = MAX_SUMMARY_WORDS) -> str:
    words = str(text).split()
    if len(words) > max_words:
        return " ".join(words[:max_words]) + " " + TRUNCATION_MARKER
    return " ".join(words)


def summarize_file(
    path: str,
    text: str,
    units: Sequence[CodeUnit],
    provider: Provider,
    *,
    model: str,
    max_summary_words: int = MAX_SUMMARY_WORDS,
) -> dict[str, str]:
    """One provider call producing a summary for every unit of one file."""
    wanted = [u.id for u in units]

    def parse(value) -> dict[str, str]:
        if not isinstance(value, dict):
            raise SchemaError("expected a JSON object of unit id -> summary")
        out = {}
        for uid in wanted:
            s = value.get(uid)
            if not isinstance(s, str) or not s.strip():
                raise SchemaError(f"missing summary for {uid}")
            out[uid] = clamp_summary(s, max_summary_words)
        return out

    return ask_json(provider, model, summary_messages(path, text, units), parse)


def _file_nodes(
    rel: str,
    data: bytes,
    parser: ParserRegistry,
    provider: Provider,
    model: str,
    max_summary_words: int,
) -> dict[str, SummaryNode]:
    text = data.decode("utf-8", errors="replace")
    units = extract_units(rel, text, parser)
    summaries = summarize_file(
        rel, text, units, provider, model=model, max_summary_words=max_summary_words
    )
    children: dict[str, list[str]] = {u.id: [] for u in units}
    for u in units:
        if u.parent_id is not None:
            children[u.parent_id].append(u.id)
    return {
        u.id: SummaryNode(
            unit=u,
            summary=summaries[u.id],
            children=tuple(children[u.id]),
            content_hash=content_hash(data) if u.kind == "file" else None,
        )
        for u in units
    }


def build_index(
    repo_root: str | Path,
    parser: ParserRegistry | None,
    provider: Provider,
    *,
    model: str,
    max_summary_words: int = MAX_SUMMARY_WORDS,
) -> SummaryIndex:
    parser = parser or default_registry()
    files = scan_repo(repo_root)
    nodes: dict[str, SummaryNode] = {}
    for rel in sorted(files):
        nodes.update(_file_nodes(rel, files[rel], parser, provider, model, max_summary_words))
    return SummaryIndex(1, fingerprint(files), dict(sorted(nodes.items())))


def _relative(repo_root: Path, path: str | Path) -> str:
    root = repo_root.resolve()
    p = Path(path)
    full = (p if p.is_absolute() else root / p).resolve()
    try:
        return full.relative_to(root).as_posix()
    except ValueError:
        raise PreconditionError(f"changed path {path} is outside the repository root") from None


def update_index(
    index: SummaryIndex,
    changed_paths: Iterable[str | Path],
    repo_root: str | Path,
    parser: ParserRegistry | None,
    provider: Provider,
    *,
    model: str,
    max_summary_words: int = MAX_SUMMARY_WORDS,
) -> SummaryIndex:
    """Re-summarize changed files, drop deleted ones, carry the rest over verbatim."""
    parser = parser or default_registry()
    root = Path(repo_root)
    rels = sorted({_relative(root, p) for p in changed_paths})
    files = scan_repo(root)
    nodes = dict(index.nodes)
    for rel in rels:
        prefix = "" if rel == "." else rel + "/"
        affected = {n.unit.path for n in nodes.values() if n.unit.path == rel or n.unit.path.startswith(prefix)}
        affected |= {f for f in files if f == rel or f.startswith(prefix)}
        for path in sorted(affected):
            for uid in [uid for uid, n in nodes.items() if n.unit.path == path]:
                del nodes[uid]
            if path in files:
                nodes.update(_file_nodes(path, files[path], parser, provider, model, max_summary_words))
    return SummaryIndex(index.version + 1, fingerprint(files), dict(sorted(nodes.items())))


def changed_files(index: SummaryIndex, repo_root: str | Path) -> list[str]:
    """Paths whose on-disk content differs from what the index summarized."""
    files = scan_repo(repo_root)
    indexed = {n.unit.path: n.content_hash for n in index.nodes.values() if n.unit.kind == "file"}
    out = {p for p in indexed if p not in files}
    out |= {p for p, data in files.items() if indexed.get(p) != content_hash(data)}
    return sorted(out)


# -- outline -----------------------------------------------------------------

ELISION = "..."


def _walk(index: SummaryIndex, visible: set[str] | None):
    """Depth-first (node, depth) pairs in stable order."""

    def rec(uid, depth):
        if visible is not None and uid not in visible:
            return
        node = index.nodes[uid]
        yield node, depth
        for c in node.children:
            yield from rec(c, depth + 1)

    for f in index.files:
        yield from rec(f, 0)


def _line(node: SummaryNode, depth: int) -> str:
    return f"{'  ' * depth}{node.unit_id} — {node.summary}"


def _marker(depth: int, n: int, what: str) -> str:
    return f"{'  ' * depth}{ELISION} [{n} {what} elided]"


def _render(index: SummaryIndex, visible, max_depth: int) -> list[str]:
    lines: list[str] = []
    hidden: dict[str, int] = {}
    for node, depth in _walk(index, visible):
        if depth <= max_depth:
            lines.append(_line(node, depth))
            if depth == max_depth:
                n = sum(1 for c in _descendants(index, node.unit_id, visible))
                if n:
                    what = "methods" if depth == 1 else "units"
                    lines.append(_marker(depth + 1, n, what))
    return lines


def _descendants(index, uid, visible):
    for c in index.nodes[uid].children:
        if visible is None or c in visible:
            yield c
            yield from _descendants(index, c, visible)


def render_outline(
    index: SummaryIndex,
    scope: Iterable[str] | None = None,
    token_budget: int = 4000,
) -> str:
    """Indented ``unit_id — summary`` listing that fits ``token_budget``.

    Methods are elided first, then every member below file level, then
    trailing files.
    """
    if token_budget <= 0:
        raise PreconditionError("token budget must be > 0")
    visible = None
    if scope is not None:
        visible = set()
        for uid in scope:
            node = lookup_unit(index, uid)
            visible.add(uid)
            parent = node.unit.parent_id
            while parent is not None:
                visible.add(parent)
                parent = index.nodes[parent].unit.parent_id
    for max_depth in (2, 1, 0):
        text = "\n".join(_render(index, visible, max_depth))
        if approx_tokens(text) <= token_budget:
            return text
    files = [n for n, d in _walk(index, visible) if d == 0]
    kept: list[str] = []
    for i, node in enumerate(files):
        candidate = kept + [_line(node, 0)]
        tail = _marker(0, len(files) - i - 1, "files") if i + 1 < len(files) else None
        probe = "\n".join(candidate + ([tail] if tail else []))
        if approx_tokens(probe) > token_budget:
            break
        kept = candidate
    dropped = len(files) - len(kept)
    if dropped:
        kept.append(_marker(0, dropped, "files"))
    return "\n".join(kept)


def parse_outline_ids(outline: str) -> list[str]:
    ids = []
    for line in outline.splitlines():
        s = line.strip()
        if not s or s.startswith(ELISION):
            continue
        ids.append(s.split(" — ", 1)[0])
    return ids
