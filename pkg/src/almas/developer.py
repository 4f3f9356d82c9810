"""Code agent: generate full-file changesets, apply them atomically, validate.

Model replies use a fenced multi-file grammar::

    ===FILE path=<repo-relative-path>===
    <file body, every line verbatim>
    ===END===
    ===DELETE path=<repo-relative-path>===

Text outside blocks is ignored.
"""

from __future__ import annotations

import difflib
import logging
import os
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Mapping, Sequence

from .errors import (
    GenerationError,
    PreconditionError,
    SecurityError,
    ValidationEnvironmentError,
)
from .localizer import ContextBundle
from .planner import SubTask
from .prompting import ask_parsed
from .provider import Message, Provider

log = logging.getLogger(__name__)

_FILE = re.compile(r"^===FILE path=(.+)===$")
_DELETE = re.compile(r"^===DELETE path=(.+)===$")
_END = "===END==="

SYSTEM = (
    "You are a code agent on an agile team. You implement sub-tasks by writing "
    "complete files together with their unit tests. Output every file you create "
    "or change in full using the block format you are given, and nothing else."
)

FORMAT_HELP = (
    "Output format, repeated for each file:\n"
    "===FILE path=<repo-relative-path>===\n<complete file content>\n===END===\n"
    "To delete a file: ===DELETE path=<repo-relative-path>==="
)


@dataclass(frozen=True)
class ChangeSet:
    edits: tuple[tuple[str, str], ...]
    deletions: tuple[str, ...] = ()
    commit_message: str = "Update files"
    inverse: Mapping[str, bytes | None] | None = None
    created_dirs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edits", tuple((p, c) for p, c in self.edits))
        object.__setattr__(self, "deletions", tuple(self.deletions))
        if not self.commit_message.strip():
            raise PreconditionError("commit message must be non-empty")
        paths = self.paths
        if len(set(paths)) != len(paths):
            raise PreconditionError("a path appears more than once in the changeset")

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.edits] + list(self.deletions)

    @property
    def applied(self) -> bool:
        return self.inverse is not None


def check_relative(path: str) -> str:
    p = PurePosixPath(path)
    if not path or p.is_absolute() or "\\" in path or any(part in ("..", "") for part in path.split("/")):
        raise SecurityError(f"path {path!r} is not a plain repo-relative path")
    if p.parts and p.parts[0] == ".git":
        raise SecurityError(f"path {path!r} targets version-control metadata")
    return path


def parse_changeset(text: str, commit_message: str) -> ChangeSet:
    edits: list[tuple[str, str]] = []
    deletions: list[str] = []
    current: str | None = None
    body: list[str] = []
    for line in text.splitlines(keepends=True):
        bare = line.rstrip("\r\n")
        if current is not None:
            if bare == _END:
                edits.append((current, "".join(body)))
                current, body = None, []
            elif _FILE.match(bare) or _DELETE.match(bare):
                raise GenerationError(f"block for {current} is not closed before the next one")
            else:
                body.append(line)
            continue
        if m := _FILE.match(bare):
            current = m.group(1).strip()
        elif m := _DELETE.match(bare):
            deletions.append(m.group(1).strip())
        elif bare == _END:
            raise GenerationError("===END=== without a matching ===FILE===")
    if current is not None:
        raise GenerationError(f"block for {current} is never closed")
    if not edits and not deletions:
        raise GenerationError("reply contains no file blocks")
    try:
        for p in edits + [(d, None) for d in deletions]:
            check_relative(p[0])
        return ChangeSet(tuple(edits), tuple(deletions), commit_message)
    except (PreconditionError, SecurityError) as exc:
        raise GenerationError(str(exc)) from exc


def format_changeset(changeset: ChangeSet) -> str:
    """Inverse of ``parse_changeset`` for content that ends with a newline."""
    out = []
    for path, content in changeset.edits:
        out.append(f"===FILE path={path}===\n{content}{_END}\n")
    for path in changeset.deletions:
        out.append(f"===DELETE path={path}===\n")
    return "".join(out)


def is_test_path(path: str) -> bool:
    p = PurePosixPath(path)
    return (
        p.name.startswith("test_")
        or p.stem.endswith("_test")
        or any(part in ("tests", "test") for part in p.parts[:-1])
    )


def generate_change(
    subtask: SubTask,
    context: ContextBundle | None,
    provider: Provider,
    *,
    model: str,
    greenfield: bool = False,
    error_log: str | None = None,
    require_tests: bool | None = None,
) -> ChangeSet:
    if not greenfield and (context is None or not context.excerpts):
        raise PreconditionError(f"{subtask.id}: no code context and not flagged greenfield")
    if require_tests is None:
        require_tests = bool(subtask.acceptance_criteria)
    body = f"Sub-task {subtask.id}: {subtask.title}\n{subtask.description}\n\nAcceptance criteria:\n"
    body += "\n".join(f"- {c}" for c in subtask.acceptance_criteria)
    if context is not None and context.excerpts:
        body += f"\n\nRelevant code:\n\n{context.render()}"
    else:
        body += "\n\nThis is new code; the repository has nothing relevant yet."
    if error_log:
        body += f"\n\nYour previous attempt failed validation:\n{error_log}"
    body += "\n\nWrite the implementation and unit tests that check the acceptance criteria.\n"
    body += FORMAT_HELP
    message = f"{subtask.id}: {subtask.title}"

    def parse(text: str) -> ChangeSet:
        cs = parse_changeset(text, message)
        if require_tests and not any(is_test_path(p) for p, _ in cs.edits):
            raise GenerationError("changeset has no unit test file")
        return cs

    return ask_parsed(
        provider,
        model,
        [Message("system", SYSTEM), Message("user", body)],
        parse,
        max_output_tokens=8192,
        error=GenerationError,
    )


# -- apply / rollback ---------------------------------------------------------


def _target(root: Path, rel: str) -> Path:
    check_relative(rel)
    full = root / rel
    resolved = full.resolve()
    if resolved != root and root not in resolved.parents:
        raise SecurityError(f"{rel} resolves outside the repository")
    return full


def _missing_dirs(root: Path, rel: str) -> list[str]:
    out = []
    parent = PurePosixPath(rel).parent
    while str(parent) not in (".", ""):
        if not (root / parent).exists():
            out.append(parent.as_posix())
        parent = parent.parent
    return out


def apply(repo_root: str | Path, changeset: ChangeSet) -> ChangeSet:
    """Write the changeset all-or-nothing and return it with ``inverse`` filled in.

    New contents are staged in a sibling directory first, then moved into
    place; any failure restores every touched path from the inverse.
    """
    root = Path(repo_root).resolve()
    if not root.is_dir():
        raise PreconditionError(f"{root} is not a directory")
    targets = {p: _target(root, p) for p in changeset.paths}
    inverse: dict[str, bytes | None] = {}
    for p, t in targets.items():
        if t.is_dir():
            raise PreconditionError(f"{p} is a directory")
        inverse[p] = t.read_bytes() if t.is_file() else None
    created: list[str] = []
    for p, _ in changeset.edits:
        for d in _missing_dirs(root, p):
            if d not in created:
                created.append(d)
    created.sort(key=lambda d: d.count("/"))

    staging = Path(tempfile.mkdtemp(prefix=f".{root.name}.staging-", dir=root.parent))
    done: list[str] = []
    try:
        staged = {}
        for i, (p, content) in enumerate(changeset.edits):
            s = staging / f"{i:05d}"
            s.write_bytes(content.encode("utf-8"))
            staged[p] = s
        for d in created:
            (root / d).mkdir(exist_ok=True)
        for p, s in staged.items():
            os.replace(s, targets[p])
            done.append(p)
        for p in changeset.deletions:
            if inverse[p] is not None:
                targets[p].unlink()
            done.append(p)
    except BaseException:
        _restore(root, {p: inverse[p] for p in done}, created)
        raise
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return replace(changeset, inverse=inverse, created_dirs=tuple(created))


def _restore(root: Path, inverse: Mapping[str, bytes | None], created: Sequence[str]) -> None:
    for p, old in inverse.items():
        t = root / p
        if old is None:
            if t.exists():
                t.unlink()
        else:
            t.parent.mkdir(parents=True, exist_ok=True)
            t.write_bytes(old)
    for d in sorted(created, key=lambda d: -d.count("/")):
        try:
            (root / d).rmdir()
        except OSError:
            pass


def rollback(repo_root: str | Path, changeset: ChangeSet) -> None:
    """Restore every path the applied changeset touched."""
    if changeset.inverse is None:
        raise PreconditionError("changeset was never applied")
    _restore(Path(repo_root).resolve(), changeset.inverse, changeset.created_dirs)


def changeset_diff(changeset: ChangeSet) -> str:
    """Unified diff of an applied changeset, old contents taken from its inverse."""
    if changeset.inverse is None:
        raise PreconditionError("changeset was never applied")
    chunks = []
    for path, new in list(changeset.edits) + [(p, None) for p in changeset.deletions]:
        old_bytes = changeset.inverse.get(path)
        old = old_bytes.decode("utf-8", errors="replace") if old_bytes is not None else ""
        a = f"a/{path}" if old_bytes is not None else "/dev/null"
        b = f"b/{path}" if new is not None else "/dev/null"
        lines = difflib.unified_diff(
            old.splitlines(keepends=True),
            (new or "").splitlines(keepends=True),
            fromfile=a,
            tofile=b,
        )
        text = "".join(l if l.endswith("\n") else l + "\n\\ No newline at end of file\n" for l in lines)
        if text:
            chunks.append(f"diff --git a/{path} b/{path}\n{text}")
    return "".join(chunks)


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class TestFailure:
    test_id: str
    message: str
    implicated_path: str | None = None
    implicated_line: int | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.test_id:
            raise PreconditionError("test_id must be non-empty")

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "message": self.message,
            "implicated_path": self.implicated_path,
            "implicated_line": self.implicated_line,
        }


@dataclass(frozen=True)
class ValidationConfig:
    format_cmd: str | None = None
    build_cmd: str | None = None
    test_cmd: str | None = None
    adapter_id: str = "pytest"
    timeout: float = 600.0
    env: Mapping[str, str] = field(default_factory=dict)  # extra variables for every stage

    @classmethod
    def from_dict(cls, d: Mapping) -> ValidationConfig:
        return cls(
            format_cmd=d.get("format_cmd"),
            build_cmd=d.get("build_cmd"),
            test_cmd=d.get("test_cmd"),
            adapter_id=d.get("adapter_id", "pytest"),
            timeout=float(d.get("timeout", 600.0)),
            env={str(k): str(v) for k, v in (d.get("env") or {}).items()},
        )


STAGES = ("format", "build", "test")


@dataclass(frozen=True)
class ValidationReport:
    format_ok: bool
    build_ok: bool | None = None
    tests_passed: int | None = None
    failures: tuple[TestFailure, ...] = ()
    stage_reached: str = "format"
    outputs: Mapping[str, str] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.stage_reached == "complete"

    def error_log(self, limit: int = 4000) -> str:
        if self.ok:
            return ""
        stage = self.stage_reached
        parts = [f"Validation failed at the {stage} stage."]
        for f in self.failures:
            where = f" ({f.implicated_path}:{f.implicated_line})" if f.implicated_path else ""
            parts.append(f"FAILED {f.test_id}{where}: {f.message}")
        out = self.outputs.get(stage, "")
        if out:
            parts.append(out[-limit:])
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "format_ok": self.format_ok,
            "build_ok": self.build_ok,
            "tests_passed": self.tests_passed,
            "failures": [f.to_dict() for f in self.failures],
            "stage_reached": self.stage_reached,
            "notes": list(self.notes),
        }


def _run(cmd: str, cwd: Path, timeout: float, env: Mapping[str, str]) -> tuple[int, str]:
    argv = shlex.split(cmd)
    try:
        proc = subprocess.run(
            argv,
            cwd=cwd,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            timeout=timeout,
            env=dict(env),
        )
    except FileNotFoundError as exc:
        raise ValidationEnvironmentError(f"command not found: {argv[0]}") from exc
    except subprocess.TimeoutExpired as exc:
        out = exc.stdout if isinstance(exc.stdout, str) else (exc.stdout or b"").decode(errors="replace")
        return 124, out + f"\n[timed out after {timeout}s]"
    return proc.returncode, proc.stdout


def _relativize(text: str, root: Path) -> str:
    # keeps error logs (and so prompts) independent of where the workspace lives
    for prefix in {str(root.resolve()), str(root.absolute())}:
        text = text.replace(prefix + os.sep, "").replace(prefix, ".")
    return text


def validate(repo_root: str | Path, config: ValidationConfig) -> ValidationReport:
    """Run format, build and test commands in order, stopping at the first failure."""
    root = Path(repo_root)
    # Imports read existing bytecode caches but never write into the workspace;
    # caches made by explicit compilers (compileall) are pruned afterwards.
    env = dict(os.environ, **config.env, PYTHONDONTWRITEBYTECODE="1")
    before = set(_pycache_dirs(root))
    try:
        return _run_stages(root, config, env)
    finally:
        for d in _pycache_dirs(root):
            if d not in before:
                shutil.rmtree(d, ignore_errors=True)


def _pycache_dirs(root: Path) -> list[Path]:
    return [p for p in root.rglob("__pycache__") if ".git" not in p.relative_to(root).parts]


def _run_stages(root: Path, config: ValidationConfig, env: Mapping[str, str]) -> ValidationReport:
    outputs: dict[str, str] = {}
    notes: list[str] = []
    results: dict[str, bool] = {}
    for stage in STAGES:
        cmd = getattr(config, f"{stage}_cmd")
        if not cmd:
            notes.append(f"{stage}: no command configured, stage passes")
            results[stage] = True
            continue
        code, out = _run(cmd, root, config.timeout, env)
        out = _relativize(out, root)
        outputs[stage] = out
        results[stage] = code == 0
        if code != 0:
            if stage == "test":
                failures = parse_failures(out, config.adapter_id, exit_code=code)
                return ValidationReport(
                    True, True, ADAPTERS[config.adapter_id].passed(out),
                    tuple(failures), "test", outputs, tuple(notes),
                )
            return ValidationReport(
                results["format"],
                results.get("build") if stage == "build" else None,
                stage_reached=stage,
                outputs=outputs,
                notes=tuple(notes),
            )
    passed = ADAPTERS[config.adapter_id].passed(outputs.get("test", ""))
    return ValidationReport(True, True, passed, (), "complete", outputs, tuple(notes))


# -- failure adapters -----------------------------------------------------------


class PytestAdapter:
    summary = re.compile(r"^(?:FAILED|ERROR) (\S+)(?: - (.*))?$", re.M)
    header = re.compile(r"^_{3,} (.+?) _{3,}$", re.M)
    location = re.compile(r"^(\S+?\.py):(\d+): ", re.M)
    passed_re = re.compile(r"(\d+) passed")

    def parse(self, raw: str) -> list[TestFailure]:
        blocks: dict[str, tuple[str, int]] = {}
        heads = list(self.header.finditer(raw))
        for i, h in enumerate(heads):
            end = heads[i + 1].start() if i + 1 < len(heads) else len(raw)
            locs = list(self.location.finditer(raw, h.end(), end))
            if locs:
                blocks[h.group(1).strip()] = (locs[-1].group(1), int(locs[-1].group(2)))
        out = []
        for m in self.summary.finditer(raw):
            test_id, message = m.group(1), (m.group(2) or "").strip()
            where = None
            for name, loc in blocks.items():
                key = name.split()[-1].replace(".", "::")
                if test_id.endswith(key):
                    where = loc
            out.append(TestFailure(test_id, message, *(where or (None, None))))
        return out

    def passed(self, raw: str) -> int:
        m = self.passed_re.findall(raw)
        return int(m[-1]) if m else 0


class UnittestAdapter:
    header = re.compile(r"^(FAIL|ERROR): (\S+) \(([^)]+)\)", re.M)
    location = re.compile(r'File "([^"]+)", line (\d+)')
    ran = re.compile(r"^Ran (\d+) tests?", re.M)

    def parse(self, raw: str) -> list[TestFailure]:
        heads = list(self.header.finditer(raw))
        summary = self.ran.search(raw)
        tail = summary.start() if summary else len(raw)
        out = []
        for i, h in enumerate(heads):
            end = heads[i + 1].start() if i + 1 < len(heads) else tail
            block = raw[h.end() : end]
            body = [l for l in block.splitlines() if l.strip() and not set(l.strip()) <= set("=-")]
            message = body[-1].strip() if body else h.group(1)
            locs = list(self.location.finditer(block))
            path, line = (locs[-1].group(1), int(locs[-1].group(2))) if locs else (None, None)
            out.append(TestFailure(f"{h.group(3)}.{h.group(2)}", message, path, line))
        return out

    def passed(self, raw: str) -> int:
        m = self.ran.search(raw)
        return max(0, int(m.group(1)) - len(self.parse(raw))) if m else 0


ADAPTERS = {"pytest": PytestAdapter(), "unittest": UnittestAdapter()}


def parse_failures(raw_output: str, adapter_id: str, *, exit_code: int = 1) -> list[TestFailure]:
    """Turn test-runner output into failures; a nonzero exit never yields nothing."""
    try:
        adapter = ADAPTERS[adapter_id]
    except KeyError:
        raise PreconditionError(f"unknown failure adapter {adapter_id!r}") from None
    failures = adapter.parse(raw_output)
    if not failures and exit_code != 0:
        failures = [TestFailure("<unmatched>", raw_output)]
    return failures
