"""Sprint agent: clarity assessment, refinement, decomposition and estimation."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from graphlib import CycleError, TopologicalSorter
from typing import Callable, Iterable, Sequence

from .errors import AlmasWarning, PreconditionError, SchemaError
from .prompting import ask_json, ask_parsed
from .provider import Message, Provider

DEFAULT_SCALE = (1, 2, 3, 5, 8, 13)
SUBTASK_STATUSES = ("todo", "in_progress", "done", "handed_over")

SYSTEM = (
    "You are the sprint agent of an agile software team, acting as product "
    "manager and scrum master. Always reply with JSON only."
)


class SnapWarning(AlmasWarning):
    pass


@dataclass(frozen=True)
class ClarityAssessment:
    is_clear: bool
    missing_aspects: tuple[str, ...] = ()
    rewritten_description: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "missing_aspects", tuple(self.missing_aspects))
        if not self.is_clear and not self.missing_aspects:
            raise PreconditionError("an unclear assessment must name missing aspects")


@dataclass(frozen=True)
class TaskSpec:
    title: str
    description: str = ""
    source: str = "user"
    clarity: ClarityAssessment | None = None

    def __post_init__(self):
        if not self.title.strip():
            raise PreconditionError("task title must be non-empty")
        if self.source not in ("user", "tracker"):
            raise PreconditionError(f"unknown task source {self.source!r}")


@dataclass(frozen=True)
class SubTask:
    id: str
    title: str
    description: str
    acceptance_criteria: tuple[str, ...]
    story_points: int | None = None
    depends_on: tuple[str, ...] = ()
    status: str = "todo"

    def __post_init__(self):
        object.__setattr__(self, "acceptance_criteria", tuple(self.acceptance_criteria))
        object.__setattr__(self, "depends_on", tuple(self.depends_on))
        if not self.acceptance_criteria:
            raise PreconditionError(f"{self.id}: acceptance criteria must be non-empty")
        if self.status not in SUBTASK_STATUSES:
            raise PreconditionError(f"{self.id}: unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "acceptance_criteria": list(self.acceptance_criteria),
            "story_points": self.story_points,
            "depends_on": list(self.depends_on),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d) -> SubTask:
        return cls(
            id=d["id"],
            title=d["title"],
            description=d.get("description", ""),
            acceptance_criteria=tuple(d["acceptance_criteria"]),
            story_points=d.get("story_points"),
            depends_on=tuple(d.get("depends_on", ())),
            status=d.get("status", "todo"),
        )


@dataclass(frozen=True)
class SprintPlan:
    task: TaskSpec
    subtasks: tuple[SubTask, ...]
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        ids = [s.id for s in self.subtasks]
        if len(set(ids)) != len(ids):
            raise PreconditionError("sub-task ids must be unique")
        pos = {sid: i for i, sid in enumerate(ids)}
        for s in self.subtasks:
            for dep in s.depends_on:
                if dep not in pos:
                    raise PreconditionError(f"{s.id} depends on unknown sub-task {dep}")
                if pos[dep] >= pos[s.id]:
                    raise PreconditionError(f"{s.id} is ordered before its dependency {dep}")

    def get(self, subtask_id: str) -> SubTask:
        for s in self.subtasks:
            if s.id == subtask_id:
                return s
        raise PreconditionError(f"no sub-task {subtask_id!r} in plan")

    def to_dict(self, *, include_timestamp: bool = True) -> dict:
        d = {
            "task": {
                "title": self.task.title,
                "description": self.task.description,
                "source": self.task.source,
            },
            "subtasks": [s.to_dict() for s in self.subtasks],
        }
        if include_timestamp:
            d["created_at"] = self.created_at.isoformat()
        return d

    @classmethod
    def from_dict(cls, d) -> SprintPlan:
        t = d["task"]
        created = d.get("created_at")
        return cls(
            task=TaskSpec(t["title"], t.get("description", ""), t.get("source", "user")),
            subtasks=tuple(SubTask.from_dict(s) for s in d["subtasks"]),
            created_at=datetime.fromisoformat(created) if created else datetime.now(timezone.utc),
        )


def _task_block(task: TaskSpec) -> str:
    return f"Title: {task.title}\nDescription: {task.description or '(none)'}"


def assess(task: TaskSpec, provider: Provider, *, model: str) -> ClarityAssessment:
    messages = [
        Message("system", SYSTEM),
        Message(
            "user",
            "Assess whether this task is clear and complete enough to plan.\n\n"
            f"{_task_block(task)}\n\n"
            'Reply as {"is_clear": bool, "missing_aspects": [str], '
            '"rewritten_description": str or null}.',
        ),
    ]

    def parse(v) -> ClarityAssessment:
        missing = v.get("missing_aspects") or []
        if not isinstance(missing, list) or not all(isinstance(m, str) for m in missing):
            raise SchemaError("missing_aspects must be a list of strings")
        is_clear = v["is_clear"]
        if not isinstance(is_clear, bool):
            raise SchemaError("is_clear must be a boolean")
        if not is_clear and not missing:
            raise SchemaError("an unclear verdict must list missing aspects")
        return ClarityAssessment(is_clear, tuple(missing), v.get("rewritten_description") or None)

    return ask_json(provider, model, messages, parse)


def refine(
    task: TaskSpec, assessment: ClarityAssessment, provider: Provider, *, model: str
) -> TaskSpec:
    if assessment is None:
        raise PreconditionError("refine needs an assessment")
    if assessment.is_clear:
        return task
    messages = [
        Message("system", SYSTEM),
        Message(
            "user",
            "Rewrite the task description so that it is clear and complete.\n\n"
            f"{_task_block(task)}\n\nMissing aspects:\n"
            + "\n".join(f"- {m}" for m in assessment.missing_aspects)
            + '\n\nReply as {"description": str}.',
        ),
    ]

    def parse(v) -> str:
        text = v.get("description") if isinstance(v, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise SchemaError("rewritten description must be a non-empty string")
        return text.strip()

    description = ask_json(provider, model, messages, parse)
    resolved = ClarityAssessment(True, (), description)
    return replace(task, description=description, clarity=resolved)


def _order(subtasks: Sequence[SubTask]) -> list[SubTask]:
    ids = [s.id for s in subtasks]
    pos = {sid: i for i, sid in enumerate(ids)}
    ts = TopologicalSorter({s.id: s.depends_on for s in subtasks})
    ts.prepare()  # raises CycleError
    out = []
    while ts.is_active():
        ready = sorted(ts.get_ready(), key=pos.__getitem__)
        out.extend(ready)
        ts.done(*ready)
    by_id = {s.id: s for s in subtasks}
    return [by_id[i] for i in out]


def decompose(
    task: TaskSpec,
    outline: str | None,
    provider: Provider,
    *,
    model: str,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> SprintPlan:
    if task.clarity is not None and not task.clarity.is_clear:
        raise PreconditionError("decompose needs a refined task (clarity resolved)")
    body = (
        "Devise a stepwise plan for the task below. Break it into sub-tasks; "
        "each needs a title, a description, testable acceptance criteria and the "
        "ids of sub-tasks it depends on. Sub-task ids are ST-1, ST-2, ... in the "
        f"order you list them.\n\n{_task_block(task)}\n"
    )
    if outline:
        body += f"\nCodebase summary outline:\n{outline}\n"
    body += (
        '\nReply as {"subtasks": [{"title": str, "description": str, '
        '"acceptance_criteria": [str], "depends_on": [str]}]}.'
    )
    messages = [Message("system", SYSTEM), Message("user", body)]

    def parse(v) -> list[SubTask]:
        raw = v["subtasks"]
        if not isinstance(raw, list) or not raw:
            raise SchemaError("plan must contain at least one sub-task")
        subs = []
        for i, r in enumerate(raw, start=1):
            criteria = r.get("acceptance_criteria") or []
            if not criteria or not all(isinstance(c, str) and c.strip() for c in criteria):
                raise SchemaError(f"ST-{i} has no acceptance criteria")
            subs.append(
                SubTask(
                    id=f"ST-{i}",
                    title=str(r["title"]).strip(),
                    description=str(r.get("description", "")).strip(),
                    acceptance_criteria=tuple(c.strip() for c in criteria),
                    depends_on=tuple(r.get("depends_on") or ()),
                )
            )
        known = {s.id for s in subs}
        for s in subs:
            unknown = set(s.depends_on) - known
            if unknown:
                raise SchemaError(f"{s.id} depends on unknown sub-tasks {sorted(unknown)}")
        try:
            return _order(subs)
        except CycleError as exc:
            raise SchemaError(f"dependency cycle among sub-tasks: {exc.args[1]}") from exc

    subtasks = ask_json(provider, model, messages, parse)
    return SprintPlan(task=task, subtasks=tuple(subtasks), created_at=clock())


def snap_to_scale(value: int, scale: Sequence[int]) -> int:
    """Nearest scale member; ties go to the smaller one."""
    return min(sorted(scale), key=lambda p: (abs(p - value), p))


_INT = re.compile(r"-?\d+")


def estimate(
    subtask: SubTask,
    few_shot_examples: Iterable[tuple[str, int]],
    provider: Provider,
    *,
    model: str,
    scale: Sequence[int] = DEFAULT_SCALE,
) -> int:
    scale = tuple(sorted(set(scale)))
    if not scale:
        raise PreconditionError("story point scale must be non-empty")
    if len(scale) == 1:
        return scale[0]
    examples = list(few_shot_examples)
    shots = "\n\n".join(f"Task: {d}\nStory points: {p}" for d, p in examples)
    body = (
        "Estimate the effort of the sub-task in story points using the scale "
        f"{', '.join(map(str, scale))}. Calibrate against the previous estimations.\n\n"
    )
    if shots:
        body += f"Previous estimations:\n\n{shots}\n\n"
    body += (
        f"Task: {subtask.title}. {subtask.description}\n"
        "Acceptance criteria:\n" + "\n".join(f"- {c}" for c in subtask.acceptance_criteria)
        + "\n\nReply with the story point number only."
    )
    messages = [Message("system", SYSTEM), Message("user", body)]

    def parse(text: str) -> int:
        m = _INT.search(text)
        if not m:
            raise SchemaError("reply contains no story point number")
        return int(m.group())

    raw = ask_parsed(provider, model, messages, parse)
    if raw in scale:
        return raw
    snapped = snap_to_scale(raw, scale)
    warnings.warn(
        f"{subtask.id}: estimate {raw} is off-scale, snapped to {snapped}", SnapWarning, stacklevel=2
    )
    return snapped
