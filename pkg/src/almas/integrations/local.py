"""File-backed tracker and pull-request adapters for offline runs.

Layout under the metadata directory (``<repo>/.almas`` by default)::

    tracker/layout.json            {"layout_version": 1, "next": n, "by_ref": {...}}
    tracker/issues/<KEY>.json      one IssueRecord per file
    pulls/layout.json              {"layout_version": 1, "next": n}
    pulls/<PR-n>.json              one PullRequestRecord per file
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from ..errors import DuplicateError, IllegalTransitionError, NotFoundError, PreconditionError
from ..planner import SprintPlan, SubTask

LAYOUT_VERSION = 1
ISSUE_STATUSES = ("todo", "in_progress", "done", "handed_over")
_LINEAR = ("todo", "in_progress", "done")


@dataclass(frozen=True)
class IssueRecord:
    key: str
    title: str
    description: str
    story_points: int | None = None
    status: str = "todo"
    ref: str = ""  # plan-scoped sub-task reference used for idempotent publishing


@dataclass(frozen=True)
class PullRequestRecord:
    id: str
    source_branch: str
    target_branch: str
    title: str
    body: str
    state: str = "open"

    def __post_init__(self):
        if self.source_branch == self.target_branch:
            raise PreconditionError("source and target branch must differ")


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def issue_description(subtask: SubTask) -> str:
    criteria = "\n".join(f"- {c}" for c in subtask.acceptance_criteria)
    return f"{subtask.description}\n\nAcceptance criteria:\n{criteria}\n"


def plan_ref(plan: SprintPlan, subtask: SubTask) -> str:
    return f"{plan.task.title}#{subtask.id}"


def check_transition(current: str, new: str) -> None:
    if new not in ISSUE_STATUSES:
        raise PreconditionError(f"unknown status {new!r}")
    if new == "handed_over" or new == current:
        return
    if current in _LINEAR and new in _LINEAR and _LINEAR.index(new) > _LINEAR.index(current):
        return
    raise IllegalTransitionError(f"illegal transition {current} -> {new}")


class LocalTracker:
    def __init__(self, root: str | Path, prefix: str = "AL"):
        self.root = Path(root) / "tracker"
        self.prefix = prefix

    def _layout(self) -> dict:
        p = self.root / "layout.json"
        if p.exists():
            return json.loads(p.read_text(encoding="utf-8"))
        return {"layout_version": LAYOUT_VERSION, "next": 1, "by_ref": {}}

    def _issue_path(self, key: str) -> Path:
        return self.root / "issues" / f"{key}.json"

    def get_issue(self, key: str) -> IssueRecord:
        p = self._issue_path(key)
        if not p.exists():
            raise NotFoundError(f"unknown issue {key}")
        return IssueRecord(**json.loads(p.read_text(encoding="utf-8")))

    def save_issue(self, issue: IssueRecord) -> None:
        _write_json(self._issue_path(issue.key), asdict(issue))

    def issues(self) -> list[IssueRecord]:
        d = self.root / "issues"
        files = sorted(d.glob("*.json"), key=lambda p: int(p.stem.rsplit("-", 1)[1])) if d.exists() else []
        return [IssueRecord(**json.loads(p.read_text(encoding="utf-8"))) for p in files]

    def upsert(self, ref: str, title: str, description: str, story_points: int | None) -> str:
        layout = self._layout()
        key = layout["by_ref"].get(ref)
        if key is None:
            key = f"{self.prefix}-{layout['next']}"
            layout["next"] += 1
            layout["by_ref"][ref] = key
            issue = IssueRecord(key, title, description, story_points, "todo", ref)
        else:
            issue = replace(self.get_issue(key), title=title, description=description, story_points=story_points)
        self.save_issue(issue)
        _write_json(self.root / "layout.json", layout)
        return key

    def transition(self, key: str, status: str) -> IssueRecord:
        issue = self.get_issue(key)
        check_transition(issue.status, status)
        issue = replace(issue, status=status)
        self.save_issue(issue)
        return issue


class LocalPullRequests:
    def __init__(self, root: str | Path):
        self.root = Path(root) / "pulls"

    def _layout(self) -> dict:
        p = self.root / "layout.json"
        if p.exists():
            return json.loads(p.read_text(encoding="utf-8"))
        return {"layout_version": LAYOUT_VERSION, "next": 1}

    def list(self) -> list[PullRequestRecord]:
        if not self.root.exists():
            return []
        files = sorted(
            (p for p in self.root.glob("PR-*.json")), key=lambda p: int(p.stem.split("-")[1])
        )
        return [PullRequestRecord(**json.loads(p.read_text(encoding="utf-8"))) for p in files]

    def get(self, pr_id: str) -> PullRequestRecord:
        p = self.root / f"{pr_id}.json"
        if not p.exists():
            raise NotFoundError(f"unknown pull request {pr_id}")
        return PullRequestRecord(**json.loads(p.read_text(encoding="utf-8")))

    def find_open(self, source: str, target: str) -> PullRequestRecord | None:
        for pr in self.list():
            if pr.state == "open" and pr.source_branch == source and pr.target_branch == target:
                return pr
        return None

    def open(self, source: str, target: str, title: str, body: str) -> PullRequestRecord:
        if source == target:
            raise PreconditionError("source and target branch must differ")
        if self.find_open(source, target) is not None:
            raise DuplicateError(f"an open pull request already exists for {source} -> {target}")
        layout = self._layout()
        pr = PullRequestRecord(f"PR-{layout['next']}", source, target, title, body)
        layout["next"] += 1
        _write_json(self.root / f"{pr.id}.json", asdict(pr))
        _write_json(self.root / "layout.json", layout)
        return pr

    def update(self, pr_id: str, *, title: str | None = None, body: str | None = None) -> PullRequestRecord:
        pr = self.get(pr_id)
        pr = replace(pr, title=title if title is not None else pr.title, body=body if body is not None else pr.body)
        _write_json(self.root / f"{pr.id}.json", asdict(pr))
        return pr
