"""Supervisor agent: model routing, the action history, retry budget and handover."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import PreconditionError, RoutingError
from .planner import SubTask
from .prompting import ask
from .provider import Message, ModelProfile, Provider, money

TASK_KINDS = ("plan", "summarize", "localize", "codegen", "review")
AGENTS = ("sprint", "summary", "control", "developer", "peer", "supervisor")
OUTCOMES = ("ok", "failed", "retried")
GENERATE = "generate"
DEFAULT_MAX_ATTEMPTS = 3


@dataclass(frozen=True)
class RoutingPolicy:
    required_tags: Mapping[str, frozenset[str]] = field(
        default_factory=lambda: {k: frozenset({k}) for k in TASK_KINDS}
    )
    quality_floor: float = 0.0
    objective: str = "min_cost"
    budget_per_call: Decimal | None = None

    def __post_init__(self):
        if not 0.0 <= self.quality_floor <= 1.0:
            raise PreconditionError("quality_floor must be in [0, 1]")
        if self.objective not in ("min_cost", "max_quality_within_budget"):
            raise PreconditionError(f"unknown routing objective {self.objective!r}")
        object.__setattr__(
            self, "required_tags", {k: frozenset(v) for k, v in self.required_tags.items()}
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> RoutingPolicy:
        kw = {}
        if "required_tags" in d:
            kw["required_tags"] = {k: frozenset(v) for k, v in d["required_tags"].items()}
        budget = d.get("budget_per_call")
        return cls(
            quality_floor=float(d.get("quality_floor", 0.0)),
            objective=d.get("objective", "min_cost"),
            budget_per_call=Decimal(str(budget)) if budget is not None else None,
            **kw,
        )


def route(task_kind: str, inventory: Sequence[ModelProfile], policy: RoutingPolicy) -> str:
    """Pick a model id for ``task_kind``.

    ``min_cost`` minimizes input_rate + output_rate among models carrying the
    required tags and clearing the quality floor; ties go to the smallest id.
    ``max_quality_within_budget`` maximizes quality among eligible models whose
    rate proxy fits ``budget_per_call``, then prefers cheaper, then smaller id.
    """
    if not inventory:
        raise PreconditionError("inventory must be non-empty")
    need = policy.required_tags.get(task_kind, frozenset())
    tagged = [p for p in inventory if need <= p.capability_tags]
    if not tagged:
        raise RoutingError(f"no model carries capability tags {sorted(need)} for {task_kind!r}")
    pool = [p for p in tagged if p.quality_score >= policy.quality_floor]
    if not pool:
        raise RoutingError(
            f"no {task_kind!r} model meets quality floor {policy.quality_floor}"
        )
    if policy.objective == "min_cost":
        return min(pool, key=lambda p: (p.rate_proxy, p.id)).id
    if policy.budget_per_call is not None:
        pool = [p for p in pool if p.rate_proxy <= policy.budget_per_call]
        if not pool:
            raise RoutingError(
                f"no {task_kind!r} model fits budget_per_call {policy.budget_per_call}"
            )
    return min(pool, key=lambda p: (-p.quality_score, p.rate_proxy, p.id)).id


@dataclass(frozen=True)
class ActionRecord:
    agent: str
    subtask_id: str | None
    action_kind: str
    outcome: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: Decimal = Decimal(0)
    detail: str = ""
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    record_id: str = ""

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise PreconditionError(f"unknown agent {self.agent!r}")
        if self.outcome not in OUTCOMES:
            raise PreconditionError(f"unknown outcome {self.outcome!r}")
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.cost < 0:
            raise PreconditionError("tokens and cost must be >= 0")
        object.__setattr__(self, "cost", money(self.cost))

    def to_dict(self, *, include_timestamp: bool = True) -> dict:
        d = {
            "record_id": self.record_id,
            "agent": self.agent,
            "subtask_id": self.subtask_id,
            "action_kind": self.action_kind,
            "outcome": self.outcome,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": str(self.cost),
            "detail": self.detail,
        }
        if include_timestamp:
            d["timestamp"] = self.timestamp.isoformat()
        return d

    def bullet(self) -> str:
        line = f"{self.record_id} [{self.agent}] {self.action_kind}: {self.outcome}"
        if self.detail:
            line += f" ({_one_line(self.detail, 160)})"
        return line


def _one_line(text: str, limit: int) -> str:
    flat = " ".join(text.split())
    return flat if len(flat) <= limit else flat[: limit - 3] + "..."


class RunHistory:
    """Append-only action log for one run, optionally mirrored to a JSONL file."""

    def __init__(self, log_path: str | Path | None = None):
        self._records: list[ActionRecord] = []
        self.attempts: dict[str, int] = {}
        self._lock = threading.Lock()
        self.log_path = Path(log_path) if log_path else None

    @property
    def records(self) -> tuple[ActionRecord, ...]:
        return tuple(self._records)

    def record(self, rec: ActionRecord) -> RunHistory:
        with self._lock:
            if not rec.record_id:
                rec = replace(rec, record_id=f"A-{len(self._records) + 1:04d}")
            self._records.append(rec)
            if rec.agent == "developer" and rec.action_kind == GENERATE and rec.subtask_id:
                self.attempts[rec.subtask_id] = self.attempts.get(rec.subtask_id, 0) + 1
            if self.log_path is not None:
                self.log_path.parent.mkdir(parents=True, exist_ok=True)
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        return self

    def for_subtask(self, subtask_id: str) -> list[ActionRecord]:
        return [r for r in self._records if r.subtask_id == subtask_id]

    def to_list(self, *, include_timestamps: bool = True) -> list[dict]:
        return [r.to_dict(include_timestamp=include_timestamps) for r in self._records]


def record(history: RunHistory, rec: ActionRecord) -> RunHistory:
    return history.record(rec)


def attempts_left(history: RunHistory, subtask_id: str, max_attempts: int) -> int:
    if max_attempts < 1:
        raise PreconditionError("max_attempts must be >= 1")
    return max(0, max_attempts - history.attempts.get(subtask_id, 0))


@dataclass(frozen=True)
class HandoverReport:
    subtask: SubTask
    attempts_made: int
    summarized_history: str
    last_error: str
    remaining_criteria: tuple[str, ...]

    def render(self) -> str:
        s = self.subtask
        lines = [
            f"# Handover: {s.id} {s.title}",
            "",
            f"Attempts made: {self.attempts_made}",
            "",
            "## What happened",
            "",
            self.summarized_history,
            "",
            "## Last error",
            "",
            "```",
            self.last_error.rstrip() or "(no output)",
            "```",
            "",
            "## Acceptance criteria still to verify",
            "",
        ]
        lines += [f"- [ ] {c}" for c in self.remaining_criteria] or ["- (none)"]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "subtask_id": self.subtask.id,
            "attempts_made": self.attempts_made,
            "summarized_history": self.summarized_history,
            "last_error": self.last_error,
            "remaining_criteria": list(self.remaining_criteria),
        }


def build_handover(
    history: RunHistory,
    subtask: SubTask,
    last_error: str,
    provider: Provider | None = None,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    model: str | None = None,
    verified: Iterable[str] = (),
    force: bool = False,
) -> HandoverReport:
    # force: a human declined the change, so the remaining budget is irrelevant
    if not force and attempts_left(history, subtask.id, max_attempts) > 0:
        raise PreconditionError(f"{subtask.id} still has attempts left; no handover")
    actions = history.for_subtask(subtask.id)
    bullets = "\n".join(f"- {r.bullet()}" for r in actions) or "- (no recorded actions)"
    summary = bullets
    if provider is not None:
        prose = ask(
            provider,
            model or "",
            [
                Message(
                    "system",
                    "You are the supervisor agent. Summarize for a human developer what "
                    "the agents tried on this sub-task and why it is still failing.",
                ),
                Message(
                    "user",
                    f"Sub-task {subtask.id}: {subtask.title}\n\nActions:\n{bullets}\n\n"
                    f"Last error:\n{last_error}\n\nWrite one short paragraph.",
                ),
            ],
        ).text.strip()
        if prose:
            summary = f"{prose}\n\nRecorded actions:\n{bullets}"
    done = set(verified)
    return HandoverReport(
        subtask=subtask,
        attempts_made=history.attempts.get(subtask.id, 0),
        summarized_history=summary,
        last_error=last_error,
        remaining_criteria=tuple(c for c in subtask.acceptance_criteria if c not in done),
    )
