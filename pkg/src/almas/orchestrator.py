"""End-to-end workflow: the generation and augmentation phases."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from decimal import Decimal
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import developer, localizer, planner, review as peer
from .config import RunConfig, load_few_shot
from .errors import (
    AlmasError,
    ConfigError,
    EmptyLocalizationError,
    GenerationError,
    PreconditionError,
    ProviderError,
    SecurityError,
    StaleIndexError,
)
from .index import (
    SummaryIndex,
    build_index,
    changed_files,
    load_index,
    render_outline,
    save_index,
    scan_repo,
    update_index,
)
from .integrations import (
    GitClient,
    LocalPullRequests,
    LocalTracker,
    PullRequestRecord,
    VcsRef,
    tracker_publish_plan,
    tracker_transition,
    vcs_commit,
)
from .parsing import ParserRegistry, default_registry
from .planner import SprintPlan, SubTask, TaskSpec
from .provider import CostLedger, MeteredProvider, NetworkProvider, ScriptedProvider, inventory_by_id
from .supervisor import (
    ActionRecord,
    HandoverReport,
    RunHistory,
    attempts_left,
    build_handover,
    route,
)

log = logging.getLogger(__name__)

ROUTED_KINDS = ("plan", "summarize", "localize", "codegen", "review")


@dataclass
class RunResult:
    plan: SprintPlan | None
    per_subtask: dict[str, str]
    pull_requests: list[PullRequestRecord]
    handovers: list[HandoverReport]
    ledger: CostLedger
    history: RunHistory
    commits: list[VcsRef] = field(default_factory=list)
    index_fingerprint: str | None = None

    @property
    def exit_code(self) -> int:
        return 3 if any(v == "handed_over" for v in self.per_subtask.values()) else 0

    def normalized(self) -> dict:
        """Timestamp-free form used for determinism comparisons."""
        return {
            "plan": self.plan.to_dict(include_timestamp=False) if self.plan else None,
            "per_subtask": dict(self.per_subtask),
            "pull_requests": [asdict(p) for p in self.pull_requests],
            "handovers": [h.to_dict() for h in self.handovers],
            "ledger": self.ledger.to_dict(),
            "history": self.history.to_list(include_timestamps=False),
            "commits": [asdict(c) for c in self.commits],
            "index_fingerprint": self.index_fingerprint,
        }


def tree_digest(root: str | Path, exclude: tuple[str, ...] = (".git", ".almas")) -> str:
    """Hash of every file path and content under ``root``, metadata dirs excluded."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root)
        if rel.parts[0] in exclude or not p.is_file():
            continue
        h.update(rel.as_posix().encode() + b"\0" + hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def _console_confirm(question: str) -> bool:
    return input(f"{question} [y/N] ").strip().lower() in ("y", "yes")


def make_provider(config: RunConfig):
    spec = config.provider
    if spec["kind"] == "scripted":
        if not spec.get("script"):
            raise ConfigError("scripted provider needs provider.script")
        return ScriptedProvider.load(spec["script"])
    return NetworkProvider(
        spec["base_url"],
        spec.get("api_key_env", "ALMAS_PROVIDER_TOKEN"),
        models=[m.id for m in config.inventory],
    )


def make_tracker(config: RunConfig):
    spec = config.tracker
    if spec.get("kind", "local") == "local":
        return LocalTracker(config.meta_dir, spec.get("prefix", "AL"))
    from .integrations.rest import JiraTracker

    return JiraTracker(
        spec["base_url"],
        spec["project_key"],
        token_env=spec.get("token_env", "ALMAS_TRACKER_TOKEN"),
        story_points_field=spec.get("story_points_field", "customfield_10016"),
    )


def make_pulls(config: RunConfig):
    spec = config.pulls
    if spec.get("kind", "local") == "local":
        return LocalPullRequests(config.meta_dir)
    from .integrations.rest import BitbucketPullRequests

    return BitbucketPullRequests(
        spec["base_url"],
        spec["workspace"],
        spec["repo_slug"],
        token_env=spec.get("token_env", "ALMAS_VCS_TOKEN"),
    )


@dataclass
class Services:
    """Everything one run shares between agents."""

    config: RunConfig
    provider: MeteredProvider
    history: RunHistory
    tracker: object
    pulls: object
    git: GitClient
    parser: ParserRegistry = field(default_factory=default_registry)
    models: dict[str, str] = field(default_factory=dict)
    confirm: Callable[[str], bool] = _console_confirm
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    index: SummaryIndex | None = None
    issue_keys: dict[str, str] = field(default_factory=dict)
    branch: str = ""
    plan: SprintPlan | None = None
    pull_request: PullRequestRecord | None = None
    reviews: dict[str, str] = field(default_factory=dict)
    commits: list[VcsRef] = field(default_factory=list)
    handovers: list[HandoverReport] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ledger(self) -> CostLedger:
        return self.provider.ledger

    @property
    def run_dir(self) -> Path:
        return self.config.artifacts / self.config.phase

    @property
    def index_path(self) -> Path:
        return self.config.artifacts / "index.json"

    def act(self, agent: str, subtask_id: str | None, kind: str, fn, *, outcome_of=None, detail=""):
        """Run ``fn`` and append one ActionRecord carrying its token/cost delta."""
        before = len(self.ledger)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                value = fn()
            except Exception as exc:
                self._record(agent, subtask_id, kind, "failed", before, f"{detail}{exc}".strip(), caught)
                raise
        outcome = outcome_of(value) if outcome_of else "ok"
        self._record(agent, subtask_id, kind, outcome, before, detail, caught)
        return value

    def _record(self, agent, subtask_id, kind, outcome, before, detail, caught):
        entries = self.ledger.entries[before:]
        notes = [str(w.message) for w in caught]
        self.notes.extend(notes)
        for n in notes:
            log.warning(n)
        text = "; ".join([detail] + notes if detail else notes)
        self.history.record(
            ActionRecord(
                agent=agent,
                subtask_id=subtask_id,
                action_kind=kind,
                outcome=outcome,
                prompt_tokens=sum(e.prompt_tokens for e in entries),
                completion_tokens=sum(e.completion_tokens for e in entries),
                cost=sum((e.cost for e in entries), Decimal(0)),
                detail=text,
                timestamp=self.clock(),
            )
        )


def open_services(
    config: RunConfig,
    *,
    provider=None,
    confirm: Callable[[str], bool] | None = None,
    clock: Callable[[], datetime] | None = None,
) -> Services:
    run_dir = config.artifacts / config.phase
    run_dir.mkdir(parents=True, exist_ok=True)
    history_path = run_dir / "history.jsonl"
    if history_path.exists():
        history_path.unlink()
    metered = MeteredProvider(provider or make_provider(config), inventory_by_id(config.inventory))
    services = Services(
        config=config,
        provider=metered,
        history=RunHistory(history_path),
        tracker=make_tracker(config),
        pulls=make_pulls(config),
        git=GitClient(config.repo_path, commit_date=config.commit_date),
    )
    if confirm is not None:
        services.confirm = confirm
    if clock is not None:
        services.clock = clock
    for kind in ROUTED_KINDS:
        model = services.act(
            "supervisor", None, "route", lambda k=kind: route(k, list(config.inventory), config.policy)
        )
        services.models[kind] = model
    return services


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _subtask_text(s: SubTask) -> str:
    criteria = "\n".join(f"- {c}" for c in s.acceptance_criteria)
    return f"{s.title}\n{s.description}\nAcceptance criteria:\n{criteria}"


# -- planning ----------------------------------------------------------------------


def load_task(config: RunConfig) -> TaskSpec:
    if config.task_path is None:
        raise ConfigError("no task_path configured")
    try:
        data = json.loads(Path(config.task_path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read task file {config.task_path}: {exc}") from exc
    return TaskSpec(data["title"], data.get("description", ""), data.get("source", "user"))


def plan_task(services: Services, task: TaskSpec, outline: str | None = None) -> SprintPlan:
    """assess -> refine -> decompose -> estimate every sub-task."""
    cfg = services.config
    model = services.models["plan"]
    provider = services.provider
    verdict = services.act("sprint", None, "assess", lambda: planner.assess(task, provider, model=model))
    task = replace(task, clarity=verdict) if verdict.is_clear else task
    task = services.act(
        "sprint", None, "refine", lambda: planner.refine(task, verdict, provider, model=model)
    )
    plan = services.act(
        "sprint",
        None,
        "decompose",
        lambda: planner.decompose(task, outline, provider, model=model, clock=services.clock),
    )
    shots = load_few_shot(cfg.few_shot_path)
    estimated = []
    for s in plan.subtasks:
        points = services.act(
            "sprint",
            s.id,
            "estimate",
            lambda s=s: planner.estimate(s, shots, provider, model=model, scale=cfg.story_point_scale),
        )
        estimated.append(replace(s, story_points=points))
    return replace(plan, subtasks=tuple(estimated))


def _publish(services: Services, plan: SprintPlan) -> None:
    services.issue_keys = services.act(
        "supervisor", None, "publish_plan", lambda: tracker_publish_plan(services.tracker, plan)
    )


def _transition(services: Services, subtask_id: str, status: str) -> None:
    key = services.issue_keys.get(subtask_id)
    if key is not None:
        services.act(
            "supervisor", subtask_id, f"transition:{status}",
            lambda: tracker_transition(services.tracker, key, status),
        )


# -- index -------------------------------------------------------------------------


def ensure_index(services: Services) -> SummaryIndex:
    """Load the saved index and bring it up to date, or build it from scratch."""
    cfg = services.config
    model = services.models["summarize"]
    if services.index_path.exists():
        index = load_index(services.index_path)
        stale = changed_files(index, cfg.repo_path)
        if stale:
            index = services.act(
                "summary", None, "update_index",
                lambda: update_index(index, stale, cfg.repo_path, services.parser, services.provider, model=model),
                detail=f"{len(stale)} changed file(s)",
            )
    else:
        index = services.act(
            "summary", None, "build_index",
            lambda: build_index(cfg.repo_path, services.parser, services.provider, model=model),
        )
    save_index(index, services.index_path)
    services.index = index
    return index


def _refresh_index(services: Services, paths) -> None:
    model = services.models["summarize"]
    cfg = services.config
    services.index = services.act(
        "summary", None, "update_index",
        lambda: update_index(services.index, paths, cfg.repo_path, services.parser, services.provider, model=model),
        detail=", ".join(paths),
    )
    save_index(services.index, services.index_path)


# -- one sub-task --------------------------------------------------------------------


def _pr_body(services: Services) -> str:
    parts = [services.reviews[sid] for sid in sorted(services.reviews, key=_sid_key)]
    done = ", ".join(sorted(services.reviews, key=_sid_key))
    parts.append(
        "---\n\n## Run summary\n\n"
        f"- Phase: {services.config.phase}\n"
        f"- Sub-tasks completed: {done}\n"
        f"- Ledger total: {services.ledger.total}\n"
    )
    return "\n".join(parts)


def _sid_key(sid: str):
    head, _, num = sid.rpartition("-")
    return (head, int(num)) if num.isdigit() else (sid, 0)


def _localize(services: Services, subtask: SubTask, error_log, prior):
    cfg = services.config
    query = localizer.LocalizationQuery(
        subtask.id, _subtask_text(subtask), error_log, tuple(prior) if error_log is not None else None
    )
    fn = localizer.relocalize if error_log is not None else localizer.localize
    kind = "relocalize" if error_log is not None else "localize"
    loc = services.act(
        "control", subtask.id, kind,
        lambda: fn(query, services.index, services.provider, cfg.budgets.k,
                   model=services.models["localize"], outline_tokens=cfg.budgets.outline_tokens),
    )
    return loc


def _context(services: Services, subtask: SubTask, error_log, prior):
    cfg = services.config
    loc = _localize(services, subtask, error_log, prior)
    try:
        bundle = localizer.assemble_context(loc, cfg.repo_path, services.index, cfg.budgets.context_tokens)
    except StaleIndexError as exc:
        services.notes.append(f"{subtask.id}: {exc}; refreshing index")
        ensure_index(services)
        loc = _localize(services, subtask, error_log, prior)
        bundle = localizer.assemble_context(loc, cfg.repo_path, services.index, cfg.budgets.context_tokens)
    return loc, bundle


def _handover(services: Services, subtask: SubTask, last_error: str, *, force: bool = False) -> str:
    cfg = services.config
    # Transition first so the report also lists the handover itself.
    _transition(services, subtask.id, "handed_over")
    summarizer = services.provider if cfg.handover_summaries else None
    report = build_handover(
        services.history, subtask, last_error, summarizer,
        max_attempts=cfg.budgets.max_attempts, model=services.models["plan"], force=force,
    )
    services.handovers.append(report)
    _write(services.run_dir / "handovers" / f"{subtask.id}.md", report.render())
    return "handed_over"


def execute_subtask(subtask: SubTask, services: Services, config: RunConfig | None = None) -> str:
    """Generate, apply and validate until success or the retry budget is spent.

    Agent-side failures end in a handover. Provider failures abort the run,
    with any applied changeset rolled back first.
    """
    try:
        return _attempts(subtask, services, config or services.config)
    except ProviderError:
        raise
    except AlmasError as exc:
        log.warning("%s: %s", subtask.id, exc)
        return _handover(services, subtask, f"{type(exc).__name__}: {exc}", force=True)


def _attempts(subtask: SubTask, services: Services, cfg: RunConfig) -> str:
    root = cfg.repo_path
    augment = cfg.phase == "augmentation"
    sid = subtask.id
    _transition(services, sid, "in_progress")
    error_log: str | None = None
    prior: tuple[str, ...] = ()
    last_error = ""

    while attempts_left(services.history, sid, cfg.budgets.max_attempts) > 0:
        attempt = services.history.attempts.get(sid, 0) + 1
        bundle = None
        if augment:
            try:
                loc, bundle = _context(services, subtask, error_log, prior)
                prior = loc.unit_ids
            except EmptyLocalizationError as exc:
                last_error = str(exc)
                services.history.record(
                    ActionRecord("developer", sid, "generate", "failed",
                                 detail=f"skipped: {exc}", timestamp=services.clock())
                )
                continue
        try:
            changeset = services.act(
                "developer", sid, "generate",
                lambda: developer.generate_change(
                    subtask, bundle, services.provider, model=services.models["codegen"],
                    greenfield=not augment, error_log=error_log,
                ),
            )
        except GenerationError as exc:
            last_error = error_log = f"Generation failed: {exc}"
            continue
        try:
            applied = services.act(
                "developer", sid, "apply", lambda: developer.apply(root, changeset),
                detail=", ".join(changeset.paths),
            )
        except (SecurityError, PreconditionError, OSError) as exc:
            last_error = error_log = f"Could not apply changeset: {exc}"
            continue
        try:
            verdict, detail = _check(services, subtask, applied, attempt)
            if verdict == "commit":
                ref = services.act(
                    "developer", sid, "commit", lambda: vcs_commit(services.git, applied, services.branch)
                )
        except BaseException:
            developer.rollback(root, applied)
            raise
        if verdict == "retry":
            developer.rollback(root, applied)
            last_error = error_log = detail
            continue
        if verdict == "declined":
            developer.rollback(root, applied)
            return _handover(services, subtask, detail, force=True)

        services.commits.append(ref)
        services.reviews[sid] = detail
        _open_or_update_pr(services)
        _transition(services, sid, "done")
        if augment:
            _refresh_index(services, applied.paths)
        return "done"

    return _handover(services, subtask, last_error)


def _check(services: Services, subtask: SubTask, applied, attempt: int) -> tuple[str, str]:
    """Validate, review and confirm an applied changeset.

    Returns ("commit", rendered review), ("retry", error log) or ("declined", reason).
    """
    cfg = services.config
    root, sid = cfg.repo_path, subtask.id
    report = services.act(
        "developer", sid, "validate", lambda: developer.validate(root, cfg.validation),
        outcome_of=lambda r: "ok" if r.ok else "failed",
    )
    _write(services.run_dir / "logs" / f"{sid}-attempt{attempt}.json", json.dumps(report.to_dict(), indent=2) + "\n")
    if not report.ok:
        return "retry", report.error_log()

    diff = developer.changeset_diff(applied)
    rev = services.act(
        "peer", sid, "review",
        lambda: peer.review(diff, subtask.acceptance_criteria, services.provider, model=services.models["review"]),
        detail="diff-only",
    )
    _write(services.run_dir / "reviews" / f"{sid}-attempt{attempt}.md", rev.rendered)
    if not peer.gate(rev, cfg.review_gate):
        return "retry", f"Peer review requested changes:\n{rev.rendered}"
    if cfg.mode == "interactive" and not services.confirm(
        f"Commit {sid} ({', '.join(applied.paths)}) and open a pull request?"
    ):
        return "declined", "declined at the pull-request checkpoint"
    return "commit", rev.rendered


def _open_or_update_pr(services: Services) -> None:
    cfg = services.config
    body = _pr_body(services)
    title = f"[almas] {services.plan.task.title}" if services.plan else f"[almas] {services.branch}"
    pr = services.pull_request or services.pulls.find_open(services.branch, cfg.base_branch)
    if pr is None:
        pr = services.act(
            "supervisor", None, "open_pr",
            lambda: services.pulls.open(services.branch, cfg.base_branch, title, body),
        )
    else:
        pr = services.act("supervisor", None, "update_pr", lambda: services.pulls.update(pr.id, body=body))
    services.pull_request = pr


# -- phases --------------------------------------------------------------------------


def _workspace_files(root: Path) -> list[Path]:
    if not root.exists():
        return []
    return [p for p in root.iterdir() if p.name not in (".git", ".almas")]


def _run_plan(services: Services, task: TaskSpec, outline: str | None) -> SprintPlan | None:
    plan = plan_task(services, task, outline)
    services.plan = plan
    _write(services.run_dir / "plan.json", json.dumps(plan.to_dict(), indent=2) + "\n")
    if services.config.mode == "interactive" and not services.confirm(
        f"Approve the plan with {len(plan.subtasks)} sub-task(s)?"
    ):
        return None
    _publish(services, plan)
    return plan


def _finish(services: Services, per_subtask: dict[str, str]) -> RunResult:
    result = RunResult(
        plan=services.plan,
        per_subtask=per_subtask,
        pull_requests=[services.pull_request] if services.pull_request else [],
        handovers=list(services.handovers),
        ledger=services.ledger,
        history=services.history,
        commits=list(services.commits),
        index_fingerprint=services.index.repo_fingerprint if services.index else None,
    )
    run_dir = services.run_dir
    _write(run_dir / "ledger.json", json.dumps(services.ledger.to_dict(), indent=2) + "\n")
    _write(run_dir / "result.json", json.dumps(result.normalized(), indent=2, sort_keys=True) + "\n")
    if services.notes:
        _write(run_dir / "notes.txt", "\n".join(services.notes) + "\n")
    return result


def _execute_plan(services: Services, plan: SprintPlan | None) -> dict[str, str]:
    per: dict[str, str] = {}
    if plan is None:
        for s in services.plan.subtasks:
            per[s.id] = "handed_over"
        return per
    for s in plan.subtasks:
        per[s.id] = execute_subtask(s, services)
    return per


def _guarded(services: Services, body: Callable[[], dict[str, str]]) -> RunResult:
    try:
        per = body()
    except Exception:
        # Keep whatever the aborted run produced, then let the original error through.
        per = {s.id: "handed_over" for s in services.plan.subtasks} if services.plan else {}
        try:
            _finish(services, per)
        except Exception:
            log.exception("could not persist partial results")
        raise
    return _finish(services, per)


def run_generation(config: RunConfig, **kw) -> RunResult:
    """Greenfield phase: plan, then build every sub-task and its tests from nothing."""
    if config.phase != "generation":
        config = replace(config, phase="generation")
    root = config.repo_path
    if _workspace_files(root) and not config.greenfield:
        raise PreconditionError(f"{root} is not empty; set greenfield to generate into it anyway")
    task = load_task(config)
    services = open_services(config, **kw)
    if not services.git.is_repo():
        services.git.init(config.base_branch)

    def body():
        plan = _run_plan(services, task, None)
        services.branch = "almas/generation"
        services.git.checkout(services.branch, create_from=config.base_branch)
        per = _execute_plan(services, plan)
        ensure_index(services)
        return per

    return _guarded(services, body)


def run_augmentation(config: RunConfig, **kw) -> RunResult:
    """Feature phase over an existing codebase, driven by the summary index."""
    if config.phase != "augmentation":
        config = replace(config, phase="augmentation")
    root = config.repo_path
    if not root.is_dir() or not scan_repo(root):
        raise PreconditionError(f"{root} has no code to augment")
    task = load_task(config)
    services = open_services(config, **kw)
    if not services.git.is_repo():
        services.git.init(config.base_branch)
        services.git.git("add", "-A")
        services.git.git("commit", "-q", "-m", "Import existing code")

    def body():
        index = ensure_index(services)
        outline = render_outline(index, token_budget=config.budgets.outline_tokens)
        plan = _run_plan(services, task, outline)
        services.branch = "almas/augmentation"
        services.git.checkout(services.branch)
        return _execute_plan(services, plan)

    return _guarded(services, body)


def run(config: RunConfig, **kw) -> RunResult:
    if config.phase == "generation":
        return run_generation(config, **kw)
    return run_augmentation(config, **kw)


__all__ = [
    "AlmasError",
    "RunResult",
    "Services",
    "execute_subtask",
    "open_services",
    "run",
    "run_augmentation",
    "run_generation",
    "tree_digest",
]
