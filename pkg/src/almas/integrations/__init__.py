"""Version control, task tracker and pull-request integrations."""

from __future__ import annotations

from ..planner import SprintPlan
from .local import (
    IssueRecord,
    LocalPullRequests,
    LocalTracker,
    PullRequestRecord,
    issue_description,
    plan_ref,
)
from .vcs import GitClient, VcsRef, vcs_commit

__all__ = [
    "GitClient",
    "IssueRecord",
    "LocalPullRequests",
    "LocalTracker",
    "PullRequestRecord",
    "VcsRef",
    "tracker_publish_plan",
    "tracker_transition",
    "vcs_commit",
    "vcs_open_pr",
]


def vcs_open_pr(client, source: str, target: str, title: str, body: str) -> PullRequestRecord:
    return client.open(source, target, title, body)


def tracker_publish_plan(client, plan: SprintPlan) -> dict[str, str]:
    """Create or update one issue per sub-task; returns sub-task id -> issue key."""
    return {
        s.id: client.upsert(plan_ref(plan, s), s.title, issue_description(s), s.story_points)
        for s in plan.subtasks
    }


def tracker_transition(client, issue_key: str, status: str) -> IssueRecord:
    return client.transition(issue_key, status)
