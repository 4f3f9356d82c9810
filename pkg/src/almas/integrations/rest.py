"""REST adapters for hosted trackers (Jira REST v2) and code hosts (Bitbucket 2.0).

Only the endpoints the pipeline needs are wired: create/update/read issue,
transition issue, create/list/update pull request. Tokens come from an
environment variable; nothing is stored on disk.
"""

from __future__ import annotations

import hashlib
import os
from typing import Mapping

import httpx

from ..errors import DuplicateError, NotFoundError, PreconditionError, TransportError
from .local import IssueRecord, PullRequestRecord, check_transition

DEFAULT_STATUS_NAMES = {
    "todo": "To Do",
    "in_progress": "In Progress",
    "done": "Done",
    "handed_over": "Handed Over",
}


def _token(env_var: str) -> str:
    token = os.environ.get(env_var)
    if not token:
        raise PreconditionError(f"environment variable {env_var} is not set")
    return token


class _Rest:
    def __init__(self, base_url: str, token_env: str, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.token_env = token_env
        self.client = client or httpx.Client(timeout=30.0)

    def request(self, method: str, path: str, **kw) -> httpx.Response:
        headers = {"Authorization": f"Bearer {_token(self.token_env)}", "Accept": "application/json"}
        try:
            resp = self.client.request(method, self.base_url + path, headers=headers, **kw)
        except httpx.HTTPError as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc
        if resp.status_code == 404:
            raise NotFoundError(f"{method} {path}: not found")
        if resp.status_code >= 400:
            raise TransportError(f"{method} {path}: HTTP {resp.status_code} {resp.text[:200]}")
        return resp


class JiraTracker(_Rest):
    def __init__(
        self,
        base_url: str,
        project_key: str,
        *,
        token_env: str = "ALMAS_TRACKER_TOKEN",
        story_points_field: str = "customfield_10016",
        status_names: Mapping[str, str] = DEFAULT_STATUS_NAMES,
        client: httpx.Client | None = None,
    ):
        super().__init__(base_url, token_env, client)
        self.project_key = project_key
        self.story_points_field = story_points_field
        self.status_names = dict(status_names)

    @staticmethod
    def label_for(ref: str) -> str:
        return "almas-" + hashlib.sha1(ref.encode()).hexdigest()[:12]

    def _status_from_name(self, name: str) -> str:
        for status, label in self.status_names.items():
            if label.lower() == name.lower():
                return status
        return "todo"

    def get_issue(self, key: str) -> IssueRecord:
        fields = self.request("GET", f"/rest/api/2/issue/{key}").json()["fields"]
        return IssueRecord(
            key=key,
            title=fields.get("summary", ""),
            description=fields.get("description") or "",
            story_points=fields.get(self.story_points_field),
            status=self._status_from_name(fields.get("status", {}).get("name", "")),
            ref=next((l for l in fields.get("labels", []) if l.startswith("almas-")), ""),
        )

    def upsert(self, ref: str, title: str, description: str, story_points: int | None) -> str:
        label = self.label_for(ref)
        jql = f'project = "{self.project_key}" AND labels = "{label}"'
        found = self.request("GET", "/rest/api/2/search", params={"jql": jql, "fields": "summary"}).json()
        fields = {"summary": title, "description": description, self.story_points_field: story_points}
        if found.get("issues"):
            key = found["issues"][0]["key"]
            self.request("PUT", f"/rest/api/2/issue/{key}", json={"fields": fields})
            return key
        fields |= {
            "project": {"key": self.project_key},
            "issuetype": {"name": "Task"},
            "labels": [label],
        }
        return self.request("POST", "/rest/api/2/issue", json={"fields": fields}).json()["key"]

    def transition(self, key: str, status: str) -> IssueRecord:
        current = self.get_issue(key)
        check_transition(current.status, status)
        if status != current.status:
            wanted = self.status_names[status]
            options = self.request("GET", f"/rest/api/2/issue/{key}/transitions").json()["transitions"]
            match = [t for t in options if t.get("to", {}).get("name", "").lower() == wanted.lower()]
            if not match:
                raise PreconditionError(f"{key}: workflow has no transition to {wanted!r}")
            self.request(
                "POST", f"/rest/api/2/issue/{key}/transitions", json={"transition": {"id": match[0]["id"]}}
            )
        return self.get_issue(key)


class BitbucketPullRequests(_Rest):
    def __init__(
        self,
        base_url: str,
        workspace: str,
        repo_slug: str,
        *,
        token_env: str = "ALMAS_VCS_TOKEN",
        client: httpx.Client | None = None,
    ):
        super().__init__(base_url, token_env, client)
        self.path = f"/2.0/repositories/{workspace}/{repo_slug}/pullrequests"

    @staticmethod
    def _record(d: Mapping) -> PullRequestRecord:
        return PullRequestRecord(
            id=str(d["id"]),
            source_branch=d["source"]["branch"]["name"],
            target_branch=d["destination"]["branch"]["name"],
            title=d.get("title", ""),
            body=d.get("description", ""),
            state={"OPEN": "open", "MERGED": "merged"}.get(d.get("state", "OPEN"), "declined"),
        )

    def find_open(self, source: str, target: str) -> PullRequestRecord | None:
        q = f'source.branch.name = "{source}" AND destination.branch.name = "{target}"'
        values = self.request("GET", self.path, params={"state": "OPEN", "q": q}).json().get("values", [])
        return self._record(values[0]) if values else None

    def open(self, source: str, target: str, title: str, body: str) -> PullRequestRecord:
        if source == target:
            raise PreconditionError("source and target branch must differ")
        if self.find_open(source, target) is not None:
            raise DuplicateError(f"an open pull request already exists for {source} -> {target}")
        payload = {
            "title": title,
            "description": body,
            "source": {"branch": {"name": source}},
            "destination": {"branch": {"name": target}},
        }
        return self._record(self.request("POST", self.path, json=payload).json())

    def update(self, pr_id: str, *, title: str | None = None, body: str | None = None) -> PullRequestRecord:
        payload = {}
        if title is not None:
            payload["title"] = title
        if body is not None:
            payload["description"] = body
        return self._record(self.request("PUT", f"{self.path}/{pr_id}", json=payload).json())
