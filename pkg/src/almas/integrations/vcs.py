"""Thin git client. Shells out to the ``git`` executable."""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass
from pathlib import Path

from ..developer import ChangeSet
from ..errors import NothingToCommitError, PreconditionError, VcsError

IDENTITY = {
    "GIT_AUTHOR_NAME": "almas",
    "GIT_AUTHOR_EMAIL": "almas@localhost",
    "GIT_COMMITTER_NAME": "almas",
    "GIT_COMMITTER_EMAIL": "almas@localhost",
}


@dataclass(frozen=True)
class VcsRef:
    branch: str
    commit_id: str


class GitClient:
    def __init__(self, workspace: str | Path, *, commit_date: str | None = None):
        self.workspace = Path(workspace)
        self.commit_date = commit_date

    def _env(self) -> dict:
        env = dict(os.environ, **IDENTITY)
        env.pop("GIT_DIR", None)
        if self.commit_date:
            env["GIT_AUTHOR_DATE"] = env["GIT_COMMITTER_DATE"] = self.commit_date
        return env

    def git(self, *args: str, check: bool = True) -> subprocess.CompletedProcess:
        proc = subprocess.run(
            ["git", "-c", "init.defaultBranch=main", "-c", "commit.gpgsign=false", *args],
            cwd=self.workspace,
            env=self._env(),
            capture_output=True,
            text=True,
        )
        if check and proc.returncode != 0:
            raise VcsError(f"git {' '.join(args)} failed: {proc.stderr.strip() or proc.stdout.strip()}")
        return proc

    def is_repo(self) -> bool:
        if not (self.workspace / ".git").exists():
            return False
        return self.git("rev-parse", "--is-inside-work-tree", check=False).returncode == 0

    def init(self, base_branch: str = "main", exclude: tuple[str, ...] = (".almas/",)) -> None:
        """Create a repository with an empty root commit on ``base_branch``."""
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.git("init", "-q", "-b", base_branch)
        info = self.workspace / ".git" / "info"
        info.mkdir(parents=True, exist_ok=True)
        with (info / "exclude").open("a", encoding="utf-8") as fh:
            for pattern in exclude:
                fh.write(pattern + "\n")
        self.git("commit", "-q", "--allow-empty", "-m", "Initial commit")

    def current_branch(self) -> str:
        return self.git("rev-parse", "--abbrev-ref", "HEAD").stdout.strip()

    def head(self) -> str:
        return self.git("rev-parse", "HEAD").stdout.strip()

    def branch_exists(self, branch: str) -> bool:
        return self.git("rev-parse", "--verify", "--quiet", f"refs/heads/{branch}", check=False).returncode == 0

    def checkout(self, branch: str, *, create_from: str | None = None) -> None:
        if self.branch_exists(branch):
            self.git("checkout", "-q", branch)
        else:
            args = ["checkout", "-q", "-b", branch] + ([create_from] if create_from else [])
            self.git(*args)

    def changed_paths(self, rev: str = "HEAD") -> list[str]:
        out = self.git("show", "--name-only", "--format=", rev).stdout
        return [l for l in out.splitlines() if l]

    def status(self) -> str:
        return self.git("status", "--porcelain").stdout

    def commit(self, changeset: ChangeSet, branch: str) -> VcsRef:
        return vcs_commit(self, changeset, branch)


def vcs_commit(client: GitClient, changeset: ChangeSet, branch: str) -> VcsRef:
    """Commit the (already applied) changeset's paths on ``branch``."""
    if not client.is_repo():
        raise PreconditionError(f"{client.workspace} is not a git working tree")
    if client.current_branch() != branch:
        try:
            client.checkout(branch)
        except VcsError as exc:
            raise VcsError(f"could not check out {branch}: {exc}") from exc
    paths = changeset.paths
    if paths:
        client.git("add", "-A", "--", *paths)
    staged = client.git("diff", "--cached", "--quiet", check=False)
    if staged.returncode == 0:
        raise NothingToCommitError("nothing to commit")
    client.git("commit", "-q", "-m", changeset.commit_message)
    return VcsRef(branch, client.head())
