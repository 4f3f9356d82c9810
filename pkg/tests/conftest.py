import hashlib
import importlib.util
import json
import re
import shutil
import socket
from pathlib import Path

import pytest

from almas.config import load_config
from almas.provider import FunctionProvider, ModelProfile, ScriptEntry, ScriptedProvider, approx_tokens

FIXTURES = Path(__file__).parent / "fixtures" / "stock_app"


def profile(id="m", tags=("plan", "summarize", "localize", "codegen", "review"), inp="0.001", out="0.002", q=0.8):
    return ModelProfile(id, frozenset(tags), inp, out, 128000, q)


def stock_config(tmp_path: Path, phase: str, *, script: str | None = None, workspace: Path | None = None, **overrides):
    """The stock-app fixture config pointed at a workspace under tmp_path."""
    if script is not None:
        overrides["provider"] = {"kind": "scripted", "script": str(FIXTURES / script)}
    return load_config(
        FIXTURES / "config.json",
        phase=phase,
        repo_path=str(workspace or tmp_path / "ws"),
        artifact_dir=str(tmp_path / "artifacts"),
        **overrides,
    )


def seed_generated_app(dest: Path) -> Path:
    shutil.copytree(FIXTURES / "expected_generation", dest, ignore=shutil.ignore_patterns("__pycache__"))
    return dest


def tree_files(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.relative_to(root).parts[0] not in (".git", ".almas")
    }


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test if this process opens any socket connection."""

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


_UNIT_LINE = re.compile(r"^- (\S+::\S+::(?:file|function|class|method))\b", re.M)


def summary_reply(request) -> str:
    """Deterministic summarizer: every summary is a function of the file prompt alone."""
    prompt = request.messages[1].text
    listing = prompt.rsplit("Summarize the following units of this file:", 1)[1]
    digest = hashlib.sha256(prompt.encode()).hexdigest()[:10]
    return json.dumps({uid: f"Handles {uid.split('::')[1]} ({digest})." for uid in _UNIT_LINE.findall(listing)})


def summarizer():
    return FunctionProvider(summary_reply)


def write_tree(root: Path, files: dict[str, str | bytes]) -> Path:
    for rel, data in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            p.write_bytes(data)
        else:
            p.write_text(data, encoding="utf-8")
    return root


def queued(*texts: str) -> ScriptedProvider:
    """Provider that returns ``texts`` in order, whatever the prompt."""
    return ScriptedProvider([ScriptEntry(t, 10, approx_tokens(t)) for t in texts])


def write_cli_config(tmp_path: Path, *, scripts: dict[str, str] | None = None, **fields) -> Path:
    """Copy the fixture config into tmp_path with absolute fixture paths and a local workspace."""
    data = json.loads((FIXTURES / "config.json").read_text())
    data["repo_path"] = str(tmp_path / "ws")
    data["few_shot_path"] = str(FIXTURES / data["few_shot_path"])
    for phase, section in data["phases"].items():
        section["task_path"] = str(FIXTURES / section["task_path"])
        script = (scripts or {}).get(phase, section["provider"]["script"])
        section["provider"]["script"] = str(script if Path(script).is_absolute() else FIXTURES / script)
    data.update(fields)
    path = tmp_path / "almas.json"
    path.write_text(json.dumps(data))
    return path


def keyed_script(extra: list[str], source: str = "script_augmentation.json") -> dict:
    """The keyed summary entries of a fixture script plus ``extra`` ordered replies."""
    doc = json.loads((FIXTURES / source).read_text())
    entries = [e for e in doc["entries"] if e["match_key"]]
    entries += [ScriptEntry(t, 10, approx_tokens(t)).to_dict() for t in extra]
    return {"schema_version": doc["schema_version"], "entries": entries}


AUTHOR_SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "author_fixtures.py"


def load_author():
    """Import scripts/author_fixtures.py, which is not part of the package."""
    spec = importlib.util.spec_from_file_location("author_fixtures", AUTHOR_SCRIPT)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
