import json
from decimal import Decimal

import pytest

from almas import run
from almas.config import config_from_dict
from almas.errors import ConfigError, PreconditionError, RoutingError, UnmatchedScriptError
from almas.orchestrator import tree_digest
from almas.provider import ScriptedProvider

from conftest import FIXTURES, queued, seed_generated_app, stock_config, tree_files


def generates(result, sid):
    return [r for r in result.history.for_subtask(sid) if r.action_kind == "generate"]


def test_empty_inventory_rejected_before_any_call():
    data = json.loads((FIXTURES / "config.json").read_text())
    data["inventory"] = []
    with pytest.raises(ConfigError):
        config_from_dict(data, FIXTURES)


def test_unroutable_policy_fails_before_any_completion(tmp_path):
    provider = queued("never used")
    cfg = stock_config(tmp_path, "generation", policy={"quality_floor": 0.99})
    with pytest.raises(RoutingError):
        run(cfg, provider=provider)
    assert provider.requests == []


def test_augmentation_needs_code(tmp_path):
    (tmp_path / "ws").mkdir()
    (tmp_path / "ws" / "README.md").write_text("docs only\n")
    with pytest.raises(PreconditionError):
        run(stock_config(tmp_path, "augmentation"))


def test_generation_refuses_non_empty_workspace(tmp_path):
    seed_generated_app(tmp_path / "ws")
    with pytest.raises(PreconditionError, match="not empty"):
        run(stock_config(tmp_path, "generation"))


def test_always_failing_validation_hands_every_subtask_over(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    before = tree_digest(ws)
    result = run(stock_config(tmp_path, "generation", script="script_always_fail.json"))
    assert result.exit_code == 3
    assert result.per_subtask == {"ST-1": "handed_over", "ST-2": "handed_over", "ST-3": "handed_over"}
    assert [len(generates(result, s)) for s in ("ST-1", "ST-2", "ST-3")] == [3, 3, 3]
    assert tree_digest(ws) == before
    assert result.pull_requests == [] and result.commits == []
    assert "intentional failure" in result.handovers[0].last_error


def test_fail_then_pass_uses_two_attempts(tmp_path):
    ws = seed_generated_app(tmp_path / "ws")
    result = run(stock_config(tmp_path, "augmentation", script="script_fail_then_pass.json"))
    assert result.exit_code == 0
    gens = generates(result, "ST-1")
    assert len(gens) == 2
    validations = [r.outcome for r in result.history.for_subtask("ST-1") if r.action_kind == "validate"]
    assert validations == ["failed", "ok"]
    expected = tree_files(FIXTURES / "expected_augmentation")
    assert {k: v for k, v in tree_files(ws).items() if k in expected} == expected
    # The retry re-localized with the failure log in hand.
    kinds = [r.action_kind for r in result.history.for_subtask("ST-1") if r.agent == "control"]
    assert kinds == ["localize", "relocalize"]


def test_plan_declined_in_interactive_mode(tmp_path):
    questions = []

    def decline(q):
        questions.append(q)
        return False

    result = run(stock_config(tmp_path, "generation", mode="interactive"), confirm=decline)
    assert result.exit_code == 3
    assert set(result.per_subtask.values()) == {"handed_over"}
    assert len(questions) == 1 and "plan" in questions[0]
    assert result.pull_requests == []


def test_pull_request_declined_rolls_back(tmp_path):
    answers = iter([True, False])  # approve the plan, decline the commit
    ws = seed_generated_app(tmp_path / "ws")
    before = tree_digest(ws)
    result = run(stock_config(tmp_path, "augmentation", mode="interactive"), confirm=lambda q: next(answers))
    assert result.per_subtask == {"ST-1": "handed_over"}
    assert "declined" in result.handovers[0].last_error
    assert tree_digest(ws) == before
    assert result.pull_requests == [] and result.commits == []


def test_aborted_run_persists_partial_results(tmp_path):
    doc = json.loads((FIXTURES / "script_generation.json").read_text())
    doc["entries"] = doc["entries"][:6]  # planning replies only
    result_path = tmp_path / "artifacts" / "generation" / "result.json"
    with pytest.raises(UnmatchedScriptError):
        run(stock_config(tmp_path, "generation"), provider=ScriptedProvider.from_document(doc))
    saved = json.loads(result_path.read_text())
    assert saved["per_subtask"] == {"ST-1": "handed_over", "ST-2": "handed_over", "ST-3": "handed_over"}
    assert saved["history"][-1]["outcome"] == "failed"


def test_generation_writes_run_artifacts(tmp_path):
    result = run(stock_config(tmp_path, "generation"))
    art = tmp_path / "artifacts"
    assert (art / "index.json").is_file()
    run_dir = art / "generation"
    for name in ("plan.json", "ledger.json", "result.json", "history.jsonl"):
        assert (run_dir / name).is_file(), name
    assert sorted(p.name for p in (run_dir / "reviews").iterdir()) == [
        "ST-1-attempt1.md", "ST-2-attempt1.md", "ST-3-attempt1.md"
    ]
    # One PR per run; later sub-tasks update it.
    assert [r.action_kind for r in result.history.records if r.action_kind.endswith("_pr")] == [
        "open_pr", "update_pr", "update_pr"
    ]
    assert [c.branch for c in result.commits] == ["almas/generation"] * 3
    body = result.pull_requests[0].body
    assert body.count("Recommendation:") == 3
    # The body is written at the last commit, before the closing index build is paid for.
    shown = Decimal(body.split("Ledger total: ")[1].split()[0])
    assert 0 < shown < result.ledger.total


def _generation_doc(edit):
    doc = json.loads((FIXTURES / "script_generation.json").read_text())
    notes = [e.get("note") for e in doc["entries"]]
    edit(doc["entries"], notes.index("review ST-1"))
    return ScriptedProvider.from_document(doc)


def test_provider_failure_mid_subtask_rolls_back_and_aborts(tmp_path):
    provider = _generation_doc(lambda entries, i: entries.__delitem__(slice(i, None)))
    with pytest.raises(UnmatchedScriptError):
        run(stock_config(tmp_path, "generation"), provider=provider)
    assert tree_files(tmp_path / "ws") == {}


def test_unusable_review_hands_the_subtask_over(tmp_path):
    doc = json.loads((FIXTURES / "script_augmentation.json").read_text())
    i = [e.get("note") for e in doc["entries"]].index("review ST-1")
    doc["entries"][i]["response_text"] = "looks fine to me"
    doc["entries"].insert(i + 1, dict(doc["entries"][i]))  # the reprompt gets the same non-answer
    ws = seed_generated_app(tmp_path / "ws")
    before = tree_digest(ws)
    result = run(stock_config(tmp_path, "augmentation"), provider=ScriptedProvider.from_document(doc))
    assert result.per_subtask == {"ST-1": "handed_over"} and result.exit_code == 3
    assert result.handovers[0].last_error.startswith("SchemaError")
    assert tree_digest(ws) == before
