import json
from decimal import Decimal
from fractions import Fraction

import httpx
import pytest
from hypothesis import given, strategies as st

from almas.errors import (
    DuplicateError,
    PreconditionError,
    ProviderError,
    TransportError,
    UnknownModelError,
    UnmatchedScriptError,
)
from almas.provider import (
    CompletionRequest,
    CompletionResponse,
    CostLedger,
    LedgerEntry,
    Message,
    MeteredProvider,
    NetworkProvider,
    ScriptEntry,
    ScriptedProvider,
    approx_tokens,
    cost_of,
    inventory_by_id,
    money,
    prompt_fingerprint,
    script_document,
)

from conftest import profile


def req(text="hi", model="m"):
    return CompletionRequest(model, (Message("user", text),))


def test_money_rounds_half_even_to_micro_units():
    assert money("0.0000005") == Decimal("0.000000")
    assert money("0.0000015") == Decimal("0.000002")
    assert money(0.1) == Decimal("0.100000")


def test_approx_tokens():
    assert [approx_tokens(s) for s in ("", "a", "abcd", "abcde")] == [0, 1, 1, 2]


@pytest.mark.parametrize(
    "kw",
    [dict(inp="-1"), dict(q=1.5), dict(id="")],
)
def test_model_profile_rejects_bad_values(kw):
    with pytest.raises(PreconditionError):
        profile(**kw)


def test_inventory_rejects_duplicate_ids():
    with pytest.raises(PreconditionError):
        inventory_by_id([profile("a"), profile("a")])


def test_request_validation():
    with pytest.raises(PreconditionError):
        CompletionRequest("m", ())
    with pytest.raises(PreconditionError):
        CompletionRequest("m", (Message("assistant", "x"),))
    with pytest.raises(PreconditionError):
        CompletionRequest("m", (Message("user", "x"),), max_output_tokens=0)


@given(st.lists(st.text(min_size=1), min_size=1, max_size=4), st.sampled_from([" ", "\n", "\t ", "  \n"]))
def test_fingerprint_ignores_whitespace_runs(words, sep):
    a = [Message("user", " ".join(words))]
    b = [Message("user", sep + sep.join(words) + sep)]
    assert prompt_fingerprint(a) == prompt_fingerprint(b)


def test_fingerprint_separates_roles():
    assert prompt_fingerprint([("system", "x")]) != prompt_fingerprint([("user", "x")])


@given(
    st.integers(0, 10**7),
    st.integers(0, 10**7),
    st.decimals(min_value=0, max_value=1, places=6, allow_nan=False),
    st.decimals(min_value=0, max_value=1, places=6, allow_nan=False),
)
def test_cost_matches_rational_oracle(pt, ct, in_rate, out_rate):
    p = profile(inp=str(in_rate), out=str(out_rate))
    exact = Fraction(pt, 1000) * Fraction(str(in_rate)) + Fraction(ct, 1000) * Fraction(str(out_rate))
    # round-half-even at 1e-6 on the exact rational
    scaled = exact * 10**6
    floor = scaled.numerator // scaled.denominator
    rem = scaled - floor
    micro = floor + (1 if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and floor % 2) else 0)
    assert cost_of(CompletionResponse("", pt, ct), p) == Decimal(micro) / 10**6


def test_scripted_keyed_entries_are_reusable_and_ordered_are_consumed():
    key = req("keyed  prompt").fingerprint()
    sp = ScriptedProvider(
        [ScriptEntry("K", 1, 1, match_key=key), ScriptEntry("first", 2, 2), ScriptEntry("second", 3, 3)]
    )
    assert sp.complete(req("keyed prompt")).text == "K"
    assert sp.complete(req("other")).text == "first"
    assert sp.complete(req("keyed\nprompt")).text == "K"
    assert sp.complete(req("other")).text == "second"
    assert sp.remaining == 0
    with pytest.raises(UnmatchedScriptError):
        sp.complete(req("other"))


def test_scripted_document_round_trip(tmp_path):
    doc = script_document([ScriptEntry("a", 1, 2, note="n")], models=["m"])
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    sp = ScriptedProvider.load(path)
    assert sp.complete(req()).prompt_tokens == 1
    with pytest.raises(UnknownModelError):
        ScriptedProvider.load(path).complete(req(model="other"))


def test_scripted_rejects_unknown_schema_version():
    with pytest.raises(ProviderError):
        ScriptedProvider.from_document({"schema_version": 99, "entries": []})


def test_ledger_rejects_duplicate_call_ids():
    ledger = CostLedger()
    ledger.append(LedgerEntry("C-1", "m", 1, 1, Decimal("0.1")))
    with pytest.raises(DuplicateError):
        ledger.append(LedgerEntry("C-1", "m", 1, 1, Decimal("0.1")))
    assert ledger.total == Decimal("0.1")


def test_metered_provider_ids_and_unknown_model():
    sp = ScriptedProvider([ScriptEntry("x", 1000, 500)] * 3)
    mp = MeteredProvider(sp, inventory_by_id([profile("m", inp="0.002", out="0.004")]))
    mp.complete(req())
    mp.complete(req())
    assert [e.call_id for e in mp.ledger.entries] == ["C-0001", "C-0002"]
    assert mp.ledger.total == Decimal("0.008")
    with pytest.raises(UnknownModelError):
        mp.complete(req(model="nope"))
    assert len(mp.ledger) == 2


def _network(handler, monkeypatch, **kw):
    monkeypatch.setenv("TEST_KEY", "secret")
    sleeps = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    np = NetworkProvider("https://llm.example/v1", "TEST_KEY", ["m"], client=client, sleep=sleeps.append, **kw)
    return np, sleeps


def _ok(text="done"):
    body = {
        "choices": [{"message": {"content": text}, "finish_reason": "length"}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3},
    }
    return httpx.Response(200, json=body)


def test_network_retries_transient_status_with_backoff(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(503) if len(seen) < 3 else _ok()

    np, sleeps = _network(handler, monkeypatch, backoff=0.25)
    resp = np.complete(req())
    assert (resp.text, resp.prompt_tokens, resp.completion_tokens, resp.finish_reason) == ("done", 7, 3, "truncated")
    assert sleeps == [0.25, 0.5]
    assert seen[0].headers["authorization"] == "Bearer secret"
    assert json.loads(seen[0].content)["messages"] == [{"role": "user", "content": "hi"}]


def test_network_gives_up_after_attempts(monkeypatch):
    np, _ = _network(lambda r: httpx.Response(429), monkeypatch)
    with pytest.raises(TransportError):
        np.complete(req())


def test_network_client_error_is_not_retried(monkeypatch):
    calls = []
    np, _ = _network(lambda r: calls.append(r) or httpx.Response(400, text="bad"), monkeypatch)
    with pytest.raises(ProviderError):
        np.complete(req())
    assert len(calls) == 1


def test_network_requires_token(monkeypatch):
    np, _ = _network(lambda r: _ok(), monkeypatch)
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(ProviderError, match="TEST_KEY"):
        np.complete(req())
