"""Provider gateway: chat-completion access, token accounting and scripted replay."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .errors import (
    DuplicateError,
    PreconditionError,
    ProviderError,
    TransportError,
    UnknownModelError,
    UnmatchedScriptError,
)

log = logging.getLogger(__name__)

MICRO = Decimal("0.000001")
ROLES = ("system", "user", "assistant")
FINISH_REASONS = ("complete", "truncated", "error")
SCRIPT_SCHEMA_VERSION = 1


def money(value) -> Decimal:
    """Coerce to a fixed-point amount with micro-unit resolution."""
    if isinstance(value, float):
        value = repr(value)
    return Decimal(value).quantize(MICRO, rounding=ROUND_HALF_EVEN)


def approx_tokens(text: str) -> int:
    """Provider-independent token estimate (4 characters per token)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ModelProfile:
    id: str
    capability_tags: frozenset[str]
    input_rate: Decimal
    output_rate: Decimal
    context_window: int
    quality_score: float

    def __post_init__(self):
        object.__setattr__(self, "capability_tags", frozenset(self.capability_tags))
        object.__setattr__(self, "input_rate", Decimal(str(self.input_rate)))
        object.__setattr__(self, "output_rate", Decimal(str(self.output_rate)))
        if not self.id:
            raise PreconditionError("model id must be non-empty")
        if self.input_rate < 0 or self.output_rate < 0:
            raise PreconditionError(f"{self.id}: rates must be >= 0")
        if self.context_window <= 0:
            raise PreconditionError(f"{self.id}: context_window must be > 0")
        if not 0.0 <= self.quality_score <= 1.0:
            raise PreconditionError(f"{self.id}: quality_score must be in [0, 1]")

    @property
    def rate_proxy(self) -> Decimal:
        return self.input_rate + self.output_rate

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelProfile:
        return cls(
            id=data["id"],
            capability_tags=frozenset(data.get("capability_tags", ())),
            input_rate=Decimal(str(data["input_rate"])),
            output_rate=Decimal(str(data["output_rate"])),
            context_window=int(data.get("context_window", 128000)),
            quality_score=float(data.get("quality_score", 0.5)),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "capability_tags": sorted(self.capability_tags),
            "input_rate": str(self.input_rate),
            "output_rate": str(self.output_rate),
            "context_window": self.context_window,
            "quality_score": self.quality_score,
        }


def inventory_by_id(profiles: Iterable[ModelProfile]) -> dict[str, ModelProfile]:
    out: dict[str, ModelProfile] = {}
    for p in profiles:
        if p.id in out:
            raise PreconditionError(f"duplicate model id in inventory: {p.id}")
        out[p.id] = p
    return out


@dataclass(frozen=True)
class Message:
    role: str
    text: str


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[Message, ...]
    max_output_tokens: int = 2048
    temperature: float = 0.0

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise PreconditionError("request messages must be non-empty")
        if msgs[0].role not in ("system", "user"):
            raise PreconditionError("first message must be a system or user message")
        for m in msgs:
            if m.role not in ROLES:
                raise PreconditionError(f"unknown message role {m.role!r}")
        if self.max_output_tokens <= 0:
            raise PreconditionError("max_output_tokens must be > 0")
        if self.temperature < 0:
            raise PreconditionError("temperature must be >= 0")

    def normalized_prompt(self) -> str:
        return "\n".join(f"{m.role}:{' '.join(m.text.split())}" for m in self.messages)

    def fingerprint(self) -> str:
        return prompt_fingerprint(self.messages)


def prompt_fingerprint(messages: Sequence[Message | tuple[str, str]]) -> str:
    """Stable match key: sha256 over whitespace-collapsed ``role:text`` lines."""
    lines = []
    for m in messages:
        role, text = (m.role, m.text) if isinstance(m, Message) else m
        lines.append(f"{role}:{' '.join(text.split())}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    finish_reason: str = "complete"

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise PreconditionError("token counts must be >= 0")
        if self.finish_reason not in FINISH_REASONS:
            raise PreconditionError(f"unknown finish_reason {self.finish_reason!r}")


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def complete(request: CompletionRequest, provider: Provider) -> CompletionResponse:
    return provider.complete(request)


def cost_of(response: CompletionResponse, profile: ModelProfile) -> Decimal:
    exact = (
        Decimal(response.prompt_tokens) / 1000 * profile.input_rate
        + Decimal(response.completion_tokens) / 1000 * profile.output_rate
    )
    return money(exact)


@dataclass(frozen=True)
class LedgerEntry:
    call_id: str
    model_id: str
    prompt_tokens: int
    completion_tokens: int
    cost: Decimal

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "model_id": self.model_id,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": str(self.cost),
        }


class CostLedger:
    """Append-only record of every provider call and what it cost."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()):
        self._entries: list[LedgerEntry] = []
        self._ids: set[str] = set()
        self._total = money(0)
        self._lock = threading.Lock()
        for e in entries:
            self._append(e)

    def _append(self, entry: LedgerEntry) -> None:
        if entry.call_id in self._ids:
            raise DuplicateError(f"duplicate call id {entry.call_id}")
        self._entries.append(entry)
        self._ids.add(entry.call_id)
        self._total += entry.cost

    def append(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._append(entry)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    @property
    def total(self) -> Decimal:
        return self._total

    def __len__(self) -> int:
        return len(self._entries)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self._entries], "total": str(self._total)}


def record_usage(
    ledger: CostLedger,
    call_id: str,
    model_id: str,
    response: CompletionResponse,
    profile: ModelProfile,
) -> CostLedger:
    ledger.append(
        LedgerEntry(
            call_id=call_id,
            model_id=model_id,
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            cost=cost_of(response, profile),
        )
    )
    return ledger


# -- scripted provider -------------------------------------------------------


@dataclass(frozen=True)
class ScriptEntry:
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    match_key: str | None = None
    note: str = ""

    def to_dict(self) -> dict:
        d = {
            "match_key": self.match_key,
            "response_text": self.response_text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }
        if self.note:
            d["note"] = self.note
        return d


class ScriptedProvider:
    """Replays pinned responses.

    Entries with a ``match_key`` are looked up by prompt fingerprint and may
    be hit any number of times. Entries without one are consumed in order for
    requests that match no key.
    """

    def __init__(self, entries: Iterable[ScriptEntry], models: Iterable[str] | None = None):
        self.keyed: dict[str, ScriptEntry] = {}
        self.ordered: list[ScriptEntry] = []
        for e in entries:
            if e.match_key:
                self.keyed[e.match_key] = e
            else:
                self.ordered.append(e)
        self.models = set(models) if models is not None else None
        self._cursor = 0
        self._lock = threading.Lock()
        self.requests: list[CompletionRequest] = []

    @classmethod
    def load(cls, path: str | Path) -> ScriptedProvider:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_document(doc)

    @classmethod
    def from_document(cls, doc: Mapping) -> ScriptedProvider:
        version = doc.get("schema_version")
        if version != SCRIPT_SCHEMA_VERSION:
            raise ProviderError(f"unsupported script schema_version {version!r}")
        entries = [
            ScriptEntry(
                response_text=r["response_text"],
                prompt_tokens=int(r["prompt_tokens"]),
                completion_tokens=int(r["completion_tokens"]),
                match_key=r.get("match_key"),
                note=r.get("note", ""),
            )
            for r in doc["entries"]
        ]
        return cls(entries, models=doc.get("models"))

    @property
    def remaining(self) -> int:
        return len(self.ordered) - self._cursor

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.models is not None and request.model_id not in self.models:
            raise UnknownModelError(f"unknown model {request.model_id!r}")
        key = request.fingerprint()
        with self._lock:
            self.requests.append(request)
            entry = self.keyed.get(key)
            if entry is None:
                if self._cursor >= len(self.ordered):
                    raise UnmatchedScriptError(
                        f"unmatched script entry for prompt fingerprint {key[:12]}"
                    )
                entry = self.ordered[self._cursor]
                self._cursor += 1
        return CompletionResponse(
            text=entry.response_text,
            prompt_tokens=entry.prompt_tokens,
            completion_tokens=entry.completion_tokens,
        )


def script_document(entries: Iterable[ScriptEntry], models: Sequence[str] | None = None) -> dict:
    doc: dict = {"schema_version": SCRIPT_SCHEMA_VERSION, "entries": [e.to_dict() for e in entries]}
    if models is not None:
        doc["models"] = list(models)
    return doc


class FunctionProvider:
    """Deterministic provider computing each reply from the request."""

    def __init__(self, fn: Callable[[CompletionRequest], str]):
        self.fn = fn
        self.requests: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.requests.append(request)
        text = self.fn(request)
        return CompletionResponse(
            text=text,
            prompt_tokens=approx_tokens(request.normalized_prompt()),
            completion_tokens=approx_tokens(text),
        )


# -- network provider --------------------------------------------------------


class NetworkProvider:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        api_key_env: str,
        models: Iterable[str] | None = None,
        *,
        client=None,
        attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 120.0,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.models = set(models) if models is not None else None
        self.client = client or httpx.Client(timeout=timeout)
        self.attempts = attempts
        self.backoff = backoff
        self.sleep = sleep

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}"}

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import httpx

        if self.models is not None and request.model_id not in self.models:
            raise UnknownModelError(f"unknown model {request.model_id!r}")
        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.text} for m in request.messages],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }
        headers = self._headers()
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(
                    f"{self.base_url}/chat/completions", json=payload, headers=headers
                )
            except httpx.HTTPError as exc:
                last = exc
                log.warning("provider transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last = ProviderError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            body = resp.json()
            choice = body["choices"][0]
            usage = body.get("usage", {})
            finish = {"stop": "complete", "length": "truncated"}.get(
                choice.get("finish_reason"), "complete"
            )
            return CompletionResponse(
                text=choice["message"]["content"] or "",
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                finish_reason=finish,
            )
        raise TransportError(f"provider failed after {self.attempts} attempts: {last}")


# -- metering ----------------------------------------------------------------


@dataclass
class MeteredProvider:
    """Wraps a provider so every call lands in the ledger exactly once."""

    inner: Provider
    inventory: Mapping[str, ModelProfile]
    ledger: CostLedger = field(default_factory=CostLedger)
    prefix: str = "C"
    _counter: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        profile = self.inventory.get(request.model_id)
        if profile is None:
            raise UnknownModelError(f"model {request.model_id!r} not in inventory")
        response = self.inner.complete(request)
        with self._lock:
            self._counter += 1
            call_id = f"{self.prefix}-{self._counter:04d}"
            record_usage(self.ledger, call_id, request.model_id, response, profile)
        return response
