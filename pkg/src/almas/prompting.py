"""Structured replies: lenient JSON extraction with a single reprompt."""

from __future__ import annotations

import json
import re
from typing import Callable, Sequence, TypeVar

from .errors import SchemaError
from .provider import CompletionRequest, CompletionResponse, Message, Provider

T = TypeVar("T")

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_json(text: str):
    """Return the first JSON value found in ``text``.

    Accepts bare JSON, JSON inside a fenced block, or JSON surrounded by
    chatter. Raises ``SchemaError`` when nothing decodes.
    """
    candidates = [text.strip()]
    candidates += [m.group(1).strip() for m in _FENCE.finditer(text)]
    for c in candidates:
        try:
            return json.loads(c)
        except ValueError:
            pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text, i)
                return value
            except ValueError:
                continue
    raise SchemaError("reply contains no JSON value")


def ask(
    provider: Provider,
    model: str,
    messages: Sequence[Message],
    *,
    max_output_tokens: int = 2048,
) -> CompletionResponse:
    return provider.complete(
        CompletionRequest(model_id=model, messages=tuple(messages), max_output_tokens=max_output_tokens)
    )


def ask_parsed(
    provider: Provider,
    model: str,
    messages: Sequence[Message],
    parse: Callable[[str], T],
    *,
    max_output_tokens: int = 2048,
    error: type[SchemaError] = SchemaError,
) -> T:
    """Ask, parse, and on failure reprompt once with the parse error attached."""
    messages = list(messages)
    reply = ask(provider, model, messages, max_output_tokens=max_output_tokens)
    try:
        return parse(reply.text)
    except (SchemaError, ValueError, KeyError, TypeError, AttributeError) as exc:
        first = exc
    messages += [
        Message("assistant", reply.text),
        Message(
            "user",
            f"Your previous reply could not be used: {first}. "
            "Answer again, following the required format exactly.",
        ),
    ]
    reply = ask(provider, model, messages, max_output_tokens=max_output_tokens)
    try:
        return parse(reply.text)
    except (SchemaError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise error(f"unparseable reply after reprompt: {exc}") from exc


def ask_json(provider, model, messages, parse: Callable[[object], T], **kw) -> T:
    return ask_parsed(provider, model, messages, lambda text: parse(extract_json(text)), **kw)
