"""Control agent: let the model read the summary outline and pick code units."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AlmasWarning,
    EmptyLocalizationError,
    PreconditionError,
    SchemaError,
    StaleIndexError,
)
from .index import SummaryIndex, render_outline
from .prompting import ask_json
from .provider import Message, Provider, approx_tokens

DEFAULT_K = 5

SYSTEM = (
    "You are the control agent. You read a natural-language outline of a codebase "
    "and select the code units that must be read or changed to complete a sub-task. "
    "Reply with JSON only."
)


class DroppedSelectionWarning(AlmasWarning):
    pass


@dataclass(frozen=True)
class LocalizationQuery:
    subtask_id: str
    subtask_text: str
    error_log: str | None = None
    prior_selection: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.subtask_text.strip():
            raise PreconditionError("sub-task text must be non-empty")
        if self.error_log is not None and self.prior_selection is None:
            raise PreconditionError("an error log needs the prior selection it came from")
        if self.prior_selection is not None:
            object.__setattr__(self, "prior_selection", tuple(self.prior_selection))


@dataclass(frozen=True)
class Selection:
    unit_id: str
    rationale: str


@dataclass(frozen=True)
class Localization:
    selections: tuple[Selection, ...]
    outline_tokens_used: int
    repeat: bool = False

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(s.unit_id for s in self.selections)

    def to_dict(self) -> dict:
        return {
            "selections": [{"unit_id": s.unit_id, "rationale": s.rationale} for s in self.selections],
            "outline_tokens_used": self.outline_tokens_used,
            "repeat": self.repeat,
        }


@dataclass(frozen=True)
class Excerpt:
    unit_id: str
    path: str
    start_line: int
    source_text: str


@dataclass(frozen=True)
class ContextBundle:
    excerpts: tuple[Excerpt, ...]
    total_tokens: int
    oversized: bool = False  # the lone top excerpt was cut to fit

    def render(self) -> str:
        parts = []
        for e in self.excerpts:
            parts.append(f"--- {e.unit_id} ({e.path}, from line {e.start_line})\n{e.source_text}")
        return "\n\n".join(parts)


def _prompt(query: LocalizationQuery, outline: str, k: int) -> list[Message]:
    body = (
        f"Codebase outline (one line per code unit, `unit_id — summary`):\n{outline}\n\n"
        f"Sub-task {query.subtask_id}:\n{query.subtask_text}\n"
    )
    if query.error_log is not None:
        tried = "\n".join(f"- {u}" for u in query.prior_selection or ()) or "- (none)"
        body += (
            f"\nThe previous attempt failed. Units already tried:\n{tried}\n"
            f"\nFailing validation log:\n{query.error_log}\n"
        )
    body += (
        f"\nSelect at most {k} unit ids from the outline, most relevant first. "
        'Reply as {"selections": [{"unit_id": str, "rationale": str}]}.'
    )
    return [Message("system", SYSTEM), Message("user", body)]


def _parse_selection(value) -> list[tuple[str, str]]:
    raw = value["selections"]
    if not isinstance(raw, list):
        raise SchemaError("selections must be a list")
    out = []
    for item in raw:
        if isinstance(item, str):
            out.append((item, ""))
        else:
            out.append((str(item["unit_id"]), str(item.get("rationale", ""))))
    return out


def localize(
    query: LocalizationQuery,
    index: SummaryIndex,
    provider: Provider,
    k: int = DEFAULT_K,
    *,
    model: str,
    outline_tokens: int = 4000,
) -> Localization:
    if not len(index):
        raise PreconditionError("cannot localize against an empty index")
    if k < 1:
        raise PreconditionError("k must be >= 1")
    outline = render_outline(index, token_budget=outline_tokens)
    picked = ask_json(provider, model, _prompt(query, outline, k), _parse_selection)
    selections: list[Selection] = []
    seen = set()
    for uid, why in picked:
        if uid not in index:
            warnings.warn(f"dropped unknown unit id {uid!r}", DroppedSelectionWarning, stacklevel=2)
            continue
        if uid in seen:
            continue
        seen.add(uid)
        selections.append(Selection(uid, why))
    selections = selections[:k]
    if not selections:
        raise EmptyLocalizationError(f"{query.subtask_id}: no valid unit selected")
    repeat = query.prior_selection is not None and {s.unit_id for s in selections} == set(
        query.prior_selection
    )
    return Localization(tuple(selections), approx_tokens(outline), repeat)


def relocalize(
    query: LocalizationQuery,
    index: SummaryIndex,
    provider: Provider,
    k: int = DEFAULT_K,
    *,
    model: str,
    outline_tokens: int = 4000,
) -> Localization:
    if query.error_log is None or query.prior_selection is None:
        raise PreconditionError("relocalize needs an error log and the prior selection")
    return localize(query, index, provider, k, model=model, outline_tokens=outline_tokens)


def assemble_context(
    localization: Localization,
    repo_root: str | Path,
    index: SummaryIndex,
    token_budget: int,
) -> ContextBundle:
    """Slice each selected unit's source; drop lowest-ranked excerpts to fit."""
    if token_budget <= 0:
        raise PreconditionError("token budget must be > 0")
    root = Path(repo_root)
    excerpts = []
    for uid in localization.unit_ids:
        unit = index.nodes[uid].unit
        path = root / unit.path
        if not path.is_file():
            raise StaleIndexError(f"{unit.path} is indexed but missing on disk")
        lines = path.read_text(encoding="utf-8", errors="replace").splitlines(keepends=True)
        start, end = unit.span
        if end > max(len(lines), 1):
            raise StaleIndexError(f"{uid} spans past the end of {unit.path}")
        excerpts.append(Excerpt(uid, unit.path, start, "".join(lines[start - 1 : end])))

    kept = list(excerpts)
    while len(kept) > 1 and sum(approx_tokens(e.source_text) for e in kept) > token_budget:
        kept.pop()
    total = sum(approx_tokens(e.source_text) for e in kept)
    oversized = False
    if total > token_budget:
        top = kept[0]
        kept = [Excerpt(top.unit_id, top.path, top.start_line, top.source_text[: token_budget * 4])]
        total = approx_tokens(kept[0].source_text)
        oversized = True
    return ContextBundle(tuple(kept), total, oversized)
