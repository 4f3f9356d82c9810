"""Peer agent: rubric review of a diff and the report attached to the pull request."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .errors import PreconditionError, SchemaError
from .prompting import ask_json
from .provider import Message, Provider

CATEGORIES = ("functionality", "vulnerability", "performance", "hallucination", "quality")
SEVERITIES = ("info", "warn", "block")
VERDICTS = ("met", "unmet", "unclear")
RECOMMENDATIONS = ("approve", "request_changes")

RUBRIC = {
    "functionality": "does the change do what the acceptance criteria ask",
    "vulnerability": "injection, unsafe deserialization, secrets, unchecked input",
    "performance": "needless quadratic work, repeated I/O, unbounded memory",
    "hallucination": "calls to APIs, modules or fields that do not exist",
    "quality": "naming, structure, tests, dead code",
}

SYSTEM = (
    "You are the peer review agent. Review code changes like a careful senior "
    "engineer and reply with JSON only."
)

_DIFF_PATH = re.compile(r"^diff --git a/(\S+) b/(\S+)$", re.M)
_PLUS_PATH = re.compile(r"^\+\+\+ b/(\S+)$", re.M)
_MINUS_PATH = re.compile(r"^--- a/(\S+)$", re.M)


@dataclass(frozen=True)
class ReviewFinding:
    category: str
    severity: str
    note: str
    path: str | None = None
    lines: tuple[int, int] | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"unknown finding category {self.category!r}")
        if self.severity not in SEVERITIES:
            raise SchemaError(f"unknown severity {self.severity!r}")
        if not self.note.strip():
            raise SchemaError("finding note must be non-empty")

    def sort_key(self):
        return (
            CATEGORIES.index(self.category),
            self.path or "",
            self.lines[0] if self.lines else 0,
        )

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "severity": self.severity,
            "path": self.path,
            "lines": list(self.lines) if self.lines else None,
            "note": self.note,
        }


def derive_recommendation(
    findings: Sequence[ReviewFinding], verdicts: Mapping[str, str]
) -> str:
    if any(f.severity == "block" for f in findings) or any(v == "unmet" for v in verdicts.values()):
        return "request_changes"
    return "approve"


@dataclass(frozen=True)
class ReviewReport:
    findings: tuple[ReviewFinding, ...]
    criterion_verdicts: Mapping[str, str]
    files: tuple[str, ...] = ()
    recommendation: str = ""
    rendered: str = ""

    def __post_init__(self):
        derived = derive_recommendation(self.findings, self.criterion_verdicts)
        if not self.recommendation:
            object.__setattr__(self, "recommendation", derived)
        elif self.recommendation != derived:
            raise PreconditionError(
                f"recommendation {self.recommendation!r} contradicts findings ({derived!r})"
            )

    def to_dict(self) -> dict:
        return {
            "findings": [f.to_dict() for f in self.findings],
            "criterion_verdicts": dict(self.criterion_verdicts),
            "files": list(self.files),
            "recommendation": self.recommendation,
        }


def diff_paths(diff_text: str) -> list[str]:
    """Changed paths in a unified diff, in first-seen order."""
    seen: dict[str, None] = {}
    for m in _DIFF_PATH.finditer(diff_text):
        seen.setdefault(m.group(2), None)
    if not seen:
        for rx in (_PLUS_PATH, _MINUS_PATH):
            for m in rx.finditer(diff_text):
                seen.setdefault(m.group(1), None)
    return list(seen)


def _parse_review(value, criteria: Sequence[str]):
    raw = value.get("findings") or []
    if not isinstance(raw, list):
        raise SchemaError("findings must be a list")
    findings = []
    for f in raw:
        start, end = f.get("start_line"), f.get("end_line")
        lines = None
        if start is not None:
            lines = (int(start), int(end if end is not None else start))
        findings.append(
            ReviewFinding(
                category=str(f["category"]).lower(),
                severity=str(f["severity"]).lower(),
                note=str(f.get("note", "")),
                path=f.get("path"),
                lines=lines,
            )
        )
    raw_verdicts = value.get("verdicts") or []
    if not isinstance(raw_verdicts, list):
        raise SchemaError("verdicts must be a list aligned with the criteria")
    verdicts = {}
    for i, c in enumerate(criteria):
        v = str(raw_verdicts[i]).lower() if i < len(raw_verdicts) else "unclear"
        if v not in VERDICTS:
            raise SchemaError(f"unknown verdict {v!r}")
        verdicts[c] = v
    return tuple(sorted(findings, key=ReviewFinding.sort_key)), verdicts


def review(
    diff_text: str, acceptance_criteria: Sequence[str], provider: Provider, *, model: str
) -> ReviewReport:
    """Review a diff. The recommendation is derived locally, never read from the model."""
    if not diff_text.strip():
        raise PreconditionError("nothing to review: empty diff")
    if not acceptance_criteria:
        raise PreconditionError("review needs at least one acceptance criterion")
    rubric = "\n".join(f"- {c}: {d}" for c, d in RUBRIC.items())
    numbered = "\n".join(f"{i}. {c}" for i, c in enumerate(acceptance_criteria, start=1))
    body = (
        f"Review this change.\n\n```diff\n{diff_text}```\n\n"
        f"Acceptance criteria:\n{numbered}\n\n"
        f"Check each category:\n{rubric}\n\n"
        'Reply as {"findings": [{"category": str, "severity": "info"|"warn"|"block", '
        '"path": str, "start_line": int, "end_line": int, "note": str}], '
        '"verdicts": ["met"|"unmet"|"unclear", one per criterion in order]}.'
    )
    findings, verdicts = ask_json(
        provider,
        model,
        [Message("system", SYSTEM), Message("user", body)],
        lambda v: _parse_review(v, acceptance_criteria),
    )
    report = ReviewReport(findings, verdicts, tuple(diff_paths(diff_text)))
    return replace(report, rendered=render(report))


def _cell(text: str) -> str:
    return " ".join(text.split()).replace("|", "\\|")


def render(report: ReviewReport) -> str:
    rec = report.recommendation
    findings = sorted(report.findings, key=ReviewFinding.sort_key)
    blocking = sum(1 for f in findings if f.severity == "block")
    met = sum(1 for v in report.criterion_verdicts.values() if v == "met")
    lines = [
        f"# Peer review: {rec}",
        "",
        f"{len(findings)} finding(s), {blocking} blocking; "
        f"{met}/{len(report.criterion_verdicts)} acceptance criteria met.",
        "",
        "## Files reviewed",
        "",
    ]
    lines += [f"- `{p}`" for p in report.files] or ["- (none)"]
    lines += ["", "## Acceptance criteria", ""]
    mark = {"met": "x", "unmet": " ", "unclear": "?"}
    for c, v in report.criterion_verdicts.items():
        lines.append(f"- [{mark[v]}] {c} ({v})")
    lines += ["", "## Findings"]
    for cat in CATEGORIES:
        rows = [f for f in findings if f.category == cat]
        lines += ["", f"### {cat}", ""]
        if not rows:
            lines.append("No findings.")
            continue
        lines += ["| severity | location | note |", "| --- | --- | --- |"]
        for f in rows:
            loc = f.path or "-"
            if f.path and f.lines:
                loc += f":{f.lines[0]}-{f.lines[1]}"
            lines.append(f"| {f.severity} | {_cell(loc)} | {_cell(f.note)} |")
    lines += ["", f"Recommendation: {rec}", ""]
    return "\n".join(lines)


def gate(report: ReviewReport, policy: str = "advisory") -> bool:
    if policy == "advisory":
        return True
    if policy == "enforcing":
        return report.recommendation == "approve"
    raise PreconditionError(f"unknown gate policy {policy!r}")
