"""Run configuration: one JSON document, optional per-phase overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .developer import ValidationConfig
from .errors import ConfigError, PreconditionError
from .planner import DEFAULT_SCALE
from .provider import ModelProfile, inventory_by_id
from .supervisor import DEFAULT_MAX_ATTEMPTS, RoutingPolicy

PHASES = ("generation", "augmentation")
MODES = ("autonomous", "interactive")


@dataclass(frozen=True)
class Budgets:
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    context_tokens: int = 6000
    outline_tokens: int = 3000
    k: int = 5

    def __post_init__(self):
        for name in ("max_attempts", "context_tokens", "outline_tokens", "k"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"budgets.{name} must be positive")


@dataclass(frozen=True)
class RunConfig:
    repo_path: Path
    inventory: tuple[ModelProfile, ...]
    phase: str = "generation"
    mode: str = "autonomous"
    policy: RoutingPolicy = field(default_factory=RoutingPolicy)
    budgets: Budgets = field(default_factory=Budgets)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    provider: Mapping[str, Any] = field(default_factory=lambda: {"kind": "scripted"})
    task_path: Path | None = None
    few_shot_path: Path | None = None
    artifact_dir: Path | None = None
    story_point_scale: tuple[int, ...] = DEFAULT_SCALE
    review_gate: str = "advisory"
    tracker: Mapping[str, Any] = field(default_factory=lambda: {"kind": "local"})
    pulls: Mapping[str, Any] = field(default_factory=lambda: {"kind": "local"})
    base_branch: str = "main"
    commit_date: str | None = None
    greenfield: bool = False
    handover_summaries: bool = False

    def __post_init__(self):
        if not self.inventory:
            raise ConfigError("inventory must list at least one model")
        try:
            inventory_by_id(self.inventory)
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.review_gate not in ("advisory", "enforcing"):
            raise ConfigError("review_gate must be advisory or enforcing")
        if self.provider.get("kind") not in ("scripted", "network"):
            raise ConfigError("provider.kind must be scripted or network")

    @property
    def artifacts(self) -> Path:
        if self.artifact_dir is not None:
            return self.artifact_dir
        repo = self.repo_path.resolve()
        return repo.parent / f"{repo.name}.almas"

    @property
    def meta_dir(self) -> Path:
        return self.repo_path / ".almas"


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(data: Mapping, base_dir: str | Path = ".", **overrides) -> RunConfig:
    base = Path(base_dir)
    data = dict(data)
    phase = overrides.get("phase") or data.get("phase", "generation")
    data.update((data.get("phases") or {}).get(phase, {}))
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        provider = dict(data.get("provider", {"kind": "scripted"}))
        if "script" in provider:
            provider["script"] = str(_path(base, provider["script"]))
        budgets = data.get("budgets", {})
        return RunConfig(
            repo_path=_path(base, data["repo_path"]),
            inventory=tuple(ModelProfile.from_dict(m) for m in data.get("inventory", [])),
            phase=phase,
            mode=data.get("mode", "autonomous"),
            policy=RoutingPolicy.from_dict(data.get("policy", {})),
            budgets=Budgets(**budgets),
            validation=ValidationConfig.from_dict(data.get("validation", {})),
            provider=provider,
            task_path=_path(base, data.get("task_path")),
            few_shot_path=_path(base, data.get("few_shot_path")),
            artifact_dir=_path(base, data.get("artifact_dir")),
            story_point_scale=tuple(data.get("story_point_scale", DEFAULT_SCALE)),
            review_gate=data.get("review_gate", "advisory"),
            tracker=data.get("tracker", {"kind": "local"}),
            pulls=data.get("pulls", {"kind": "local"}),
            base_branch=data.get("base_branch", "main"),
            commit_date=data.get("commit_date"),
            greenfield=bool(data.get("greenfield", False)),
            handover_summaries=bool(data.get("handover_summaries", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc!r}") from exc


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, path.parent, **overrides)


def load_few_shot(path: Path | None) -> list[tuple[str, int]]:
    """Few-shot estimation examples: ``[{"description": str, "points": int}, ...]``."""
    if path is None:
        return []
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(r["description"], int(r["points"])) for r in records]
