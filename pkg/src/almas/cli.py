"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
3 at least one sub-task was handed over. The last line on stderr is always
``almas: status=<word> exit=<n>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import localizer, review as peer
from .config import RunConfig, load_config
from .errors import ConfigError, PreconditionError
from .index import build_index, load_index, render_outline, save_index, update_index
from .orchestrator import ensure_index, load_task, open_services, plan_task, run
from .planner import SprintPlan

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_HANDOVER = 0, 1, 2, 3
_STATUS = {EXIT_OK: "ok", EXIT_INTERNAL: "error", EXIT_CONFIG: "config_error", EXIT_HANDOVER: "handed_over"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="almas", description="Agent pipeline for planning, coding and reviewing.")
    ap.add_argument("--config", default="almas.json", help="run config file (JSON)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    idx = sub.add_parser("index", help="build or update the summary index")
    idx_sub = idx.add_subparsers(dest="action", required=True)
    b = idx_sub.add_parser("build")
    b.add_argument("--repo")
    u = idx_sub.add_parser("update")
    u.add_argument("--repo")
    u.add_argument("--changed", nargs="+", required=True)

    p = sub.add_parser("plan", help="assess, decompose and estimate a task")
    p.add_argument("--task-file")
    p.add_argument("--phase", choices=("generation", "augmentation"))

    loc = sub.add_parser("localize", help="select code units for one planned sub-task")
    loc.add_argument("--subtask", required=True)
    loc.add_argument("--k", type=int)
    loc.add_argument("--phase", choices=("generation", "augmentation"), default="augmentation")

    r = sub.add_parser("run", help="run a full phase")
    r.add_argument("--phase", choices=("generation", "augmentation"), required=True)
    r.add_argument("--mode", choices=("autonomous", "interactive"))

    rv = sub.add_parser("review", help="review a diff against acceptance criteria")
    rv.add_argument("--diff", required=True)
    rv.add_argument("--criteria", required=True, help="text file, one criterion per line")
    return ap


def _services(config: RunConfig):
    return open_services(config)


def _cmd_index(args, config: RunConfig) -> int:
    services = _services(config)
    model = services.models["summarize"]
    if args.action == "build":
        index = build_index(config.repo_path, services.parser, services.provider, model=model)
    else:
        if not services.index_path.exists():
            raise PreconditionError(f"no index at {services.index_path}; run 'almas index build' first")
        index = update_index(
            load_index(services.index_path), args.changed, config.repo_path, services.parser,
            services.provider, model=model,
        )
    save_index(index, services.index_path)
    print(json.dumps({"index": str(services.index_path), "units": len(index), "fingerprint": index.repo_fingerprint}))
    return EXIT_OK


def _cmd_plan(args, config: RunConfig) -> int:
    services = _services(config)
    outline = None
    if config.phase == "augmentation":
        outline = render_outline(ensure_index(services), token_budget=config.budgets.outline_tokens)
    plan = plan_task(services, load_task(config), outline)
    path = services.run_dir / "plan.json"
    path.write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(json.dumps(plan.to_dict(), indent=2))
    return EXIT_OK


def _cmd_localize(args, config: RunConfig) -> int:
    services = _services(config)
    plan_path = services.run_dir / "plan.json"
    if not plan_path.exists():
        raise PreconditionError(f"no plan at {plan_path}; run 'almas plan' first")
    plan = SprintPlan.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))
    subtask = plan.get(args.subtask)
    index = load_index(services.index_path)
    query = localizer.LocalizationQuery(
        subtask.id, f"{subtask.title}\n{subtask.description}\n" + "\n".join(subtask.acceptance_criteria)
    )
    loc = localizer.localize(
        query, index, services.provider, args.k or config.budgets.k,
        model=services.models["localize"], outline_tokens=config.budgets.outline_tokens,
    )
    print(json.dumps(loc.to_dict(), indent=2))
    return EXIT_OK


def _cmd_run(args, config: RunConfig) -> int:
    result = run(config)
    print(json.dumps({"per_subtask": result.per_subtask, "ledger_total": str(result.ledger.total)}))
    return result.exit_code


def _cmd_review(args, config: RunConfig) -> int:
    services = _services(config)
    diff = Path(args.diff).read_text(encoding="utf-8")
    criteria = [c.strip() for c in Path(args.criteria).read_text(encoding="utf-8").splitlines() if c.strip()]
    report = peer.review(diff, criteria, services.provider, model=services.models["review"])
    print(report.rendered)
    return EXIT_OK


COMMANDS = {
    "index": _cmd_index,
    "plan": _cmd_plan,
    "localize": _cmd_localize,
    "run": _cmd_run,
    "review": _cmd_review,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = EXIT_OK if exc.code == 0 else EXIT_CONFIG
        print(f"almas: status={_STATUS[code]} exit={code}", file=sys.stderr)
        return code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {"phase": getattr(args, "phase", None), "mode": getattr(args, "mode", None)}
        if getattr(args, "task_file", None):
            overrides["task_path"] = str(Path(args.task_file).resolve())
        if getattr(args, "repo", None):
            overrides["repo_path"] = str(Path(args.repo).resolve())
        config = load_config(args.config, **overrides)
        code = COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"almas: config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001  (top-level boundary)
        logging.getLogger("almas").debug("unhandled", exc_info=True)
        print(f"almas: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    print(f"almas: status={_STATUS[code]} exit={code}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
