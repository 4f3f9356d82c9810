"""Replay both phases of the stock-app fixture offline and print what happened.

    python3 scripts/replay_demo.py [--out DIR]

The generation phase builds the app into DIR/ws; the augmentation phase then
adds the average price chart to a fresh copy of the generated app in DIR/aug.
"""

from __future__ import annotations

import argparse
import json
import shutil
import tempfile
import time
from pathlib import Path

from almas import load_config, run

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "stock_app"


def replay(out: Path, phase: str, workspace: Path) -> None:
    config = load_config(
        FIXTURES / "config.json",
        phase=phase,
        repo_path=str(workspace),
        artifact_dir=str(out / f"{phase}-artifacts"),
    )
    start = time.perf_counter()
    result = run(config)
    elapsed = time.perf_counter() - start
    print(f"== {phase} ({elapsed:.1f} s, exit {result.exit_code})")
    for s in result.plan.subtasks:
        print(f"  {s.id} [{s.story_points} pt] {s.title}: {result.per_subtask[s.id]}")
    for pr in result.pull_requests:
        recommendation = pr.body.split("Recommendation: ")[-1].split()[0]
        print(f"  {pr.id} {pr.source_branch} -> {pr.target_branch} ({recommendation})")
    print(f"  {len(result.ledger)} provider calls, total cost {result.ledger.total}")
    print(f"  artifacts: {config.artifacts}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, help="output directory (default: a new temp dir)")
    args = ap.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="almas-demo-"))
    out.mkdir(parents=True, exist_ok=True)
    for name in ("ws", "aug", "generation-artifacts", "augmentation-artifacts"):
        if (out / name).exists():
            shutil.rmtree(out / name)

    replay(out, "generation", out / "ws")
    shutil.copytree(FIXTURES / "expected_generation", out / "aug", ignore=shutil.ignore_patterns("__pycache__"))
    replay(out, "augmentation", out / "aug")
    index = json.loads((out / "augmentation-artifacts" / "index.json").read_text())
    print(f"== index: {len(index['nodes'])} units, version {index['version']}")


if __name__ == "__main__":
    main()
