from pathlib import Path

from conftest import FIXTURES, load_author


def files(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and "__pycache__" not in p.parts}


def test_committed_fixtures_match_the_author_script(tmp_path):
    out = tmp_path / "stock_app"
    load_author().author(out)
    assert files(out) == files(FIXTURES), "fixtures are stale; rerun scripts/author_fixtures.py"
