import json
import shutil

import pytest
from hypothesis import given, settings, strategies as st

from almas.errors import NotFoundError, PreconditionError
from almas.index import (
    ParseWarning,
    build_index,
    changed_files,
    clamp_summary,
    extract_units,
    fingerprint,
    is_indexable,
    load_index,
    lookup_unit,
    parse_outline_ids,
    render_outline,
    save_index,
    scan_repo,
    update_index,
)
from almas.provider import FunctionProvider

from conftest import summarizer, summary_reply, write_tree

SAMPLE = '''"""Doc."""
import functools


def plain():
    return 1


@functools.cache
def cached():
    return 2


class Box:
    def __init__(self):
        self.v = 0

    @property
    def value(self):
        return self.v


def plain():
    return 3
'''


def test_extract_units_kinds_spans_and_duplicates():
    units = extract_units("pkg/mod.py", SAMPLE)
    got = [(u.id, u.span, u.parent_id) for u in units]
    f = "pkg/mod.py::pkg.mod::file"
    assert got == [
        (f, (1, 24), None),
        ("pkg/mod.py::plain::function", (5, 6), f),
        ("pkg/mod.py::cached::function", (9, 11), f),  # span starts at the decorator
        ("pkg/mod.py::Box::class", (14, 20), f),
        ("pkg/mod.py::Box.__init__::method", (15, 16), "pkg/mod.py::Box::class"),
        ("pkg/mod.py::Box.value::method", (18, 20), "pkg/mod.py::Box::class"),
        ("pkg/mod.py::plain#2::function", (23, 24), f),
    ]


def test_unparseable_python_degrades_to_file_unit():
    sink = []
    with pytest.warns(ParseWarning):
        units = extract_units("bad.py", "def broken(:\n", warnings_out=sink)
    assert [u.kind for u in units] == ["file"] and sink


def test_unsupported_language_is_a_single_file_unit():
    units = extract_units("web/app.js", "function f() {}\nfunction g() {}\n")
    assert [(u.kind, u.span) for u in units] == [("file", (1, 2))]


@pytest.mark.parametrize(
    "path,ok",
    [
        ("a.py", True),
        ("src/a.go", True),
        ("README.md", False),
        (".hidden/a.py", False),
        ("pkg/.cache.py", False),
        ("node_modules/x/a.js", False),
        ("pkg/__pycache__/a.py", False),
        ("build/gen.py", False),
    ],
)
def test_is_indexable(path, ok):
    assert is_indexable(path) is ok


def test_scan_skips_binary_and_ignored(tmp_path):
    write_tree(tmp_path, {"a.py": "x = 1\n", "b.py": b"\x00\x01", "venv/c.py": "y = 2\n", "notes.txt": "hi"})
    assert list(scan_repo(tmp_path)) == ["a.py"]


def test_build_index_structure(tmp_path):
    write_tree(tmp_path, {"pkg/mod.py": SAMPLE, "web/app.js": "let x = 1;\n"})
    idx = build_index(tmp_path, None, summarizer(), model="m")
    assert idx.version == 1
    assert idx.repo_fingerprint == fingerprint(scan_repo(tmp_path))
    assert list(idx.nodes) == sorted(idx.nodes)
    box = lookup_unit(idx, "pkg/mod.py::Box::class")
    assert box.children == ("pkg/mod.py::Box.__init__::method", "pkg/mod.py::Box.value::method")
    assert box.content_hash is None
    assert lookup_unit(idx, "web/app.js::web.app::file").content_hash is not None
    with pytest.raises(NotFoundError):
        lookup_unit(idx, "nope")


def test_one_provider_call_per_file(tmp_path):
    write_tree(tmp_path, {f"m{i}.py": f"def f{i}():\n    pass\n" for i in range(4)})
    provider = summarizer()
    build_index(tmp_path, None, provider, model="m")
    assert len(provider.requests) == 4


def test_summaries_are_clamped():
    long = " ".join(f"w{i}" for i in range(40))
    assert clamp_summary(long).split() == [f"w{i}" for i in range(30)] + ["[...]"]
    assert clamp_summary("  short   text ") == "short text"


def test_bad_summary_reply_is_reprompted_once(tmp_path):
    write_tree(tmp_path, {"a.py": "def f():\n    pass\n"})
    replies = iter(["no json here", None])
    provider = FunctionProvider(lambda r: next(replies) or summary_reply(r))
    idx = build_index(tmp_path, None, provider, model="m")
    assert len(provider.requests) == 2 and "a.py::f::function" in idx


def test_save_load_round_trip_is_byte_exact(tmp_path):
    write_tree(tmp_path / "r", {"a.py": SAMPLE})
    idx = build_index(tmp_path / "r", None, summarizer(), model="m")
    save_index(idx, tmp_path / "i.json")
    again = load_index(tmp_path / "i.json")
    assert again == idx and again.to_bytes() == (tmp_path / "i.json").read_bytes()
    assert json.loads(idx.to_bytes())["schema_version"] == 1


def test_update_matches_rebuild_after_edit_add_delete(tmp_path):
    root = write_tree(tmp_path, {"a.py": "def f():\n    pass\n", "pkg/b.py": SAMPLE, "pkg/c.py": "X = 1\n"})
    idx = build_index(root, None, summarizer(), model="m")
    write_tree(root, {"a.py": "def f():\n    return 2\n\n\ndef g():\n    pass\n", "d.py": "class D:\n    pass\n"})
    (root / "pkg" / "c.py").unlink()
    assert changed_files(idx, root) == ["a.py", "d.py", "pkg/c.py"]
    provider = summarizer()
    updated = update_index(idx, changed_files(idx, root), root, None, provider, model="m")
    assert len(provider.requests) == 2  # only the edited and the added file are re-summarized
    assert updated.version == 2
    assert updated.content_bytes() == build_index(root, None, summarizer(), model="m").content_bytes()


def test_update_with_deleted_directory(tmp_path):
    root = write_tree(tmp_path, {"a.py": "A = 1\n", "pkg/b.py": "B = 1\n", "pkg/sub/c.py": "C = 1\n"})
    idx = build_index(root, None, summarizer(), model="m")
    shutil.rmtree(root / "pkg")
    updated = update_index(idx, ["pkg"], root, None, summarizer(), model="m")
    assert [n.unit.path for n in updated.nodes.values()] == ["a.py"]


def test_update_rejects_paths_outside_root(tmp_path):
    root = write_tree(tmp_path / "r", {"a.py": "A = 1\n"})
    idx = build_index(root, None, summarizer(), model="m")
    with pytest.raises(PreconditionError):
        update_index(idx, ["../elsewhere.py"], root, None, summarizer(), model="m")


def _index(tmp_path, n_files=6):
    files = {}
    for i in range(n_files):
        cls = "".join(f"    def m{j}(self):\n        pass\n\n" for j in range(4))
        files[f"mod{i}.py"] = f"def top{i}():\n    pass\n\n\nclass K{i}:\n{cls}"
    root = write_tree(tmp_path, files)
    return build_index(root, None, summarizer(), model="m")


def test_outline_full_when_budget_allows(tmp_path):
    idx = _index(tmp_path)
    text = render_outline(idx, token_budget=100_000)
    assert set(parse_outline_ids(text)) == set(idx.nodes)
    assert "mod0.py::K0.m0::method — " in text


def test_outline_elides_methods_then_members_then_files(tmp_path):
    idx = _index(tmp_path)
    full = render_outline(idx, token_budget=100_000)
    budgets = sorted({max(1, len(full) // 4 // d) for d in (2, 4, 8, 40)}, reverse=True)
    seen_stages = []
    for b in budgets:
        text = render_outline(idx, token_budget=b)
        assert (len(text) + 3) // 4 <= b
        ids = parse_outline_ids(text)
        assert set(ids) <= set(idx.nodes)
        kinds = {idx.nodes[i].unit.kind for i in ids}
        stage = 2 if "method" in kinds else 1 if kinds & {"function", "class"} else 0
        seen_stages.append(stage)
        if stage == 1:
            assert "[4 methods elided]" in text
    assert seen_stages == sorted(seen_stages, reverse=True)
    tiny = render_outline(idx, token_budget=60)
    assert "files elided]" in tiny


def test_outline_scope_includes_ancestors(tmp_path):
    idx = _index(tmp_path)
    text = render_outline(idx, scope=["mod1.py::K1.m2::method"], token_budget=10_000)
    assert parse_outline_ids(text) == ["mod1.py::mod1::file", "mod1.py::K1::class", "mod1.py::K1.m2::method"]


ident = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)


@settings(max_examples=30, deadline=None)
@given(st.lists(ident, min_size=1, max_size=8, unique=True))
def test_unit_ids_unique_and_parents_resolve(names):
    src = "\n\n".join(f"def {n}():\n    pass" for n in names + names[:2]) + "\n"
    units = extract_units("m.py", src)
    ids = [u.id for u in units]
    assert len(ids) == len(set(ids))
    assert all(u.parent_id in ids for u in units if u.parent_id)
