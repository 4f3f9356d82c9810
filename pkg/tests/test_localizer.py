import json
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from almas.errors import EmptyLocalizationError, PreconditionError, StaleIndexError
from almas.index import build_index
from almas.localizer import (
    DroppedSelectionWarning,
    Localization,
    LocalizationQuery,
    Selection,
    assemble_context,
    localize,
    relocalize,
)
from almas.provider import approx_tokens

from conftest import queued, summarizer, write_tree

FILES = {
    "geo.py": "def area(w, h):\n    return w * h\n\n\ndef perimeter(w, h):\n    return 2 * (w + h)\n",
    "shapes.py": "class Square:\n    def __init__(self, s):\n        self.s = s\n\n    def area(self):\n        return self.s ** 2\n",
}


@pytest.fixture
def repo(tmp_path):
    root = write_tree(tmp_path, FILES)
    return root, build_index(root, None, summarizer(), model="m")


def pick(*ids):
    return json.dumps({"selections": [{"unit_id": i, "rationale": f"because {i}"} for i in ids]})


Q = LocalizationQuery("ST-1", "compute the area")


def test_localize_filters_unknown_dedupes_and_caps(repo):
    _, idx = repo
    reply = pick("nope::x::function", "geo.py::area::function", "geo.py::area::function",
                 "shapes.py::Square.area::method", "geo.py::perimeter::function")
    with pytest.warns(DroppedSelectionWarning):
        loc = localize(Q, idx, queued(reply), k=2, model="m")
    assert loc.unit_ids == ("geo.py::area::function", "shapes.py::Square.area::method")
    assert loc.outline_tokens_used > 0 and not loc.repeat


def test_localize_accepts_bare_string_ids(repo):
    _, idx = repo
    loc = localize(Q, idx, queued('{"selections": ["geo.py::geo::file"]}'), model="m")
    assert loc.selections == (Selection("geo.py::geo::file", ""),)


def test_empty_after_filtering_raises(repo):
    _, idx = repo
    with pytest.warns(DroppedSelectionWarning), pytest.raises(EmptyLocalizationError):
        localize(Q, idx, queued(pick("ghost::g::function")), model="m")


def test_relocalize_prompt_and_repeat_flag(repo):
    _, idx = repo
    prior = ("geo.py::area::function",)
    q = LocalizationQuery("ST-1", "compute the area", "FAILED test_area", prior)
    provider = queued(pick("geo.py::area::function"))
    loc = relocalize(q, idx, provider, model="m")
    assert loc.repeat
    prompt = provider.requests[0].messages[1].text
    assert "FAILED test_area" in prompt and "- geo.py::area::function" in prompt
    with pytest.raises(PreconditionError):
        relocalize(Q, idx, queued(), model="m")


def test_query_requires_prior_with_error_log():
    with pytest.raises(PreconditionError):
        LocalizationQuery("ST-1", "x", error_log="boom")


def test_assemble_slices_exact_spans(repo):
    root, idx = repo
    loc = Localization((Selection("shapes.py::Square.area::method", ""), Selection("geo.py::perimeter::function", "")), 0)
    bundle = assemble_context(loc, root, idx, 1000)
    assert [e.source_text for e in bundle.excerpts] == [
        "    def area(self):\n        return self.s ** 2\n",
        "def perimeter(w, h):\n    return 2 * (w + h)\n",
    ]
    assert bundle.excerpts[0].start_line == 5 and not bundle.oversized
    assert "--- geo.py::perimeter::function (geo.py, from line 5)" in bundle.render()


def test_assemble_drops_lowest_ranked_to_fit(repo):
    root, idx = repo
    ids = ["geo.py::geo::file", "shapes.py::shapes::file", "geo.py::area::function"]
    loc = Localization(tuple(Selection(i, "") for i in ids), 0)
    budget = approx_tokens(FILES["geo.py"]) + approx_tokens(FILES["shapes.py"])
    bundle = assemble_context(loc, root, idx, budget)
    assert [e.unit_id for e in bundle.excerpts] == ids[:2]
    assert bundle.total_tokens <= budget


def test_assemble_truncates_lone_oversized_excerpt(repo):
    root, idx = repo
    loc = Localization((Selection("geo.py::geo::file", ""),), 0)
    bundle = assemble_context(loc, root, idx, 5)
    assert bundle.oversized and bundle.total_tokens <= 5
    assert FILES["geo.py"].startswith(bundle.excerpts[0].source_text)


def test_assemble_detects_stale_index(repo):
    root, idx = repo
    (root / "shapes.py").write_text("X = 1\n")
    loc = Localization((Selection("shapes.py::Square.area::method", ""),), 0)
    with pytest.raises(StaleIndexError):
        assemble_context(loc, root, idx, 1000)
    (root / "geo.py").unlink()
    with pytest.raises(StaleIndexError):
        assemble_context(Localization((Selection("geo.py::geo::file", ""),), 0), root, idx, 1000)


UNIT_POOL = [
    "geo.py::geo::file", "geo.py::area::function", "geo.py::perimeter::function",
    "shapes.py::shapes::file", "shapes.py::Square::class", "shapes.py::Square.area::method",
    "bogus::b::file",
]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(UNIT_POOL), min_size=1, max_size=10), st.integers(1, 6))
def test_selection_is_valid_unique_prefix_of_reply(tmp_path_factory, ids, k):
    root = write_tree(tmp_path_factory.mktemp("r"), FILES)
    idx = build_index(root, None, summarizer(), model="m")
    expected = list(dict.fromkeys(i for i in ids if i in idx))[:k]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DroppedSelectionWarning)
        if not expected:
            with pytest.raises(EmptyLocalizationError):
                localize(Q, idx, queued(pick(*ids)), k=k, model="m")
            return
        loc = localize(Q, idx, queued(pick(*ids)), k=k, model="m")
    assert list(loc.unit_ids) == expected
