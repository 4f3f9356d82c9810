"""Write the stock-app replay fixtures under tests/fixtures/stock_app/.

Agent replies are stored as ordered script entries. Summary replies are keyed
by prompt fingerprint, computed here with the same prompt builder the index
uses, so a fixture goes stale exactly when the summary prompt changes.
tests/test_fixtures.py re-runs this script into a temp dir and compares.

    python3 scripts/author_fixtures.py [--out DIR]
"""

from __future__ import annotations

import argparse
import ast
import json
import shutil
from pathlib import Path

from almas.developer import format_changeset, ChangeSet
from almas.index import extract_units, summary_messages
from almas.provider import ScriptEntry, approx_tokens, prompt_fingerprint, script_document

ROOT = Path(__file__).resolve().parent.parent
DEFAULT_OUT = ROOT / "tests" / "fixtures" / "stock_app"

# -- the application the generation replay must produce -----------------------------

OPTIONS_DATA = '''"""Option chain records and the sample chain the app ships with."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date

KINDS = ("call", "put")

SAMPLE_CSV = """symbol,expiry,kind,strike,premium,open_interest,underlying
ACME,2024-03-15,call,90,12.40,310,101.20
ACME,2024-03-15,call,100,5.10,820,101.20
ACME,2024-03-15,call,110,1.35,640,101.20
ACME,2024-03-15,put,90,0.95,280,101.20
ACME,2024-03-15,put,100,3.80,760,101.20
ACME,2024-04-19,call,100,7.25,410,98.60
ACME,2024-04-19,put,100,8.10,390,98.60
GLOBEX,2024-03-15,call,40,3.20,150,42.50
GLOBEX,2024-03-15,put,40,0.70,120,42.50
GLOBEX,2024-04-19,call,45,1.10,95,41.30
GLOBEX,2024-04-19,put,45,4.05,60,41.30
"""


@dataclass(frozen=True)
class OptionQuote:
    symbol: str
    expiry: date
    kind: str
    strike: float
    premium: float
    open_interest: int
    underlying: float

    @property
    def moneyness(self) -> float:
        """Underlying price over strike."""
        return self.underlying / self.strike


def parse_chain(text: str) -> list[OptionQuote]:
    """Parse CSV text into quotes; unknown option kinds are rejected."""
    quotes = []
    for row in csv.DictReader(io.StringIO(text)):
        kind = row["kind"].strip().lower()
        if kind not in KINDS:
            raise ValueError(f"unknown option kind {row['kind']!r}")
        quotes.append(
            OptionQuote(
                symbol=row["symbol"].strip(),
                expiry=date.fromisoformat(row["expiry"].strip()),
                kind=kind,
                strike=float(row["strike"]),
                premium=float(row["premium"]),
                open_interest=int(row["open_interest"]),
                underlying=float(row["underlying"]),
            )
        )
    return quotes


def load_sample() -> list[OptionQuote]:
    return parse_chain(SAMPLE_CSV)


def filter_chain(quotes, *, symbol=None, kind=None, expiry=None) -> list[OptionQuote]:
    """Keep quotes matching every given field, sorted by strike."""
    out = [
        q
        for q in quotes
        if (symbol is None or q.symbol == symbol)
        and (kind is None or q.kind == kind)
        and (expiry is None or q.expiry == expiry)
    ]
    return sorted(out, key=lambda q: q.strike)


def expiries(quotes) -> list[date]:
    return sorted({q.expiry for q in quotes})


def symbols(quotes) -> list[str]:
    return sorted({q.symbol for q in quotes})
'''

TEST_OPTIONS_DATA = '''from datetime import date

import pytest

from options_data import filter_chain, expiries, load_sample, parse_chain, symbols


def test_sample_parses():
    quotes = load_sample()
    assert len(quotes) == 11
    assert symbols(quotes) == ["ACME", "GLOBEX"]


def test_filter_by_kind_and_expiry_sorted_by_strike():
    quotes = filter_chain(load_sample(), symbol="ACME", kind="call", expiry=date(2024, 3, 15))
    assert [q.strike for q in quotes] == [90.0, 100.0, 110.0]


def test_expiries_are_unique_and_sorted():
    assert expiries(load_sample()) == [date(2024, 3, 15), date(2024, 4, 19)]


def test_unknown_kind_rejected():
    text = "symbol,expiry,kind,strike,premium,open_interest,underlying\\nX,2024-01-01,swap,1,1,1,1\\n"
    with pytest.raises(ValueError):
        parse_chain(text)


def test_moneyness():
    q = load_sample()[0]
    assert q.moneyness == pytest.approx(101.2 / 90)
'''

CHARTS = '''"""Chart specifications as plain dicts, independent of the plotting front end."""

from __future__ import annotations

from collections import defaultdict

from options_data import OptionQuote, filter_chain


def premium_curve(quotes: list[OptionQuote], kind: str) -> dict:
    """Line chart of premium against strike for one option kind."""
    rows = filter_chain(quotes, kind=kind)
    return {
        "type": "line",
        "title": f"{kind.title()} premium by strike",
        "x": [q.strike for q in rows],
        "y": [q.premium for q in rows],
        "x_label": "strike",
        "y_label": "premium",
    }


def open_interest_bars(quotes: list[OptionQuote]) -> dict:
    """Bar chart of total open interest per strike."""
    totals: dict[float, int] = defaultdict(int)
    for q in quotes:
        totals[q.strike] += q.open_interest
    strikes = sorted(totals)
    return {
        "type": "bar",
        "title": "Open interest by strike",
        "x": strikes,
        "y": [totals[s] for s in strikes],
        "x_label": "strike",
        "y_label": "open interest",
    }
'''

CHARTS_AUGMENTED = CHARTS + '''

def average_price_bar_chart(quotes: list[OptionQuote]) -> dict:
    """Bar chart of the average underlying stock price per symbol."""
    prices: dict[str, list[float]] = defaultdict(list)
    for q in quotes:
        prices[q.symbol].append(q.underlying)
    names = sorted(prices)
    return {
        "type": "bar",
        "title": "Average stock price by symbol",
        "x": names,
        "y": [round(sum(prices[n]) / len(prices[n]), 4) for n in names],
        "x_label": "symbol",
        "y_label": "average price",
    }
'''

# first augmentation attempt in the fail-then-pass variant: divides by the wrong count
CHARTS_AUGMENTED_BUGGY = CHARTS_AUGMENTED.replace("/ len(prices[n])", "/ len(names)")

TEST_CHARTS = '''from charts import open_interest_bars, premium_curve
from options_data import load_sample


def test_premium_curve_is_sorted_line():
    spec = premium_curve(load_sample(), "call")
    assert spec["type"] == "line"
    assert spec["x"] == sorted(spec["x"])
    assert len(spec["x"]) == len(spec["y"]) == 6


def test_open_interest_totals():
    spec = open_interest_bars(load_sample())
    assert spec["type"] == "bar"
    assert dict(zip(spec["x"], spec["y"]))[100.0] == 820 + 760 + 410 + 390
'''

TEST_AVERAGE_CHART = '''import pytest

from charts import average_price_bar_chart
from options_data import load_sample


def test_average_price_per_symbol():
    spec = average_price_bar_chart(load_sample())
    assert spec["type"] == "bar"
    assert spec["x"] == ["ACME", "GLOBEX"]
    acme = (101.2 * 5 + 98.6 * 2) / 7
    globex = (42.5 * 2 + 41.3 * 2) / 4
    assert spec["y"] == [pytest.approx(acme, abs=1e-4), pytest.approx(globex, abs=1e-4)]


def test_empty_chain_gives_empty_chart():
    spec = average_price_bar_chart([])
    assert spec["x"] == [] and spec["y"] == []
'''

APP = '''"""Stock options visualization app; run with ``streamlit run app.py``."""

from __future__ import annotations

from charts import open_interest_bars, premium_curve
from options_data import expiries, filter_chain, load_sample, symbols


def build_view(quotes, symbol: str, expiry=None) -> dict:
    """Everything the page shows for one symbol and optional expiry."""
    rows = filter_chain(quotes, symbol=symbol, expiry=expiry)
    return {
        "title": f"{symbol} option chain",
        "rows": len(rows),
        "charts": [premium_curve(rows, "call"), premium_curve(rows, "put"), open_interest_bars(rows)],
    }


def main() -> None:
    import streamlit as st

    quotes = load_sample()
    symbol = st.sidebar.selectbox("Symbol", symbols(quotes))
    expiry = st.sidebar.selectbox("Expiry", expiries(quotes))
    view = build_view(quotes, symbol, expiry)
    st.title(view["title"])
    for chart in view["charts"]:
        st.subheader(chart["title"])
        data = dict(zip(chart["x"], chart["y"]))
        (st.line_chart if chart["type"] == "line" else st.bar_chart)(data)


if __name__ == "__main__":
    main()
'''

TEST_APP = '''from datetime import date

from app import build_view
from options_data import load_sample


def test_view_for_symbol_and_expiry():
    view = build_view(load_sample(), "ACME", date(2024, 3, 15))
    assert view["title"] == "ACME option chain"
    assert view["rows"] == 5
    assert [c["type"] for c in view["charts"]] == ["line", "line", "bar"]


def test_view_without_expiry_uses_all_rows():
    assert build_view(load_sample(), "GLOBEX")["rows"] == 4
'''

FAILING_TEST = '''def test_always_fails():
    assert 1 == 2, "intentional failure"
'''

GENERATED_TREE = {
    "options_data.py": OPTIONS_DATA,
    "tests/test_options_data.py": TEST_OPTIONS_DATA,
    "charts.py": CHARTS,
    "tests/test_charts.py": TEST_CHARTS,
    "app.py": APP,
    "tests/test_app.py": TEST_APP,
}
AUGMENTED_FILES = {"charts.py": CHARTS_AUGMENTED, "tests/test_average_chart.py": TEST_AVERAGE_CHART}

# -- planning replies ---------------------------------------------------------------

GENERATION_TASK = {
    "title": "Build stock options visualization tool",
    "description": "Build a stock options visualization tool.",
    "source": "user",
}
AUGMENTATION_TASK = {
    "title": "Add bar chart for average stock prices",
    "description": "Add a bar chart that shows the average stock price for each symbol in the option chain.",
    "source": "user",
}
REFINED = (
    "Build a small Python app that loads an option chain (symbol, expiry, call or put, strike, "
    "premium, open interest, underlying price) from CSV, ships a sample chain, and shows premium "
    "curves and open interest charts per symbol and expiry in a Streamlit page. Chart data must be "
    "plain dicts so it can be unit tested without a browser."
)
GENERATION_PLAN = [
    {
        "title": "Option chain data model",
        "description": "Module options_data.py with an OptionQuote record, a CSV parser, a bundled sample chain and filters.",
        "acceptance_criteria": [
            "parse_chain turns CSV text into OptionQuote records and rejects unknown option kinds",
            "filter_chain filters by symbol, kind and expiry and sorts by strike",
            "unit tests cover parsing, filtering and the sample chain",
        ],
        "depends_on": [],
    },
    {
        "title": "Chart specifications",
        "description": "Module charts.py producing front-end independent chart specs from quotes.",
        "acceptance_criteria": [
            "premium_curve returns a line chart of premium by strike for calls or puts",
            "open_interest_bars returns total open interest per strike",
            "unit tests check both chart specs against the sample chain",
        ],
        "depends_on": ["ST-1"],
    },
    {
        "title": "Streamlit page",
        "description": "Module app.py wiring data and charts into a page; streamlit is imported only when the page runs.",
        "acceptance_criteria": [
            "build_view returns title, row count and the three charts for a symbol and expiry",
            "the page renders with streamlit run app.py",
        ],
        "depends_on": ["ST-1", "ST-2"],
    },
]
AUGMENTATION_PLAN = [
    {
        "title": "Average stock price bar chart",
        "description": "Add average_price_bar_chart to charts.py: one bar per symbol with the mean underlying price.",
        "acceptance_criteria": [
            "average_price_bar_chart returns a bar chart with one bar per symbol, sorted by symbol",
            "each bar is the mean underlying price of that symbol's quotes",
            "an empty chain gives an empty chart",
        ],
        "depends_on": [],
    }
]
FEW_SHOT = [
    {"description": "Parse a CSV export into typed records with validation", "points": 3},
    {"description": "Add a settings page with three form fields", "points": 2},
    {"description": "Build an interactive dashboard with several linked charts", "points": 8},
    {"description": "Write chart helpers for two chart types with tests", "points": 5},
]
GENERATION_POINTS = ["3", "5", "Story points: 2"]


def review_reply(n_criteria: int, path: str, note: str) -> str:
    return json.dumps(
        {
            "findings": [
                {"category": "quality", "severity": "info", "path": path, "start_line": 1, "end_line": 1, "note": note}
            ],
            "verdicts": ["met"] * n_criteria,
        },
        indent=2,
    )


def changeset_reply(files: dict[str, str], preface: str) -> str:
    body = format_changeset(ChangeSet(tuple(files.items()), (), "x"))
    return f"{preface}\n\n{body}"


def entry(text: str, note: str, prompt_tokens: int = 900) -> ScriptEntry:
    return ScriptEntry(text, prompt_tokens, approx_tokens(text), note=note)


# -- keyed summaries ----------------------------------------------------------------


def _docline(node) -> str | None:
    doc = ast.get_docstring(node) if node is not None else None
    return doc.strip().splitlines()[0].rstrip(".") if doc else None


def summary_entries(files: dict[str, str]) -> list[ScriptEntry]:
    out = []
    for path in sorted(files):
        text = files[path]
        units = extract_units(path, text)
        tree = ast.parse(text)
        defs = {}
        for node in ast.walk(tree):
            if isinstance(node, (ast.FunctionDef, ast.ClassDef)):
                defs.setdefault(node.name, node)
        reply = {}
        for u in units:
            name = u.qualified_name.split(".")[-1].split("#")[0]
            if u.kind == "file":
                summary = _docline(tree) or f"Unit tests for {path.rsplit('/', 1)[-1][len('test_'):-3]}"
            else:
                summary = _docline(defs.get(name)) or f"{u.kind.title()} {name}"
            reply[u.id] = summary + "."
        text_reply = json.dumps(reply, indent=2)
        key = prompt_fingerprint(summary_messages(path, text, units))
        out.append(ScriptEntry(text_reply, 600 + len(text) // 4, approx_tokens(text_reply), match_key=key, note=f"summary {path}"))
    return out


def all_summaries() -> list[ScriptEntry]:
    augmented = dict(GENERATED_TREE, **AUGMENTED_FILES)
    seen, out = set(), []
    for e in summary_entries(GENERATED_TREE) + summary_entries(augmented):
        if e.match_key not in seen:
            seen.add(e.match_key)
            out.append(e)
    return out


# -- scripts ------------------------------------------------------------------------


def planning_generation() -> list[ScriptEntry]:
    return [
        entry(json.dumps({"is_clear": False, "missing_aspects": ["data source and fields", "which charts", "user interface"], "rewritten_description": None}), "assess", 240),
        entry(json.dumps({"description": REFINED}), "refine", 260),
        entry(json.dumps({"subtasks": GENERATION_PLAN}, indent=2), "decompose", 420),
    ] + [entry(p, f"estimate ST-{i}", 380) for i, p in enumerate(GENERATION_POINTS, start=1)]


def generation_script() -> list[ScriptEntry]:
    steps = [
        ("ST-1", {"options_data.py": OPTIONS_DATA, "tests/test_options_data.py": TEST_OPTIONS_DATA}, "options_data.py", 3),
        ("ST-2", {"charts.py": CHARTS, "tests/test_charts.py": TEST_CHARTS}, "charts.py", 3),
        ("ST-3", {"app.py": APP, "tests/test_app.py": TEST_APP}, "app.py", 2),
    ]
    out = planning_generation()
    for sid, files, main, n in steps:
        out.append(entry(changeset_reply(files, f"Implementation for {sid}:"), f"generate {sid}", 1400))
        out.append(entry(review_reply(n, main, "Names and docstrings read clearly."), f"review {sid}", 1100))
    return out + all_summaries()


def always_fail_script() -> list[ScriptEntry]:
    out = planning_generation()
    for sid in ("ST-1", "ST-2", "ST-3"):
        for attempt in (1, 2, 3):
            files = {"options_data.py": OPTIONS_DATA, "tests/test_broken.py": FAILING_TEST}
            out.append(entry(changeset_reply(files, f"{sid} attempt {attempt}"), f"generate {sid} #{attempt}", 1400))
    return out + all_summaries()


def augmentation_planning() -> list[ScriptEntry]:
    return [
        entry(json.dumps({"is_clear": True, "missing_aspects": [], "rewritten_description": None}), "assess", 240),
        entry(json.dumps({"subtasks": AUGMENTATION_PLAN}, indent=2), "decompose", 900),
        entry("3", "estimate ST-1", 380),
    ]


SELECTION = {
    "selections": [
        {"unit_id": "charts.py::charts::file", "rationale": "chart builders live here"},
        {"unit_id": "charts.py::open_interest_bars::function", "rationale": "existing bar chart to mirror"},
        {"unit_id": "options_data.py::OptionQuote::class", "rationale": "quote fields, including underlying"},
    ]
}
RESELECTION = {
    "selections": [
        {"unit_id": "charts.py::charts::file", "rationale": "average computed in the chart module"},
        {"unit_id": "options_data.py::load_sample::function", "rationale": "sample chain used by the failing test"},
    ]
}


def augmentation_script(fail_first: bool = False) -> list[ScriptEntry]:
    out = augmentation_planning()
    out.append(entry(json.dumps(SELECTION, indent=2), "localize ST-1", 1200))
    if fail_first:
        out.append(entry(changeset_reply({"charts.py": CHARTS_AUGMENTED_BUGGY, "tests/test_average_chart.py": TEST_AVERAGE_CHART}, "First try:"), "generate ST-1 #1", 1600))
        out.append(entry(json.dumps(RESELECTION, indent=2), "relocalize ST-1", 1500))
    out.append(entry(changeset_reply(AUGMENTED_FILES, "Adds the average price chart:"), "generate ST-1", 1600))
    out.append(entry(review_reply(3, "charts.py", "Rounding to four places is documented by the test."), "review ST-1", 1100))
    return out + all_summaries()


# -- config -------------------------------------------------------------------------

INVENTORY = [
    {"id": "coder-large", "input_rate": "0.003", "output_rate": "0.015", "capability_tags": ["codegen", "plan", "review", "localize"], "quality_score": 0.9},
    {"id": "coder-small", "input_rate": "0.0008", "output_rate": "0.004", "capability_tags": ["codegen", "localize"], "quality_score": 0.7},
    {"id": "summarizer-mini", "input_rate": "0.00015", "output_rate": "0.0006", "capability_tags": ["summarize", "localize", "plan"], "quality_score": 0.62},
]


def config() -> dict:
    return {
        "repo_path": "workspace",
        "mode": "autonomous",
        "inventory": INVENTORY,
        "policy": {"quality_floor": 0.6, "objective": "min_cost", "required_tags": {
            "plan": ["plan"], "summarize": ["summarize"], "localize": ["localize"], "codegen": ["codegen"], "review": ["review"]}},
        "budgets": {"max_attempts": 3, "context_tokens": 6000, "outline_tokens": 3000, "k": 5},
        "validation": {
            "format_cmd": "python3 -m tabnanny -q .",
            "build_cmd": "python3 -m compileall -q .",
            "test_cmd": "python3 -m pytest -q -p no:cacheprovider",
            "adapter_id": "pytest",
            "timeout": 120,
            "env": {"PYTEST_DISABLE_PLUGIN_AUTOLOAD": "1"},
        },
        "few_shot_path": "few_shot.json",
        "story_point_scale": [1, 2, 3, 5, 8, 13],
        "review_gate": "advisory",
        "commit_date": "2024-01-02T03:04:05+00:00",
        "phases": {
            "generation": {"provider": {"kind": "scripted", "script": "script_generation.json"}, "task_path": "task_generation.json"},
            "augmentation": {"provider": {"kind": "scripted", "script": "script_augmentation.json"}, "task_path": "task_augmentation.json"},
        },
    }


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def write_tree(root: Path, files: dict[str, str]) -> None:
    for rel, text in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")


def author(out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    _dump(out / "config.json", config())
    _dump(out / "task_generation.json", GENERATION_TASK)
    _dump(out / "task_augmentation.json", AUGMENTATION_TASK)
    _dump(out / "few_shot.json", FEW_SHOT)
    _dump(out / "script_generation.json", script_document(generation_script()))
    _dump(out / "script_always_fail.json", script_document(always_fail_script()))
    _dump(out / "script_augmentation.json", script_document(augmentation_script()))
    _dump(out / "script_fail_then_pass.json", script_document(augmentation_script(fail_first=True)))
    write_tree(out / "expected_generation", GENERATED_TREE)
    write_tree(out / "expected_augmentation", AUGMENTED_FILES)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    author(ap.parse_args().out)


if __name__ == "__main__":
    main()
