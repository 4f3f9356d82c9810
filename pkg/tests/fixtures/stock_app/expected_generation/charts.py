"""Chart specifications as plain dicts, independent of the plotting front end."""

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
