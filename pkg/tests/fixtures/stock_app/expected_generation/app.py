"""Stock options visualization app; run with ``streamlit run app.py``."""

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
