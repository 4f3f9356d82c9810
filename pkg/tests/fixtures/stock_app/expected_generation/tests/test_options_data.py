from datetime import date

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
    text = "symbol,expiry,kind,strike,premium,open_interest,underlying\nX,2024-01-01,swap,1,1,1,1\n"
    with pytest.raises(ValueError):
        parse_chain(text)


def test_moneyness():
    q = load_sample()[0]
    assert q.moneyness == pytest.approx(101.2 / 90)
