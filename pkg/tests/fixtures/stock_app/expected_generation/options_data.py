"""Option chain records and the sample chain the app ships with."""

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
