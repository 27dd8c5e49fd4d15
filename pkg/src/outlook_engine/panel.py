"""Panel ingestion: trading calendar, firm snapshots, and forward horizon returns.

Raw inputs are four CSV files (prices, fundamentals, analyst data, trading
calendar). Loading aligns everything to per-date firm snapshots; horizon
returns are computed on fixed trading-day windows anchored at the last
trading day on or before each model cutoff.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

# Horizon months -> trading-day window length. Fixed day counts, not calendar
# months, so results do not depend on the shape of the calendar.
HORIZON_TRADING_DAYS: dict[int, int] = {1: 20, 3: 60, 4: 80, 6: 120, 12: 250}

ARCHITECTURES = ("standard", "reasoning")


class PanelError(Exception):
    """Base class for panel-layer errors."""


class NoTradingDay(PanelError):
    """The cutoff precedes every date in the trading calendar."""


class HorizonUnavailable(PanelError):
    """The calendar does not extend far enough past the start date."""


class MissingPrice(PanelError):
    """No price at a required window endpoint."""


class DuplicateKey(PanelError):
    """A (firm_id, date) key appears more than once in an input file."""


class TradingCalendar:
    """Ordered, duplicate-free list of trading dates."""

    def __init__(self, dates: Iterable[date]):
        ds = list(dates)
        if not ds:
            raise ValueError("calendar must be non-empty")
        for a, b in zip(ds, ds[1:]):
            if a >= b:
                raise ValueError(f"calendar not strictly increasing at {a} >= {b}")
        self._dates = ds

    @property
    def dates(self) -> list[date]:
        return list(self._dates)

    def __len__(self) -> int:
        return len(self._dates)

    def __contains__(self, d: date) -> bool:
        i = bisect_left(self._dates, d)
        return i < len(self._dates) and self._dates[i] == d

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TradingCalendar) and self._dates == other._dates

    def first(self) -> date:
        return self._dates[0]

    def last(self) -> date:
        return self._dates[-1]

    def index(self, d: date) -> int:
        i = bisect_left(self._dates, d)
        if i == len(self._dates) or self._dates[i] != d:
            raise KeyError(f"{d} is not a trading day")
        return i

    def offset(self, d: date, steps: int) -> date:
        """Trading day `steps` positions after (or before) `d`."""
        j = self.index(d) + steps
        if j < 0 or j >= len(self._dates):
            raise HorizonUnavailable(
                f"no trading day {steps:+d} steps from {d} (calendar ends {self.last()})"
            )
        return self._dates[j]


def analysis_date(cutoff: date, cal: TradingCalendar) -> date:
    """Last trading date on or before `cutoff`.

    Raises NoTradingDay when the cutoff precedes the whole calendar.
    """
    i = bisect_right(cal._dates, cutoff)
    if i == 0:
        raise NoTradingDay(f"cutoff {cutoff} precedes first trading day {cal.first()}")
    return cal._dates[i - 1]


@dataclass(frozen=True)
class Cutoff:
    """A frozen model checkpoint: knowledge boundary and release date."""

    model_name: str
    knowledge_cutoff: date
    release_date: date
    architecture: str = "standard"

    def __post_init__(self) -> None:
        if self.knowledge_cutoff > self.release_date:
            raise ValueError(
                f"{self.model_name}: knowledge cutoff {self.knowledge_cutoff} "
                f"after release {self.release_date}"
            )
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")


@dataclass(frozen=True)
class FirmSnapshot:
    """One firm's identifiers, prices, fundamentals, and analyst data as of a date.

    Optional fields use None for missing. market_cap is price * shares and is
    checked to 1e-9 relative when supplied explicitly.
    """

    firm_id: str
    analysis_date: date
    name: str = ""
    ticker: str = ""
    country: str = ""
    sector: str = ""
    price: float | None = None
    shares_outstanding: float | None = None
    market_cap: float | None = None
    book_value_per_share: float | None = None
    eps_fy1: float | None = None
    eps_fy2: float | None = None
    eps_trailing: float | None = None
    ltg_median: float | None = None
    ebitda_fwd: float | None = None
    total_debt: float | None = None
    cash: float | None = None
    total_assets: float | None = None
    roe: float | None = None
    gross_profit: float | None = None
    net_income: float | None = None
    op_cashflow: float | None = None
    analyst_count: int = 0
    pt_mean: float | None = None
    pt_dispersion: float | None = None
    adtv: float | None = None
    r_1m: float | None = None
    r_6m: float | None = None
    r_12m_ex1m: float | None = None

    def __post_init__(self) -> None:
        if self.price is not None and self.price <= 0:
            raise ValueError(f"{self.firm_id}: price <= 0")
        if self.analyst_count < 0:
            raise ValueError(f"{self.firm_id}: analyst_count < 0")
        if self.price is not None and self.shares_outstanding is not None:
            implied = self.price * self.shares_outstanding
            if self.market_cap is None:
                object.__setattr__(self, "market_cap", implied)
            elif not math.isclose(self.market_cap, implied, rel_tol=1e-9):
                raise ValueError(
                    f"{self.firm_id}: market_cap {self.market_cap} != price*shares {implied}"
                )

    def get(self, field_name: str):
        return getattr(self, field_name)


# CSV schema field order (fundamentals). firm_id/date lead; market_cap is
# derived, never serialized.
_FUNDAMENTAL_STR_FIELDS = ("name", "ticker", "country", "sector")
_FUNDAMENTAL_NUM_FIELDS = (
    "price",
    "shares_outstanding",
    "book_value_per_share",
    "eps_fy1",
    "eps_fy2",
    "eps_trailing",
    "ltg_median",
    "ebitda_fwd",
    "total_debt",
    "cash",
    "total_assets",
    "roe",
    "gross_profit",
    "net_income",
    "op_cashflow",
    "adtv",
    "r_1m",
    "r_6m",
    "r_12m_ex1m",
)
FUNDAMENTALS_COLUMNS = ("firm_id", "date", *_FUNDAMENTAL_STR_FIELDS, *_FUNDAMENTAL_NUM_FIELDS)
ANALYST_COLUMNS = ("firm_id", "date", "analyst_count", "pt_mean", "pt_dispersion")
PRICES_COLUMNS = ("firm_id", "date", "close_adj")
CALENDAR_COLUMNS = ("date",)


@dataclass(frozen=True)
class Rejection:
    file: str
    line: int
    reason: str


@dataclass
class RejectionReport:
    """Per-file record of rows that failed schema or invariant checks."""

    rejections: list[Rejection] = field(default_factory=list)

    def add(self, file: str, line: int, reason: str) -> None:
        self.rejections.append(Rejection(file, line, reason))

    def for_file(self, file: str) -> list[Rejection]:
        return [r for r in self.rejections if r.file == file]

    def __len__(self) -> int:
        return len(self.rejections)


@dataclass
class LoadedPanel:
    """Typed in-memory panel produced by load_panel."""

    calendar: TradingCalendar
    snapshots: list[FirmSnapshot]
    prices: dict[str, dict[date, float]]
    rejections: RejectionReport

    def snapshots_at(self, d: date) -> list[FirmSnapshot]:
        return [s for s in self.snapshots if s.analysis_date == d]

    def price_series(self, firm_id: str) -> dict[date, float]:
        return self.prices.get(firm_id, {})


def horizon_return(
    prices: Mapping[date, float] | pd.Series,
    start: date,
    horizon: int,
    cal: TradingCalendar,
    *,
    clamp: bool = False,
) -> float:
    """Cumulative forward return over a fixed trading-day window.

    The window opens at `start` (an analysis date in the calendar) and closes
    the mapped number of trading days later; the return accrues from the first
    trading day after `start`: r = P(close)/P(start) - 1. With `clamp`, a
    window that runs off the end of the calendar is shortened to the last
    calendar day instead of raising HorizonUnavailable.
    """
    if horizon not in HORIZON_TRADING_DAYS:
        raise ValueError(f"horizon {horizon} not in {sorted(HORIZON_TRADING_DAYS)}")
    n = HORIZON_TRADING_DAYS[horizon]
    if isinstance(prices, pd.Series):
        prices = {k: v for k, v in prices.items()}
    i = cal.index(start)
    if i + 1 >= len(cal):
        raise HorizonUnavailable(f"no trading day after {start}")
    j = i + n
    if j >= len(cal):
        if not clamp:
            raise HorizonUnavailable(
                f"calendar ends {cal.last()}, need {n} trading days past {start}"
            )
        j = len(cal) - 1
    end = cal._dates[j]
    p_start = prices.get(start)
    p_end = prices.get(end)
    if p_start is None or (isinstance(p_start, float) and math.isnan(p_start)):
        raise MissingPrice(f"missing price at window start {start}")
    if p_end is None or (isinstance(p_end, float) and math.isnan(p_end)):
        raise MissingPrice(f"missing price at window end {end}")
    return p_end / p_start - 1.0


def filter_universe(
    snapshots: Sequence[FirmSnapshot],
    top_n: int,
    required_fields: Iterable[str] = (),
) -> list[FirmSnapshot]:
    """Largest `top_n` snapshots by market cap with all required fields present.

    Delisted-after-entry firms are not touched here; survivorship handling is
    the caller's ingestion responsibility.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    required = tuple(required_fields)
    kept = []
    for s in snapshots:
        if s.market_cap is None:
            continue
        if any(s.get(f) in (None, "") for f in required):
            continue
        kept.append(s)
    # firm_id tiebreak keeps the ordering deterministic for equal caps
    kept.sort(key=lambda s: (-s.market_cap, s.firm_id))
    return kept[:top_n]


def build_return_panel(
    prices: Mapping[str, Mapping[date, float]],
    analysis_dates: Iterable[date],
    cal: TradingCalendar,
    horizons: Sequence[int] = (1, 3, 4, 6, 12),
    *,
    clamp: bool = False,
) -> pd.DataFrame:
    """Forward returns per (firm_id, analysis_date), NaN where unavailable.

    A horizon return is present only when both window endpoints have prices
    and the full trading-day window exists in the calendar (unless clamped).
    """
    dates = sorted(set(analysis_dates))
    rows = []
    for firm_id in sorted(prices):
        series = prices[firm_id]
        for d in dates:
            row: dict[str, object] = {"firm_id": firm_id, "analysis_date": d}
            for h in horizons:
                try:
                    row[f"ret_{h}m"] = horizon_return(series, d, h, cal, clamp=clamp)
                except (HorizonUnavailable, MissingPrice):
                    row[f"ret_{h}m"] = float("nan")
            rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        cols = ["firm_id", "analysis_date"] + [f"ret_{h}m" for h in horizons]
        return pd.DataFrame(columns=cols).set_index(["firm_id", "analysis_date"])
    return frame.set_index(["firm_id", "analysis_date"])


# ---------------------------------------------------------------------------
# CSV loading / serialization
# ---------------------------------------------------------------------------


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def _parse_float(text: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    return float(text)


def _read_rows(path: str | Path, expected: Sequence[str]):
    """Yield (line_number, row_dict) for a headered CSV; validates the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(expected):
            raise PanelError(f"{path}: expected header {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            yield line_no, dict(zip(expected, row))


def load_calendar_csv(path: str | Path) -> TradingCalendar:
    dates = []
    for _, row in _read_rows(path, CALENDAR_COLUMNS):
        dates.append(_parse_date(row["date"]))
    return TradingCalendar(dates)


def load_panel(
    price_csv: str | Path,
    fundamentals_csv: str | Path,
    analyst_csv: str | Path,
    calendar_csv: str | Path,
    *,
    strict: bool = False,
) -> LoadedPanel:
    """Load the four input files into a typed panel.

    Malformed rows are recorded in the rejection report and skipped; in
    strict mode the first malformed row aborts the load. Duplicate
    (firm_id, date) keys raise DuplicateKey in strict mode and are rejected
    otherwise.
    """
    report = RejectionReport()
    cal = load_calendar_csv(calendar_csv)

    def fail(file: str, line: int, reason: str) -> None:
        if strict:
            raise PanelError(f"{file}:{line}: {reason}")
        report.add(file, line, reason)

    prices: dict[str, dict[date, float]] = {}
    pfile = str(price_csv)
    for line_no, row in _read_rows(price_csv, PRICES_COLUMNS):
        firm = row["firm_id"].strip()
        try:
            d = _parse_date(row["date"])
            px = _parse_float(row["close_adj"])
        except ValueError as exc:
            fail(pfile, line_no, str(exc))
            continue
        if px is None or px <= 0:
            fail(pfile, line_no, "price <= 0")
            continue
        series = prices.setdefault(firm, {})
        if d in series:
            if strict:
                raise DuplicateKey(f"{pfile}:{line_no}: duplicate ({firm}, {d})")
            report.add(pfile, line_no, f"duplicate ({firm}, {d})")
            continue
        series[d] = px

    analyst: dict[tuple[str, date], dict[str, object]] = {}
    afile = str(analyst_csv)
    for line_no, row in _read_rows(analyst_csv, ANALYST_COLUMNS):
        firm = row["firm_id"].strip()
        try:
            d = _parse_date(row["date"])
            count_raw = row["analyst_count"].strip()
            count = int(count_raw) if count_raw else 0
            pt_mean = _parse_float(row["pt_mean"])
            pt_disp = _parse_float(row["pt_dispersion"])
        except ValueError as exc:
            fail(afile, line_no, str(exc))
            continue
        if count < 0:
            fail(afile, line_no, "analyst_count < 0")
            continue
        key = (firm, d)
        if key in analyst:
            if strict:
                raise DuplicateKey(f"{afile}:{line_no}: duplicate {key}")
            report.add(afile, line_no, f"duplicate {key}")
            continue
        analyst[key] = {"analyst_count": count, "pt_mean": pt_mean, "pt_dispersion": pt_disp}

    snapshots: list[FirmSnapshot] = []
    seen: set[tuple[str, date]] = set()
    ffile = str(fundamentals_csv)
    for line_no, row in _read_rows(fundamentals_csv, FUNDAMENTALS_COLUMNS):
        firm = row["firm_id"].strip()
        try:
            d = _parse_date(row["date"])
        except ValueError as exc:
            fail(ffile, line_no, str(exc))
            continue
        key = (firm, d)
        if key in seen:
            if strict:
                raise DuplicateKey(f"{ffile}:{line_no}: duplicate {key}")
            report.add(ffile, line_no, f"duplicate {key}")
            continue
        kwargs: dict[str, object] = {"firm_id": firm, "analysis_date": d}
        for f in _FUNDAMENTAL_STR_FIELDS:
            kwargs[f] = row[f].strip()
        try:
            for f in _FUNDAMENTAL_NUM_FIELDS:
                kwargs[f] = _parse_float(row[f])
        except ValueError as exc:
            fail(ffile, line_no, str(exc))
            continue
        if kwargs["price"] is not None and kwargs["price"] <= 0:
            fail(ffile, line_no, "price <= 0")
            continue
        extra = analyst.get(key, {})
        try:
            snapshots.append(FirmSnapshot(**kwargs, **extra))
        except ValueError as exc:
            fail(ffile, line_no, str(exc))
            continue
        seen.add(key)

    return LoadedPanel(calendar=cal, snapshots=snapshots, prices=prices, rejections=report)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_calendar_csv(cal: TradingCalendar, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CALENDAR_COLUMNS)
        for d in cal.dates:
            w.writerow([d.isoformat()])


def write_prices_csv(prices: Mapping[str, Mapping[date, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PRICES_COLUMNS)
        for firm_id in sorted(prices):
            for d in sorted(prices[firm_id]):
                w.writerow([firm_id, d.isoformat(), _fmt(prices[firm_id][d])])


def write_fundamentals_csv(snapshots: Sequence[FirmSnapshot], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FUNDAMENTALS_COLUMNS)
        for s in sorted(snapshots, key=lambda s: (s.firm_id, s.analysis_date)):
            row = [s.firm_id, s.analysis_date.isoformat()]
            row += [getattr(s, f) for f in _FUNDAMENTAL_STR_FIELDS]
            row += [_fmt(getattr(s, f)) for f in _FUNDAMENTAL_NUM_FIELDS]
            w.writerow(row)


def write_analyst_csv(snapshots: Sequence[FirmSnapshot], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ANALYST_COLUMNS)
        for s in sorted(snapshots, key=lambda s: (s.firm_id, s.analysis_date)):
            w.writerow(
                [
                    s.firm_id,
                    s.analysis_date.isoformat(),
                    s.analyst_count,
                    _fmt(s.pt_mean),
                    _fmt(s.pt_dispersion),
                ]
            )


def snapshots_frame(snapshots: Sequence[FirmSnapshot]) -> pd.DataFrame:
    """Snapshots as a firm_id-indexed DataFrame (one analysis date at a time)."""
    records = []
    for s in snapshots:
        rec = {f.name: getattr(s, f.name) for f in fields(FirmSnapshot)}
        records.append(rec)
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return frame
    return frame.set_index("firm_id").sort_index()


__all__ = [
    "ARCHITECTURES",
    "HORIZON_TRADING_DAYS",
    "Cutoff",
    "DuplicateKey",
    "FirmSnapshot",
    "HorizonUnavailable",
    "LoadedPanel",
    "MissingPrice",
    "NoTradingDay",
    "PanelError",
    "Rejection",
    "RejectionReport",
    "TradingCalendar",
    "analysis_date",
    "build_return_panel",
    "filter_universe",
    "horizon_return",
    "load_calendar_csv",
    "load_panel",
    "snapshots_frame",
    "write_analyst_csv",
    "write_calendar_csv",
    "write_fundamentals_csv",
    "write_prices_csv",
]
