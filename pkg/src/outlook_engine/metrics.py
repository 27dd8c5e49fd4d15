"""Valuation metrics and cross-sectional standardization.

Raw per-firm measures (inverse forward P/E, two implied-cost-of-equity
models, inverse EV/EBITDA) are winsorized at configurable percentiles,
demeaned within sectors and divided by the population standard deviation to
give sector-neutral z-scores. The same winsorize/demean/z machinery builds
the quality, value and momentum factor composites.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .panel import FirmSnapshot

CHEAPNESS_LEGS = ("invpe", "ice_gls", "ice_peg", "inveveb")


class MetricsError(Exception):
    """Base class for metric computation errors."""


class InsufficientData(MetricsError):
    """Fewer than two non-missing values."""


class SectorTooSmall(MetricsError):
    def __init__(self, label: str):
        super().__init__(f"sector {label!r} has fewer than 2 non-missing values")
        self.label = label


class InvalidPrice(MetricsError):
    pass


class InvalidBook(MetricsError):
    pass


class NoRoot(MetricsError):
    """The pricing equation has no root inside the search bracket."""


class GrowthNonPositive(MetricsError):
    """eps_fy2 <= eps_fy1: the PEG model needs positive forward growth."""


class InvalidEnterpriseValue(MetricsError):
    pass


class DegenerateSectorWarning(UserWarning):
    """A sector had zero cross-sectional variance; its z-scores were set to 0."""


def winsorize(values: pd.Series, lo_pct: float = 0.01, hi_pct: float = 0.99) -> pd.Series:
    """Clamp tails at the given percentiles (linear interpolation between
    order statistics). Missing values pass through untouched."""
    if not (0.0 <= lo_pct < hi_pct <= 1.0):
        raise ValueError(f"need 0 <= lo < hi <= 1, got ({lo_pct}, {hi_pct})")
    values = pd.Series(values, dtype=float)
    present = values.dropna()
    if len(present) < 2:
        raise InsufficientData(f"winsorize needs >= 2 non-missing values, got {len(present)}")
    lo = np.percentile(present.to_numpy(), 100.0 * lo_pct)
    hi = np.percentile(present.to_numpy(), 100.0 * hi_pct)
    return values.clip(lower=lo, upper=hi)


def sector_zscore(values: pd.Series, sectors: pd.Series) -> pd.Series:
    """Demean and scale by the population std within each sector.

    Zero-variance sectors get z = 0 for every member and raise a
    DegenerateSectorWarning; sectors with fewer than two non-missing values
    raise SectorTooSmall.
    """
    values = pd.Series(values, dtype=float)
    sectors = pd.Series(sectors).reindex(values.index)
    out = pd.Series(np.nan, index=values.index, dtype=float)
    for label in sorted(sectors.dropna().unique()):
        mask = sectors == label
        vals = values[mask]
        present = vals.dropna()
        if len(present) < 2:
            raise SectorTooSmall(str(label))
        mean = present.mean()
        std = float(np.sqrt(((present - mean) ** 2).mean()))  # divide-by-n
        if std == 0.0:
            warnings.warn(
                f"sector {label!r} has zero cross-sectional variance",
                DegenerateSectorWarning,
                stacklevel=2,
            )
            out[mask] = vals.notna() * 0.0
            out[mask & values.isna()] = np.nan
        else:
            out[mask] = (vals - mean) / std
    return out


def inv_pe(eps_fwd: float | None, price: float) -> float | None:
    """Forward earnings yield eps/price; None propagates missing eps."""
    if price is None or price <= 0:
        raise InvalidPrice(f"price must be > 0, got {price}")
    if eps_fwd is None:
        return None
    return eps_fwd / price


def inv_eveb(
    ebitda_fwd: float | None,
    market_cap: float,
    debt: float,
    cash: float,
) -> float | None:
    """Forward EBITDA over enterprise value; negative-EV firms are excluded."""
    ev = market_cap + debt - cash
    if ev <= 0:
        raise InvalidEnterpriseValue(f"enterprise value {ev} <= 0")
    if ebitda_fwd is None:
        return None
    return ebitda_fwd / ev


def ice_peg(eps_fy1: float, eps_fy2: float, price: float) -> float:
    """Implied cost of equity from the forward EPS growth differential:
    r = sqrt((eps2 - eps1)/price), the dividend-free variant."""
    if price is None or price <= 0:
        raise InvalidPrice(f"price must be > 0, got {price}")
    if eps_fy1 is None or eps_fy2 is None:
        raise MetricsError("ice_peg requires both forward EPS estimates")
    if eps_fy2 <= eps_fy1:
        raise GrowthNonPositive(f"eps_fy2 {eps_fy2} <= eps_fy1 {eps_fy1}")
    return math.sqrt((eps_fy2 - eps_fy1) / price)


@dataclass(frozen=True)
class IceGlsConfig:
    """Residual-income solver settings.

    Forecast ROE fades linearly from year 3 to the industry median by year
    `fade_years`; book value evolves by clean surplus with the configured
    retention (1 - payout_ratio). The root is bracketed and bisected.
    """

    fade_years: int = 12
    industry_median_roe: Mapping[str, float] = field(default_factory=dict)
    default_median_roe: float = 0.08
    bracket: tuple[float, float] = (0.001, 0.60)
    tolerance: float = 1e-8
    payout_ratio: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError("bracket must satisfy r_lo < r_hi")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if not 0.0 <= self.payout_ratio <= 1.0:
            raise ValueError("payout_ratio must be in [0, 1]")

    def median_for(self, sector: str) -> float:
        return self.industry_median_roe.get(sector, self.default_median_roe)


def gls_paths(
    snapshot: FirmSnapshot, cfg: IceGlsConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Forecast ROE path (years 1..T) and beginning book values (years 1..T+1).

    book[k] is the book value entering year k+1; book[0] is current book.
    """
    b0 = snapshot.book_value_per_share
    if b0 is None or b0 <= 0:
        raise InvalidBook(f"{snapshot.firm_id}: book value per share must be > 0")
    if snapshot.eps_fy1 is None or snapshot.eps_fy2 is None:
        raise MetricsError(f"{snapshot.firm_id}: eps_fy1 and eps_fy2 required")
    T = cfg.fade_years
    median = cfg.median_for(snapshot.sector)
    retention = 1.0 - cfg.payout_ratio

    roe = np.empty(T)
    book = np.empty(T + 1)
    book[0] = b0
    roe[0] = snapshot.eps_fy1 / book[0]
    book[1] = book[0] * (1.0 + roe[0] * retention)
    roe[1] = snapshot.eps_fy2 / book[1]
    book[2] = book[1] * (1.0 + roe[1] * retention)
    if snapshot.ltg_median is not None:
        roe[2] = snapshot.eps_fy2 * (1.0 + snapshot.ltg_median) / book[2]
    else:
        roe[2] = roe[1]
    # Linear fade from the year-3 level to the industry median at year T.
    for k in range(3, T):
        roe[k] = roe[2] + (median - roe[2]) * (k - 2) / (T - 3)
    for k in range(3, T + 1):
        book[k] = book[k - 1] * (1.0 + roe[k - 1] * retention)
    return roe, book


def residual_income_price(r: float, roe: np.ndarray, book: np.ndarray) -> float:
    """Model price at discount rate r for a given ROE/book path:
    current book, T years of discounted residual income, and a terminal
    perpetuity on the year-T residual spread."""
    T = len(roe)
    disc = (1.0 + r) ** np.arange(1, T + 1)
    value = book[0] + float(np.sum((roe - r) * book[:T] / disc))
    value += (roe[T - 1] - r) * book[T] / (r * (1.0 + r) ** T)
    return value


def ice_gls(snapshot: FirmSnapshot, cfg: IceGlsConfig | None = None) -> float:
    """Discount rate equating price to the residual-income model value.

    The pricing function is strictly decreasing in r on the bracket, so a
    sign check at the endpoints either certifies a unique root (found by
    bisection to cfg.tolerance) or raises NoRoot.
    """
    cfg = cfg or IceGlsConfig()
    if snapshot.price is None or snapshot.price <= 0:
        raise InvalidPrice(f"{snapshot.firm_id}: price must be > 0")
    roe, book = gls_paths(snapshot, cfg)
    price = snapshot.price

    lo, hi = cfg.bracket
    f_lo = residual_income_price(lo, roe, book) - price
    f_hi = residual_income_price(hi, roe, book) - price
    if f_lo * f_hi > 0:
        raise NoRoot(
            f"{snapshot.firm_id}: no sign change on [{lo}, {hi}] "
            f"(f(lo)={f_lo:.4g}, f(hi)={f_hi:.4g})"
        )
    while hi - lo > cfg.tolerance:
        mid = 0.5 * (lo + hi)
        f_mid = residual_income_price(mid, roe, book) - price
        if f_mid == 0.0:
            return mid
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def standardize(
    raw: pd.Series,
    sectors: pd.Series,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
) -> pd.Series:
    """Winsorize then sector-z-score a raw cross-sectional series."""
    return sector_zscore(winsorize(raw, lo_pct, hi_pct), sectors)


def compute_cheapness(
    snapshots: Sequence[FirmSnapshot],
    cfg: IceGlsConfig | None = None,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """All four market-implied cheapness z-scores for one cross-section.

    Returns (zscores, detail): zscores has columns z_invpe, z_ice_gls,
    z_ice_peg, z_inveveb indexed by firm_id; detail records the raw value and
    a status string per (firm, metric) for the metric output file.
    """
    cfg = cfg or IceGlsConfig()
    index = pd.Index([s.firm_id for s in snapshots], name="firm_id")
    sectors = pd.Series([s.sector for s in snapshots], index=index)
    raw = {leg: pd.Series(np.nan, index=index) for leg in CHEAPNESS_LEGS}
    status = {leg: pd.Series("missing", index=index, dtype=object) for leg in CHEAPNESS_LEGS}

    for s in snapshots:
        fid = s.firm_id
        try:
            v = inv_pe(s.eps_fy1, s.price)
            if v is not None:
                raw["invpe"][fid], status["invpe"][fid] = v, "ok"
        except MetricsError as exc:
            status["invpe"][fid] = type(exc).__name__
        try:
            raw["ice_gls"][fid] = ice_gls(s, cfg)
            status["ice_gls"][fid] = "ok"
        except MetricsError as exc:
            status["ice_gls"][fid] = type(exc).__name__
        try:
            raw["ice_peg"][fid] = ice_peg(s.eps_fy1, s.eps_fy2, s.price)
            status["ice_peg"][fid] = "ok"
        except MetricsError as exc:
            status["ice_peg"][fid] = type(exc).__name__
        try:
            if s.market_cap is not None and s.total_debt is not None and s.cash is not None:
                v = inv_eveb(s.ebitda_fwd, s.market_cap, s.total_debt, s.cash)
                if v is not None:
                    raw["inveveb"][fid], status["inveveb"][fid] = v, "ok"
        except MetricsError as exc:
            status["inveveb"][fid] = type(exc).__name__

    z = {}
    for leg in CHEAPNESS_LEGS:
        try:
            z[f"z_{leg}"] = standardize(raw[leg], sectors, lo_pct, hi_pct)
        except InsufficientData:
            z[f"z_{leg}"] = pd.Series(np.nan, index=index)
    zscores = pd.DataFrame(z, index=index)

    detail = pd.concat(
        [
            pd.DataFrame(
                {
                    "metric_name": leg,
                    "raw_value": raw[leg],
                    "z_value": zscores[f"z_{leg}"],
                    "status": status[leg],
                }
            )
            for leg in CHEAPNESS_LEGS
        ]
    )
    return zscores, detail


def factor_composite(
    components: Sequence[pd.Series],
    sectors: pd.Series,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
) -> pd.Series:
    """Equal-weighted average of winsorized, sector-z-scored components.

    A firm needs at least half its components non-missing, otherwise the
    composite is missing for that firm.
    """
    if not components:
        raise ValueError("need at least one component")
    zs = [standardize(c, sectors, lo_pct, hi_pct) for c in components]
    stacked = pd.concat(zs, axis=1)
    count = stacked.notna().sum(axis=1)
    composite = stacked.mean(axis=1)
    composite[count * 2 < len(components)] = np.nan
    return composite


def mismatch(score_z: pd.Series, cheapness: pd.DataFrame, leg: str = "composite") -> pd.Series:
    """Additive combination of the outlook z-score with a cheapness leg.

    leg = "composite" adds the per-firm mean over the available legs; a named
    leg adds that single column. Missing components propagate to missing.
    """
    if leg == "composite":
        cols = [f"z_{k}" for k in CHEAPNESS_LEGS]
        comp = cheapness[cols].mean(axis=1)  # mean over non-missing legs
        comp[cheapness[cols].notna().sum(axis=1) == 0] = np.nan
        other = comp
    else:
        if leg not in CHEAPNESS_LEGS:
            raise ValueError(f"unknown leg {leg!r}; expected one of {CHEAPNESS_LEGS}")
        other = cheapness[f"z_{leg}"]
    score_z, other = score_z.align(other)
    return score_z + other


def quality_components(frame: pd.DataFrame) -> list[pd.Series]:
    """Gross profitability, ROE, and negative accruals, from a snapshot frame."""
    gross = frame["gross_profit"] / frame["total_assets"]
    roe = frame["roe"].astype(float)
    accruals = -(frame["net_income"] - frame["op_cashflow"]) / frame["total_assets"]
    return [gross, roe, accruals]


def value_components(frame: pd.DataFrame) -> list[pd.Series]:
    """Forward earnings yield, forward EBITDA yield, book-to-market and
    trailing earnings yield (the two stand-ins for proprietary ratios)."""
    invpe = frame["eps_fy1"] / frame["price"]
    ev = frame["market_cap"] + frame["total_debt"] - frame["cash"]
    inveveb = (frame["ebitda_fwd"] / ev).where(ev > 0)
    btm = frame["book_value_per_share"] / frame["price"]
    trailing = frame["eps_trailing"] / frame["price"]
    return [invpe, inveveb, btm, trailing]


def momentum_components(frame: pd.DataFrame) -> list[pd.Series]:
    """12-month-ex-1 and 6-month past returns plus the sign-reversed 1-month."""
    return [
        frame["r_12m_ex1m"].astype(float),
        frame["r_6m"].astype(float),
        -frame["r_1m"].astype(float),
    ]


def control_scores(
    frame: pd.DataFrame,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
) -> pd.DataFrame:
    """Size, quality, value and momentum z-scores for one cross-section.

    `frame` is a firm_id-indexed snapshot frame (see panel.snapshots_frame).
    """
    sectors = frame["sector"]
    size = standardize(np.log(frame["market_cap"].astype(float)), sectors, lo_pct, hi_pct)
    qual = factor_composite(quality_components(frame), sectors, lo_pct, hi_pct)
    val = factor_composite(value_components(frame), sectors, lo_pct, hi_pct)
    mom = factor_composite(momentum_components(frame), sectors, lo_pct, hi_pct)
    return pd.DataFrame({"size": size, "quality": qual, "value": val, "momentum": mom})


def attention_proxies(
    frame: pd.DataFrame,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
) -> pd.DataFrame:
    """Information-environment proxies used by the interaction tests:
    analyst coverage, price-target coverage, price-target dispersion,
    leverage and trading volume, each winsorized and sector-z-scored."""
    sectors = frame["sector"]
    coverage = np.log1p(frame["analyst_count"].astype(float))
    pt_cov = np.log1p(frame["analyst_count"].astype(float).where(frame["pt_mean"].notna()))
    leverage = frame["total_debt"] / frame["total_assets"]
    out = {}
    for name, series in (
        ("analyst_coverage", coverage),
        ("pt_coverage", pt_cov),
        ("pt_dispersion", frame["pt_dispersion"].astype(float)),
        ("leverage", leverage),
        ("adtv", frame["adtv"].astype(float)),
    ):
        try:
            out[name] = standardize(series, sectors, lo_pct, hi_pct)
        except InsufficientData:
            out[name] = pd.Series(np.nan, index=frame.index)
    return pd.DataFrame(out)


def metrics_table(detail: pd.DataFrame, analysis_date) -> pd.DataFrame:
    """Rearrange a compute_cheapness detail frame into the metric output
    schema (firm_id, analysis_date, metric_name, raw_value, z_value, status)."""
    out = detail.reset_index()
    out.insert(1, "analysis_date", analysis_date)
    return out[["firm_id", "analysis_date", "metric_name", "raw_value", "z_value", "status"]]


__all__ = [
    "CHEAPNESS_LEGS",
    "DegenerateSectorWarning",
    "GrowthNonPositive",
    "IceGlsConfig",
    "InsufficientData",
    "InvalidBook",
    "InvalidEnterpriseValue",
    "InvalidPrice",
    "MetricsError",
    "NoRoot",
    "SectorTooSmall",
    "attention_proxies",
    "compute_cheapness",
    "control_scores",
    "factor_composite",
    "gls_paths",
    "ice_gls",
    "ice_peg",
    "inv_eveb",
    "inv_pe",
    "metrics_table",
    "mismatch",
    "momentum_components",
    "quality_components",
    "residual_income_price",
    "sector_zscore",
    "standardize",
    "value_components",
    "winsorize",
]
