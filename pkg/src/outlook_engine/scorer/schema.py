"""Strict validation of structured scorer responses.

A response is accepted only if it is a bare JSON object with exactly the
expected shape: integer scores inside their ranges, three probability
distributions that each sum to exactly 100, 2-5 driver tags from the fixed
taxonomy, and a rationale of at most 30 whitespace tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

DRIVER_TAGS = (
    "product_cycle",
    "pricing_power",
    "regulation",
    "competition",
    "supply_chain",
    "capital_needs",
    "macro_exposure",
    "IP_legal",
    "mgmt_execution",
    "network_effects",
    "customer_concentration",
    "input_costs",
)

REVENUE_BIN_KEYS = (
    "less_than_minus_10",
    "minus_10_to_0",
    "plus_0_to_5",
    "plus_5_to_10",
    "greater_than_plus_10",
)
EPS_BIN_KEYS = (
    "less_than_minus_20",
    "minus_20_to_0",
    "plus_0_to_10",
    "plus_10_to_25",
    "greater_than_plus_25",
)
MARGIN_BIN_KEYS = (
    "less_than_minus_2pp",
    "minus_2pp_to_0pp",
    "plus_0pp_to_1pp",
    "plus_1pp_to_2pp",
    "greater_than_plus_2pp",
)

RATIONALE_MAX_TOKENS = 30


class ValidationError(Exception):
    """Base class for response validation failures."""


class NotJson(ValidationError):
    pass


class SchemaViolation(ValidationError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class RangeViolation(ValidationError):
    def __init__(self, field: str, value, lo: int, hi: int):
        super().__init__(f"{field}={value} outside [{lo}, {hi}]")
        self.field = field
        self.value = value


class BinSumViolation(ValidationError):
    def __init__(self, which: str, total: int):
        super().__init__(f"{which} sums to {total}, must be exactly 100")
        self.which = which
        self.total = total


class UnknownDriverTag(ValidationError):
    def __init__(self, tag):
        super().__init__(f"unknown driver tag {tag!r}")
        self.tag = tag


@dataclass(frozen=True)
class OutlookAssessment:
    """Validated structured response for one firm and cutoff."""

    knowledge_cutoff_date: str
    firm_name: str
    ticker: str
    country: str
    industry_code: str
    horizon_months: int
    outlook: int
    growth: int
    profitability: int
    risk: int
    confidence: int
    revenue_growth_bins: tuple[int, int, int, int, int]
    eps_growth_bins: tuple[int, int, int, int, int]
    margin_change_bins: tuple[int, int, int, int, int]
    drivers: tuple[str, ...]
    rationale_short: str
    knowledge_coverage: int


def _require_obj(node, field: str) -> dict:
    if not isinstance(node, dict):
        raise SchemaViolation(field, "must be a JSON object")
    return node


def _require_keys(node: dict, field: str, keys: tuple[str, ...]) -> None:
    missing = [k for k in keys if k not in node]
    if missing:
        raise SchemaViolation(field, f"missing keys {missing}")
    extra = [k for k in node if k not in keys]
    if extra:
        raise SchemaViolation(field, f"unexpected keys {extra}")


def _require_int(node, field: str) -> int:
    # bool is an int subclass; JSON true/false are not acceptable numbers here
    if isinstance(node, bool) or not isinstance(node, int):
        raise SchemaViolation(field, "must be an integer (a number, not a string)")
    return node


def _require_str(node, field: str) -> str:
    if not isinstance(node, str):
        raise SchemaViolation(field, "must be a string")
    return node


def _ranged_int(node, field: str, lo: int, hi: int) -> int:
    value = _require_int(node, field)
    if not lo <= value <= hi:
        raise RangeViolation(field, value, lo, hi)
    return value


def _bins(node, which: str, keys: tuple[str, ...]) -> tuple[int, int, int, int, int]:
    obj = _require_obj(node, which)
    _require_keys(obj, which, keys)
    values = []
    for k in keys:
        v = _require_int(obj[k], f"{which}.{k}")
        if v < 0:
            raise RangeViolation(f"{which}.{k}", v, 0, 100)
        values.append(v)
    total = sum(values)
    if total != 100:
        raise BinSumViolation(which, total)
    return tuple(values)  # type: ignore[return-value]


def parse_validate(raw: str) -> OutlookAssessment:
    """Parse a raw response into a validated OutlookAssessment.

    Raises NotJson for anything that is not a bare JSON object, and a
    specific ValidationError subclass for each schema breach. Validation is
    exact: a single bin unit off 100, one out-of-range score, or one unknown
    tag rejects the document.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise NotJson(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise NotJson("top-level JSON value must be an object")

    _require_keys(
        doc,
        "response",
        (
            "knowledge_cutoff_date",
            "firm",
            "horizon_months",
            "scores",
            "distributions",
            "drivers",
            "rationale_short",
            "knowledge_coverage",
        ),
    )

    cutoff = _require_str(doc["knowledge_cutoff_date"], "knowledge_cutoff_date")

    firm = _require_obj(doc["firm"], "firm")
    _require_keys(firm, "firm", ("name", "ticker", "country", "industry_code"))
    name = _require_str(firm["name"], "firm.name")
    ticker = _require_str(firm["ticker"], "firm.ticker")
    country = _require_str(firm["country"], "firm.country")
    industry = _require_str(firm["industry_code"], "firm.industry_code")

    horizon = _require_int(doc["horizon_months"], "horizon_months")
    if horizon != 12:
        raise SchemaViolation("horizon_months", f"must be 12, got {horizon}")

    scores = _require_obj(doc["scores"], "scores")
    _require_keys(scores, "scores", ("outlook", "growth", "profitability", "risk", "confidence"))
    outlook = _ranged_int(scores["outlook"], "scores.outlook", -10, 10)
    growth = _ranged_int(scores["growth"], "scores.growth", -10, 10)
    profitability = _ranged_int(scores["profitability"], "scores.profitability", -10, 10)
    risk = _ranged_int(scores["risk"], "scores.risk", -10, 10)
    confidence = _ranged_int(scores["confidence"], "scores.confidence", 0, 100)

    dists = _require_obj(doc["distributions"], "distributions")
    _require_keys(
        dists,
        "distributions",
        ("revenue_growth_bins_pct", "eps_growth_bins_pct", "margin_change_bins_pct"),
    )
    revenue = _bins(dists["revenue_growth_bins_pct"], "revenue_growth_bins_pct", REVENUE_BIN_KEYS)
    eps = _bins(dists["eps_growth_bins_pct"], "eps_growth_bins_pct", EPS_BIN_KEYS)
    margin = _bins(dists["margin_change_bins_pct"], "margin_change_bins_pct", MARGIN_BIN_KEYS)

    drivers_node = doc["drivers"]
    if not isinstance(drivers_node, list):
        raise SchemaViolation("drivers", "must be a JSON array")
    if not 2 <= len(drivers_node) <= 5:
        raise SchemaViolation("drivers", f"need 2-5 tags, got {len(drivers_node)}")
    drivers: list[str] = []
    for tag in drivers_node:
        if not isinstance(tag, str) or tag not in DRIVER_TAGS:
            raise UnknownDriverTag(tag)
        if tag in drivers:
            raise SchemaViolation("drivers", f"duplicate tag {tag!r}")
        drivers.append(tag)

    rationale = _require_str(doc["rationale_short"], "rationale_short")
    if len(rationale.split()) > RATIONALE_MAX_TOKENS:
        raise SchemaViolation(
            "rationale_short", f"{len(rationale.split())} tokens exceeds {RATIONALE_MAX_TOKENS}"
        )

    coverage = _ranged_int(doc["knowledge_coverage"], "knowledge_coverage", 0, 100)

    return OutlookAssessment(
        knowledge_cutoff_date=cutoff,
        firm_name=name,
        ticker=ticker,
        country=country,
        industry_code=industry,
        horizon_months=horizon,
        outlook=outlook,
        growth=growth,
        profitability=profitability,
        risk=risk,
        confidence=confidence,
        revenue_growth_bins=revenue,
        eps_growth_bins=eps,
        margin_change_bins=margin,
        drivers=tuple(drivers),
        rationale_short=rationale,
        knowledge_coverage=coverage,
    )


def serialize(assessment: OutlookAssessment) -> str:
    """Render an assessment back to schema-shaped JSON.

    parse_validate(serialize(a)) == a for every valid assessment.
    """
    doc = {
        "knowledge_cutoff_date": assessment.knowledge_cutoff_date,
        "firm": {
            "name": assessment.firm_name,
            "ticker": assessment.ticker,
            "country": assessment.country,
            "industry_code": assessment.industry_code,
        },
        "horizon_months": assessment.horizon_months,
        "scores": {
            "outlook": assessment.outlook,
            "growth": assessment.growth,
            "profitability": assessment.profitability,
            "risk": assessment.risk,
            "confidence": assessment.confidence,
        },
        "distributions": {
            "revenue_growth_bins_pct": dict(zip(REVENUE_BIN_KEYS, assessment.revenue_growth_bins)),
            "eps_growth_bins_pct": dict(zip(EPS_BIN_KEYS, assessment.eps_growth_bins)),
            "margin_change_bins_pct": dict(zip(MARGIN_BIN_KEYS, assessment.margin_change_bins)),
        },
        "drivers": list(assessment.drivers),
        "rationale_short": assessment.rationale_short,
        "knowledge_coverage": assessment.knowledge_coverage,
    }
    return json.dumps(doc, indent=2)


__all__ = [
    "BinSumViolation",
    "DRIVER_TAGS",
    "EPS_BIN_KEYS",
    "MARGIN_BIN_KEYS",
    "NotJson",
    "OutlookAssessment",
    "RATIONALE_MAX_TOKENS",
    "RangeViolation",
    "REVENUE_BIN_KEYS",
    "SchemaViolation",
    "UnknownDriverTag",
    "ValidationError",
    "parse_validate",
    "serialize",
]
