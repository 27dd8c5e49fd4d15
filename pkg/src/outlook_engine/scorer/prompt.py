"""Prompt templates and deterministic rendering.

The templates carry six placeholder tokens. Substitution is literal string
replacement (the JSON schema block contains real braces, so str.format is
off the table), and rendering the same snapshot twice yields identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..panel import Cutoff, FirmSnapshot

PLACEHOLDERS = (
    "{CUT_OFF_DATE}",
    "{COMPANY_NAME}",
    "{TICKER}",
    "{ISIN}",
    "{COUNTRY}",
    "{INDUSTRY_CODE}",
)

SYSTEM_TEMPLATE = (
    'You are an unbiased CFA-level equity analyst. Assume "today" is {CUT_OFF_DATE}. '
    "You must IGNORE any event, price, or fact that occurred after that date. "
    "Base every judgment solely on information publicly available on or before "
    "{CUT_OFF_DATE} and the identifiers provided for the company below. "
    "Respond in English."
)

USER_TEMPLATE = """\
Using only pre-{CUT_OFF_DATE} knowledge, produce a 12-month forward business outlook for {COMPANY_NAME} (Ticker: {TICKER}, ISIN: {ISIN}) relative to peers in its industry. Focus exclusively on business fundamentals: revenue growth, profitability trends and key operational risks. DO NOT use or reference valuation metrics, market prices, or technical indicators.

Your response must follow the JSON schema below exactly. Do not include any additional commentary, formatting, or code fences. If uncertain, lower confidence and avoid speculation.

OUTPUT FORMAT (strict JSON)
{
  "knowledge_cutoff_date": "{CUT_OFF_DATE}",
  "firm": {
    "name": "{COMPANY_NAME}",
    "ticker": "{TICKER}",
    "country": "{COUNTRY}",
    "industry_code": "{INDUSTRY_CODE}"
  },
  "horizon_months": 12,
  "scores": {
    "outlook": integer [-10..10],
    "growth": integer [-10..10],
    "profitability": integer [-10..10],
    "risk": integer [-10..10],
    "confidence": integer [0..100]
  },
  "distributions": {
    "revenue_growth_bins_pct": {
      "less_than_minus_10": int,
      "minus_10_to_0": int,
      "plus_0_to_5": int,
      "plus_5_to_10": int,
      "greater_than_plus_10": int
    },
    "eps_growth_bins_pct": {
      "less_than_minus_20": int,
      "minus_20_to_0": int,
      "plus_0_to_10": int,
      "plus_10_to_25": int,
      "greater_than_plus_25": int
    },
    "margin_change_bins_pct": {
      "less_than_minus_2pp": int,
      "minus_2pp_to_0pp": int,
      "plus_0pp_to_1pp": int,
      "plus_1pp_to_2pp": int,
      "greater_than_plus_2pp": int
    }
  },
  "drivers": [
    2-5 tags from this set:
    ["product_cycle", "pricing_power", "regulation", "competition",
     "supply_chain", "capital_needs", "macro_exposure", "IP_legal",
     "mgmt_execution", "network_effects", "customer_concentration",
     "input_costs"]
  ],
  "rationale_short": "concise summary < 30 tokens; cite 1-3 key drivers;
                       no facts after {CUT_OFF_DATE}",
  "knowledge_coverage": integer [0..100]
}

HARD CONSTRAINTS
- Return only a valid JSON object (no code fences, markdown, or extra text).
- All numeric fields must be numbers, not strings.
- Each sub-distribution must sum to exactly 100.
- Do not include placeholders (e.g., __REQUIRED__, TODO, ...).
- Lower confidence if the company or industry knowledge is limited.
"""


class TemplateError(Exception):
    """A required identifier is empty or a placeholder survived substitution."""


@dataclass(frozen=True)
class PromptPair:
    """Exact system/user strings sent to a scorer backend."""

    system_text: str
    user_text: str


def render_prompt(firm: FirmSnapshot, cutoff: Cutoff) -> PromptPair:
    """Substitute firm identifiers and the cutoff date into the templates.

    The cutoff date is rendered ISO-8601. Raises TemplateError when an
    identifier is missing or any placeholder token remains.
    """
    values = {
        "{CUT_OFF_DATE}": cutoff.knowledge_cutoff.isoformat(),
        "{COMPANY_NAME}": firm.name,
        "{TICKER}": firm.ticker,
        "{ISIN}": firm.firm_id,
        "{COUNTRY}": firm.country,
        "{INDUSTRY_CODE}": firm.sector,
    }
    for token, value in values.items():
        if not value:
            raise TemplateError(f"empty identifier for {token}")

    system_text = SYSTEM_TEMPLATE
    user_text = USER_TEMPLATE
    for token, value in values.items():
        system_text = system_text.replace(token, value)
        user_text = user_text.replace(token, value)
    for token in PLACEHOLDERS:
        if token in system_text or token in user_text:
            raise TemplateError(f"placeholder {token} survived substitution")
    return PromptPair(system_text=system_text, user_text=user_text)


__all__ = ["PLACEHOLDERS", "PromptPair", "SYSTEM_TEMPLATE", "TemplateError", "USER_TEMPLATE", "render_prompt"]
