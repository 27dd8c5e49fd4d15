"""Scorer backends: a minimal chat-completions HTTP client plus deterministic
mock clients for tests, offline runs and the contamination probe."""

from __future__ import annotations

import hashlib
import json
import re
from typing import Callable, Mapping, Protocol

from .prompt import PromptPair
from .schema import DRIVER_TAGS, EPS_BIN_KEYS, MARGIN_BIN_KEYS, REVENUE_BIN_KEYS


class TransportError(Exception):
    """Network-level failure talking to a scorer backend (retryable)."""


class ScorerClient(Protocol):
    """A backend that maps a prompt pair to raw response text.

    Deterministic backends must return identical text for identical prompts;
    decode parameters default to greedy (temperature 0, top_p 1).
    """

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        ...


class HttpScorerClient:
    """POSTs a two-message chat request to a completions-style endpoint.

    Endpoint, credentials and model name come from configuration (see the
    SCORER_* environment variables handled by the CLI).
    """

    def __init__(self, endpoint: str, api_key: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": temperature,
            "top_p": top_p,
        }
        try:
            resp = requests.post(
                self.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from exc


class CallableScorerClient:
    """Wraps a plain function (PromptPair -> str); the test workhorse."""

    def __init__(self, fn: Callable[[PromptPair], str]):
        self._fn = fn
        self.calls = 0

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        self.calls += 1
        return self._fn(prompt)


_FIRM_FIELD_RE = {
    "name": re.compile(r'"name": "(.*)",\n'),
    "ticker": re.compile(r'"ticker": "(.*)",\n'),
    "country": re.compile(r'"country": "(.*)",\n'),
    "industry_code": re.compile(r'"industry_code": "(.*)"\n'),
    "cutoff": re.compile(r'"knowledge_cutoff_date": "(.*)",\n'),
}


def _split_hundred(seed: bytes, salt: str) -> list[int]:
    """Five non-negative integers summing to exactly 100, seeded by content."""
    h = hashlib.sha256(seed + salt.encode()).digest()
    cuts = sorted(h[i] % 101 for i in range(4))
    parts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], cuts[3] - cuts[2], 100 - cuts[3]]
    return parts


class SyntheticScorerClient:
    """Deterministic offline backend producing schema-valid responses.

    Scores derive from a hash of the rendered prompt (so identical prompts
    yield identical responses), or from an explicit per-ticker outlook map
    when supplied. Used for mock CLI runs and replaying planted panels.
    """

    def __init__(self, outlook_by_ticker: Mapping[str, int] | None = None, seed: int = 0):
        self.outlook_by_ticker = dict(outlook_by_ticker or {})
        self.seed = seed

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        fields = {}
        for key, pattern in _FIRM_FIELD_RE.items():
            m = pattern.search(prompt.user_text)
            if not m:
                return ""  # unrecognized prompt: behave like a refusal
            fields[key] = m.group(1)
        digest = hashlib.sha256(
            f"{self.seed}|{prompt.user_text}".encode("utf-8")
        ).digest()

        def pick(i: int, lo: int, hi: int) -> int:
            return lo + digest[i % len(digest)] % (hi - lo + 1)

        outlook = self.outlook_by_ticker.get(fields["ticker"], pick(0, -10, 10))
        n_drivers = pick(5, 2, 5)
        drivers = [DRIVER_TAGS[(digest[6] + 3 * j) % len(DRIVER_TAGS)] for j in range(12)]
        unique = list(dict.fromkeys(drivers))[:n_drivers]
        doc = {
            "knowledge_cutoff_date": fields["cutoff"],
            "firm": {
                "name": fields["name"],
                "ticker": fields["ticker"],
                "country": fields["country"],
                "industry_code": fields["industry_code"],
            },
            "horizon_months": 12,
            "scores": {
                "outlook": outlook,
                "growth": pick(1, -10, 10),
                "profitability": pick(2, -10, 10),
                "risk": pick(3, -10, 10),
                "confidence": pick(4, 0, 100),
            },
            "distributions": {
                "revenue_growth_bins_pct": dict(
                    zip(REVENUE_BIN_KEYS, _split_hundred(digest, "rev"))
                ),
                "eps_growth_bins_pct": dict(zip(EPS_BIN_KEYS, _split_hundred(digest, "eps"))),
                "margin_change_bins_pct": dict(
                    zip(MARGIN_BIN_KEYS, _split_hundred(digest, "mgn"))
                ),
            },
            "drivers": unique,
            "rationale_short": f"Steady fundamentals for {fields['ticker']} driven by {unique[0]}.",
            "knowledge_coverage": pick(7, 0, 100),
        }
        return json.dumps(doc)


class CutoffRespectingScorerClient:
    """Probe mock with no post-cutoff knowledge: it refuses every question."""

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        return ""


class OmniscientScorerClient:
    """Probe mock that knows every answer (the contamination ceiling)."""

    def __init__(self, answer_key: Mapping[str, str]):
        self.answer_key = dict(answer_key)

    def send(self, prompt: PromptPair, *, temperature: float = 0.0, top_p: float = 1.0) -> str:
        return self.answer_key.get(prompt.user_text, "")


__all__ = [
    "CallableScorerClient",
    "CutoffRespectingScorerClient",
    "HttpScorerClient",
    "OmniscientScorerClient",
    "ScorerClient",
    "SyntheticScorerClient",
    "TransportError",
]
