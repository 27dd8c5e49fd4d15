"""Batch scoring of a firm universe and the post-cutoff contamination probe."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ..panel import Cutoff, FirmSnapshot
from .cache import ScoreCache, prompt_hash
from .client import ScorerClient, TransportError
from .prompt import PromptPair, TemplateError, render_prompt
from .schema import OutlookAssessment, ValidationError, parse_validate

STATUSES = ("ok", "malformed", "refusal", "transport_error")

LEAKAGE_SYSTEM_TEXT = (
    "Answer the question with the exact answer only: no explanation, no "
    "punctuation, no hedging. If you do not know, reply with an empty string."
)


@dataclass
class ScoreBatchReport:
    """Per-firm scoring status; the four statuses partition the universe."""

    statuses: dict[str, str] = field(default_factory=dict)

    def count(self, status: str) -> int:
        return sum(1 for s in self.statuses.values() if s == status)

    @property
    def total(self) -> int:
        return len(self.statuses)

    @property
    def missingness_rate(self) -> float:
        if not self.statuses:
            return 0.0
        return 1.0 - self.count("ok") / self.total


def _attempt(
    client: ScorerClient,
    prompt: PromptPair,
    max_retries: int,
    backoff_base: float,
    sleep: Callable[[float], None],
) -> str:
    """One logical call with bounded retries on transport errors only.

    Schema violations are never retried: a deterministic decode would just
    repeat them.
    """
    last: TransportError | None = None
    for attempt in range(max_retries):
        try:
            return client.send(prompt)
        except TransportError as exc:
            last = exc
            if attempt + 1 < max_retries:
                sleep(backoff_base * (2**attempt))
    assert last is not None
    raise last


def score_universe(
    firms: Sequence[FirmSnapshot],
    cutoff: Cutoff,
    client: ScorerClient,
    cache: ScoreCache | None = None,
    *,
    max_retries: int = 3,
    backoff_base: float = 0.1,
    parallelism: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[dict[str, OutlookAssessment], ScoreBatchReport]:
    """Score every firm once against a cutoff, with caching and retries.

    Malformed or refused responses are coded missing, never raised; only the
    per-firm status records what happened. Results are cached by
    (model, firm, prompt hash) so a warm re-run makes zero client calls.
    """

    def score_one(firm: FirmSnapshot) -> tuple[str, str | None, str]:
        try:
            prompt = render_prompt(firm, cutoff)
        except TemplateError:
            return firm.firm_id, None, "malformed"
        phash = prompt_hash(prompt)
        raw = cache.get(cutoff.model_name, firm.firm_id, phash) if cache else None
        if raw is None:
            try:
                raw = _attempt(client, prompt, max_retries, backoff_base, sleep)
            except TransportError:
                return firm.firm_id, None, "transport_error"
            if cache:
                cache.put(cutoff.model_name, firm.firm_id, phash, raw)
        if raw.strip() == "":
            return firm.firm_id, None, "refusal"
        return firm.firm_id, raw, "pending"

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            raw_results = list(pool.map(score_one, firms))
    else:
        raw_results = [score_one(f) for f in firms]

    assessments: dict[str, OutlookAssessment] = {}
    report = ScoreBatchReport()
    for firm_id, raw, status in raw_results:
        if status != "pending":
            report.statuses[firm_id] = status
            continue
        try:
            assessments[firm_id] = parse_validate(raw)
            report.statuses[firm_id] = "ok"
        except ValidationError:
            report.statuses[firm_id] = "malformed"
    return assessments, report


def leakage_probe(client: ScorerClient, probes: Sequence[tuple[str, str]]) -> float:
    """Fraction of post-cutoff trivia questions answered exactly right.

    A cutoff-respecting backend scores 0.0; any positive accuracy flags
    contamination of the claimed knowledge boundary.
    """
    if not probes:
        raise ValueError("need at least one probe")
    correct = 0
    for question, answer in probes:
        response = client.send(PromptPair(system_text=LEAKAGE_SYSTEM_TEXT, user_text=question))
        if response.strip() == answer.strip():
            correct += 1
    return correct / len(probes)


def load_probes_csv(path: str | Path) -> list[tuple[str, str]]:
    """Read (question, answer) pairs from a probe CSV with an event_date column."""
    out: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["question", "answer", "event_date"]:
            raise ValueError(f"{path}: expected header question,answer,event_date")
        for row in reader:
            if not row or all(c.strip() == "" for c in row):
                continue
            out.append((row[0], row[1]))
    return out


__all__ = [
    "LEAKAGE_SYSTEM_TEXT",
    "STATUSES",
    "ScoreBatchReport",
    "leakage_probe",
    "load_probes_csv",
    "score_universe",
]
