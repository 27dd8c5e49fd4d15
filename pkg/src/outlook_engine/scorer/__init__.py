"""Structured outlook scoring: prompt rendering, response validation,
pluggable clients, on-disk caching, batch scoring and the contamination probe."""

from .batch import ScoreBatchReport, leakage_probe, load_probes_csv, score_universe
from .cache import ScoreCache, prompt_hash
from .client import (
    CallableScorerClient,
    CutoffRespectingScorerClient,
    HttpScorerClient,
    OmniscientScorerClient,
    ScorerClient,
    SyntheticScorerClient,
    TransportError,
)
from .prompt import PromptPair, TemplateError, render_prompt
from .schema import (
    BinSumViolation,
    DRIVER_TAGS,
    NotJson,
    OutlookAssessment,
    RangeViolation,
    SchemaViolation,
    UnknownDriverTag,
    ValidationError,
    parse_validate,
    serialize,
)

__all__ = [
    "BinSumViolation",
    "CallableScorerClient",
    "CutoffRespectingScorerClient",
    "DRIVER_TAGS",
    "HttpScorerClient",
    "NotJson",
    "OmniscientScorerClient",
    "OutlookAssessment",
    "PromptPair",
    "RangeViolation",
    "SchemaViolation",
    "ScoreBatchReport",
    "ScoreCache",
    "ScorerClient",
    "SyntheticScorerClient",
    "TemplateError",
    "TransportError",
    "UnknownDriverTag",
    "ValidationError",
    "leakage_probe",
    "load_probes_csv",
    "parse_validate",
    "prompt_hash",
    "render_prompt",
    "score_universe",
    "serialize",
]
