"""Cross-sectional OLS, panel-robust covariance, cross-section averaging,
bootstrap, rank correlation and Wald tests.

Fits use an orthogonal (QR/SVD) decomposition of the design matrix; the
normal-equations form appears only in the test oracles. Covariance schemes:
homoskedastic, HC0/HC1 sandwiches, cluster-robust with the
G/(G-1) * (n-1)/(n-k) correction, and a kernel-weighted estimator whose
scores are summed within time groups (robust to arbitrary cross-sectional
dependence). The kernel is Bartlett with one lag by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from itertools import permutations
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

SCORE_COL = "score_z"
CHEAPNESS_COLS = ("z_invpe", "z_ice_gls", "z_ice_peg", "z_inveveb")
FACTOR_CONTROLS = ("size", "quality", "value", "momentum")
H2_CONTROLS = FACTOR_CONTROLS + CHEAPNESS_COLS
PROXY_COLS = ("analyst_coverage", "pt_coverage", "pt_dispersion", "leverage", "adtv")
HORIZONS = (1, 3, 4, 6, 12)

_RANK_RTOL = 1e-10
_FLOAT_FMT = "%.12g"


def ret_col(horizon: int) -> str:
    return f"ret_{horizon}m"


class EconometricsError(Exception):
    pass


class EmptyDesign(EconometricsError):
    """Listwise deletion removed every observation."""


class RankDeficient(EconometricsError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; implicated columns: {list(columns)}")
        self.columns = list(columns)


class DegenerateTimeDimension(EconometricsError):
    """A time-grouped covariance needs at least two time groups."""


class InsufficientSections(EconometricsError):
    """Cross-section averaging needs at least two sections."""


class SingularRestriction(EconometricsError):
    pass


class ShapeError(EconometricsError):
    pass


# ---------------------------------------------------------------------------
# Cross-sections and design construction
# ---------------------------------------------------------------------------


@dataclass
class CrossSection:
    """One cutoff's aligned table of predictor, controls and forward returns.

    `data` is indexed by firm_id; conventional columns are score_z, the four
    cheapness z-scores, the factor controls, attention proxies, sector,
    log_mcap and ret_{h}m per horizon.
    """

    model_name: str
    knowledge_cutoff: date
    analysis_date: date
    data: pd.DataFrame
    architecture: str = "standard"


def stack_sections(sections: Sequence[CrossSection]) -> pd.DataFrame:
    """Pool cross-sections into one frame with model/cutoff label columns."""
    if not sections:
        raise InsufficientSections("no cross-sections provided")
    frames = []
    for s in sections:
        f = s.data.copy()
        f["model_name"] = s.model_name
        f["analysis_date"] = s.analysis_date
        frames.append(f)
    return pd.concat(frames, axis=0)


@dataclass(frozen=True)
class DesignSpec:
    """Names the response, predictor, controls, interactions and fixed effects.

    Interactions are proxy column names; each contributes a column equal to
    predictor * proxy. Fixed effects are label columns expanded to dummies
    with the first (sorted) category dropped.
    """

    response: str
    predictor: str
    controls: tuple[str, ...] = ()
    interactions: tuple[str, ...] = ()
    fixed_effects: tuple[str, ...] = ()
    intercept: bool = True

    def __post_init__(self) -> None:
        names = [self.response, self.predictor, *self.controls]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in design: {names}")
        if self.fixed_effects and not self.intercept:
            raise ValueError("fixed effects require an intercept")

    def required_columns(self) -> tuple[str, ...]:
        return (
            self.response,
            self.predictor,
            *self.controls,
            *self.interactions,
            *self.fixed_effects,
        )


@dataclass
class Design:
    y: np.ndarray
    X: np.ndarray
    columns: list[str]
    index: pd.Index
    aux: pd.DataFrame  # label columns (clusters, time groups) in row order


def interaction_col(predictor: str, proxy: str) -> str:
    return f"{predictor}:{proxy}"


def build_design(
    frame: pd.DataFrame, spec: DesignSpec, aux_columns: Sequence[str] = ()
) -> Design:
    """Assemble (y, X) with listwise deletion of incomplete rows.

    Fixed-effect labels expand to first-category-dropped dummies; interaction
    columns are elementwise products of the predictor with each proxy.
    `aux_columns` (e.g. cluster or time labels) are carried through row-aligned.
    """
    needed = list(spec.required_columns()) + [
        c for c in aux_columns if c not in spec.required_columns()
    ]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise KeyError(f"columns not in frame: {missing}")
    sub = frame[needed].dropna()
    if sub.empty:
        raise EmptyDesign("no rows remain after listwise deletion")

    cols: dict[str, np.ndarray] = {}
    names: list[str] = []
    if spec.intercept:
        cols["const"] = np.ones(len(sub))
        names.append("const")
    cols[spec.predictor] = sub[spec.predictor].to_numpy(dtype=float)
    names.append(spec.predictor)
    for c in spec.controls:
        cols[c] = sub[c].to_numpy(dtype=float)
        names.append(c)
    for proxy in spec.interactions:
        name = interaction_col(spec.predictor, proxy)
        cols[name] = cols[spec.predictor] * sub[proxy].to_numpy(dtype=float)
        names.append(name)
    for fe in spec.fixed_effects:
        categories = sorted(sub[fe].astype(str).unique())
        for cat in categories[1:]:  # first category is the baseline
            name = f"{fe}[{cat}]"
            cols[name] = (sub[fe].astype(str) == cat).to_numpy(dtype=float)
            names.append(name)

    X = np.column_stack([cols[n] for n in names])
    y = sub[spec.response].to_numpy(dtype=float)
    return Design(y=y, X=X, columns=names, index=sub.index, aux=sub[list(aux_columns)])


# ---------------------------------------------------------------------------
# OLS and covariance schemes
# ---------------------------------------------------------------------------


@dataclass
class RegressionFit:
    params: pd.Series
    cov: pd.DataFrame
    n: int
    r2: float
    residuals: np.ndarray
    scheme: str
    dof_resid: int

    @property
    def k(self) -> int:
        return len(self.params)

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.cov.to_numpy())), index=self.params.index)

    @property
    def tstats(self) -> pd.Series:
        return self.params / self.se

    @property
    def pvalues(self) -> pd.Series:
        t = self.tstats.to_numpy()
        return pd.Series(2.0 * stats.t.sf(np.abs(t), self.dof_resid), index=self.params.index)


def _implicated_columns(X: np.ndarray, columns: Sequence[str]) -> list[str]:
    """Columns most likely to be involved in a rank deficiency (QR pivoting)."""
    from scipy.linalg import qr

    _, r, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return list(columns)
    bad = diag <= _RANK_RTOL * diag.max() if diag.max() > 0 else np.ones_like(diag, dtype=bool)
    rank = int(np.sum(~bad))
    return [columns[p] for p in piv[rank:]]


def _check_rank(X: np.ndarray, columns: Sequence[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(columns)
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0 or s[-1] <= _RANK_RTOL * s[0]:
        raise RankDeficient(_implicated_columns(X, columns))


def _cluster_meat(X: np.ndarray, resid: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, int]:
    scores = X * resid[:, None]
    frame = pd.DataFrame(scores)
    sums = frame.groupby(pd.Series(labels, index=frame.index).astype(str)).sum().to_numpy()
    return sums.T @ sums, sums.shape[0]


def driscoll_kraay_cov(
    X: np.ndarray,
    resid: np.ndarray,
    time_labels: Sequence,
    lag: int = 1,
) -> np.ndarray:
    """Sandwich covariance with scores summed within time groups and a
    Bartlett kernel (weights 1 - l/(L+1)) across the group sums."""
    if lag < 0:
        raise ValueError("lag must be >= 0")
    labels = pd.Series(list(time_labels))
    if len(labels) != X.shape[0]:
        raise ShapeError(f"{len(labels)} time labels for {X.shape[0]} rows")
    scores = X * resid[:, None]
    codes, _ = pd.factorize(labels, sort=True)  # native ordering of time keys
    grouped = pd.DataFrame(scores).groupby(codes, sort=True).sum()
    h = grouped.to_numpy()  # T x k in time order
    T = h.shape[0]
    if T <= 1:
        raise DegenerateTimeDimension(f"need >= 2 time groups, got {T}")
    S = h.T @ h
    for ell in range(1, min(lag, T - 1) + 1):
        w = 1.0 - ell / (lag + 1.0)
        gamma = h[ell:].T @ h[:-ell]
        S += w * (gamma + gamma.T)
    xtx_inv = np.linalg.inv(X.T @ X)
    return xtx_inv @ S @ xtx_inv


def ols_fit(
    y: np.ndarray,
    X: np.ndarray,
    columns: Sequence[str] | None = None,
    se: str = "iid",
    *,
    clusters: Sequence | None = None,
    time_labels: Sequence | None = None,
    lag: int = 1,
) -> RegressionFit:
    """Least-squares fit with the requested covariance scheme.

    se is one of iid, hc0, hc1, cluster (requires `clusters`) or
    driscoll_kraay (requires `time_labels`). Raises RankDeficient when the
    smallest singular value falls below 1e-10 of the largest.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape[0] != n:
        raise ShapeError(f"y has {y.shape[0]} rows, X has {n}")
    if columns is None:
        columns = [f"x{i}" for i in range(k)]
    columns = list(columns)
    _check_rank(X, columns)

    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)

    r_inv = np.linalg.inv(r)
    xtx_inv = r_inv @ r_inv.T
    dof = n - k
    if dof <= 0:
        raise EconometricsError("covariance needs n > k")

    scheme = se
    if se == "iid":
        cov = (rss / dof) * xtx_inv
    elif se in ("hc0", "hc1"):
        meat = (X * resid[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv
        if se == "hc1":
            cov = cov * (n / dof)
    elif se == "cluster":
        if clusters is None:
            raise ValueError("cluster scheme requires cluster labels")
        if len(clusters) != n:
            raise ShapeError(f"{len(clusters)} cluster labels for {n} rows")
        meat, g = _cluster_meat(X, resid, np.asarray(clusters))
        if g < 2:
            raise EconometricsError("cluster covariance needs >= 2 clusters")
        factor = (g / (g - 1.0)) * ((n - 1.0) / dof)
        cov = factor * (xtx_inv @ meat @ xtx_inv)
        scheme = f"cluster(G={g})"
    elif se == "driscoll_kraay":
        if time_labels is None:
            raise ValueError("driscoll_kraay scheme requires time labels")
        cov = driscoll_kraay_cov(X, resid, time_labels, lag=lag)
        scheme = f"driscoll_kraay(lag={lag})"
    else:
        raise ValueError(f"unknown se scheme {se!r}")

    return RegressionFit(
        params=pd.Series(beta, index=columns),
        cov=pd.DataFrame(cov, index=columns, columns=columns),
        n=n,
        r2=r2,
        residuals=resid,
        scheme=scheme,
        dof_resid=dof,
    )


def fit_design(frame: pd.DataFrame, spec: DesignSpec, se: str = "iid", **kwargs) -> RegressionFit:
    """build_design + ols_fit, with cluster/time labels drawn from the frame."""
    cluster_col = kwargs.pop("cluster_col", None)
    time_col = kwargs.pop("time_col", None)
    aux = tuple(c for c in (cluster_col, time_col) if c is not None)
    design = build_design(frame, spec, aux_columns=aux)
    if cluster_col is not None:
        kwargs["clusters"] = design.aux[cluster_col].to_numpy()
    if time_col is not None:
        kwargs["time_labels"] = design.aux[time_col].to_numpy()
    return ols_fit(design.y, design.X, design.columns, se, **kwargs)


# ---------------------------------------------------------------------------
# Cross-section averaging, bootstrap, rank correlation, Wald
# ---------------------------------------------------------------------------


@dataclass
class FMResult:
    """Averaged per-section coefficient with iid and kernel-adjusted errors."""

    sections: np.ndarray
    mean: float
    se_iid: float
    se_nw: float
    nw_lag: int
    degenerate: bool

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    @property
    def t_iid(self) -> float:
        return self.mean / self.se_iid if self.se_iid > 0 else math.nan

    @property
    def t_nw(self) -> float:
        return self.mean / self.se_nw if self.se_nw > 0 else math.nan

    @property
    def se_iid_ddof0(self) -> float:
        """Divide-by-T convention, reported alongside the default ddof=1."""
        return float(np.std(self.sections, ddof=0) / math.sqrt(len(self.sections)))


def sample_autocovariance(values: np.ndarray, lag: int) -> float:
    """gamma_l = (1/T) sum_{t=l+1..T} (x_t - xbar)(x_{t-l} - xbar)."""
    x = np.asarray(values, dtype=float)
    T = len(x)
    if lag >= T:
        return 0.0
    d = x - x.mean()
    return float((d[lag:] * d[: T - lag]).sum() / T)


def fama_macbeth(coeffs: Sequence[float], nw_lag: int = 1) -> FMResult:
    """Average per-section coefficients; the iid error is sample std over
    sqrt(T), the kernel error uses Bartlett-weighted sample autocovariances
    of the section series."""
    x = np.asarray(list(coeffs), dtype=float)
    T = len(x)
    if T < 2:
        raise InsufficientSections(f"need >= 2 sections, got {T}")
    mean = float(x.mean())
    se_iid = float(np.std(x, ddof=1) / math.sqrt(T))
    var_nw = sample_autocovariance(x, 0)
    for ell in range(1, nw_lag + 1):
        w = 1.0 - ell / (nw_lag + 1.0)
        var_nw += 2.0 * w * sample_autocovariance(x, ell)
    var_nw = max(var_nw, 0.0) / T
    se_nw = math.sqrt(var_nw)
    return FMResult(
        sections=x,
        mean=mean,
        se_iid=se_iid,
        se_nw=se_nw,
        nw_lag=nw_lag,
        degenerate=(se_iid == 0.0),
    )


@dataclass(frozen=True)
class BootstrapResult:
    mean: float
    ci_low: float
    ci_high: float
    p_value: float
    n_resamples: int
    seed: int


def bootstrap_mean(values: Sequence[float], n_resamples: int = 10_000, seed: int = 0) -> BootstrapResult:
    """Percentile CI of the mean and a two-sided sign p-value from
    resampling with replacement; deterministic for a fixed seed."""
    x = np.asarray(list(values), dtype=float)
    if len(x) < 2:
        raise ValueError("need >= 2 values")
    if n_resamples < 100:
        raise ValueError("need >= 100 resamples")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(x), size=(n_resamples, len(x)))
    means = x[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    frac_le = float(np.mean(means <= 0.0))
    frac_ge = float(np.mean(means >= 0.0))
    p = max(2.0 * min(frac_le, frac_ge), 2.0 / n_resamples)
    return BootstrapResult(
        mean=float(x.mean()),
        ci_low=float(lo),
        ci_high=float(hi),
        p_value=min(p, 1.0),
        n_resamples=n_resamples,
        seed=seed,
    )


def _rank_average(x: np.ndarray) -> np.ndarray:
    return stats.rankdata(x, method="average")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0:
        return math.nan
    return float(a @ b) / denom


def spearman_exact_p(x: np.ndarray, y: np.ndarray, rho_obs: float) -> float:
    """Two-sided permutation p-value over all n! orderings of y."""
    rx = _rank_average(np.asarray(x, dtype=float))
    ry = _rank_average(np.asarray(y, dtype=float))
    n = len(rx)
    count = 0
    total = 0
    for perm in permutations(range(n)):
        rho = _pearson(rx, ry[list(perm)])
        if abs(rho) >= abs(rho_obs) - 1e-12:
            count += 1
        total += 1
    return count / total


def spearman_t_p(rho: float, n: int) -> float:
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p: float
    method: str


def spearman(x: Sequence[float], y: Sequence[float]) -> SpearmanResult:
    """Rank correlation with average ranks for ties; exact permutation
    p-value for n <= 8, otherwise the t approximation."""
    x = np.asarray(list(x), dtype=float)
    y = np.asarray(list(y), dtype=float)
    if len(x) != len(y):
        raise ShapeError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ShapeError("need length >= 3")
    rho = _pearson(_rank_average(x), _rank_average(y))
    if len(x) <= 8:
        return SpearmanResult(rho=rho, p=spearman_exact_p(x, y, rho), method="exact")
    return SpearmanResult(rho=rho, p=spearman_t_p(rho, len(x)), method="t-approx")


@dataclass(frozen=True)
class WaldResult:
    f_stat: float
    p_value: float
    rank: int
    dof_resid: int


def wald_restriction(fit: RegressionFit, R: np.ndarray, q: np.ndarray) -> WaldResult:
    """F test of R beta = q using the fit's covariance."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    k = fit.k
    if R.shape[1] != k:
        raise ShapeError(f"R has {R.shape[1]} columns, fit has {k} coefficients")
    if q.shape[0] != R.shape[0]:
        raise ShapeError(f"q has {q.shape[0]} entries, R has {R.shape[0]} rows")
    s = np.linalg.svd(R, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise SingularRestriction("restriction matrix is row rank deficient")
    diff = R @ fit.params.to_numpy() - q
    middle = R @ fit.cov.to_numpy() @ R.T
    try:
        solved = np.linalg.solve(middle, diff)
    except np.linalg.LinAlgError as exc:
        raise SingularRestriction(f"R V R' is singular: {exc}") from exc
    cond = np.linalg.cond(middle)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularRestriction("R V R' is numerically singular")
    rank = R.shape[0]
    f = float(diff @ solved) / rank
    p = float(stats.f.sf(f, rank, fit.dof_resid))
    return WaldResult(f_stat=f, p_value=p, rank=rank, dof_resid=fit.dof_resid)


# ---------------------------------------------------------------------------
# Hypothesis suite
# ---------------------------------------------------------------------------

H1_OUTCOMES = ("fwd_revenue_growth", "fwd_net_income_growth", "fwd_target_revision")


def h1_spec(outcome: str) -> DesignSpec:
    """Validation regressions: outcome on the score with factor controls only."""
    return DesignSpec(response=outcome, predictor=SCORE_COL, controls=FACTOR_CONTROLS)


def h2_spec(horizon: int) -> DesignSpec:
    """Core return regressions: eight controls (factors plus cheapness)."""
    return DesignSpec(response=ret_col(horizon), predictor=SCORE_COL, controls=H2_CONTROLS)


@dataclass
class HypothesisReport:
    """Named result tables plus run metadata; writes one CSV per table."""

    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def write(self, outdir) -> list[str]:
        from pathlib import Path

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.tables):
            path = out / f"{name}.csv"
            self.tables[name].to_csv(path, index=False, float_format=_FLOAT_FMT)
            written.append(path.name)
        return written


def _coef_row(fit: RegressionFit, coef: str) -> dict:
    return {
        "coef": float(fit.params[coef]),
        "se": float(fit.se[coef]),
        "t": float(fit.tstats[coef]),
        "p": float(fit.pvalues[coef]),
        "n": fit.n,
        "r2": fit.r2,
        "scheme": fit.scheme,
    }


def _pick_primary(sections: Sequence[CrossSection], priority: Sequence[str] | None) -> CrossSection:
    if priority:
        by_name = {s.model_name: s for s in sections}
        for name in priority:
            if name in by_name:
                return by_name[name]
    return max(sections, key=lambda s: (len(s.data), s.model_name))


def _one_per_cutoff(
    sections: Sequence[CrossSection], priority: Sequence[str] | None
) -> list[CrossSection]:
    """The highest-priority (else largest) model at each analysis date."""
    chosen: dict[date, CrossSection] = {}
    for d in sorted({s.analysis_date for s in sections}):
        candidates = [s for s in sections if s.analysis_date == d]
        chosen[d] = _pick_primary(candidates, priority)
    return [chosen[d] for d in sorted(chosen)]


def run_hypothesis_suite(
    sections: Sequence[CrossSection],
    *,
    horizons: Sequence[int] = HORIZONS,
    h1_outcomes: Sequence[str] = H1_OUTCOMES,
    model_priority: Sequence[str] | None = None,
    nw_lag: int = 1,
    n_bootstrap: int = 10_000,
    seed: int = 0,
) -> HypothesisReport:
    """Run the full test battery over a panel of scored cross-sections.

    Emits: validation regressions (h1), per-model and pooled return
    regressions with model/sector fixed effects, clustered and time-grouped
    kernel errors, cross-section averages with bootstrap (h2), size terciles
    and information-environment interactions (h3), and the per-model
    coefficient table plus horizon rank correlation (h4). Errors from
    individual tables are recorded, not raised.
    """
    report = HypothesisReport()
    report.metadata = {
        "nw_lag": nw_lag,
        "n_bootstrap": n_bootstrap,
        "seed": seed,
        "cluster_correction": "G/(G-1) * (n-1)/(n-k)",
        "fm_se_conventions": "iid uses ddof=1; divide-by-T variant in fm tables as se_iid_ddof0",
    }
    if not sections:
        report.errors.append("InsufficientSections: no cross-sections provided")
        return report

    sections = sorted(sections, key=lambda s: (s.analysis_date, s.model_name))
    horizons = [h for h in horizons if any(ret_col(h) in s.data.columns for s in sections)]
    primary = _pick_primary(sections, model_priority)
    report.metadata["primary_model"] = primary.model_name
    pooled = stack_sections(sections)

    def guarded(table_name: str, fn) -> None:
        try:
            fn()
        except EconometricsError as exc:
            report.errors.append(f"{table_name}: {type(exc).__name__}: {exc}")

    # H1: validation regressions per model and outcome
    def do_h1() -> None:
        rows = []
        for s in sections:
            for outcome in h1_outcomes:
                if outcome not in s.data.columns or s.data[outcome].notna().sum() == 0:
                    continue
                fit = fit_design(s.data, h1_spec(outcome), se="iid")
                rows.append(
                    {"model": s.model_name, "outcome": outcome, **_coef_row(fit, SCORE_COL)}
                )
        if rows:
            report.tables["h1_validation"] = pd.DataFrame(rows)

    # H2: per-model cross-sections
    def do_h2_per_model() -> None:
        rows = []
        for s in sections:
            for h in horizons:
                if ret_col(h) not in s.data.columns:
                    continue
                try:
                    fit = fit_design(s.data, h2_spec(h), se="iid")
                except EmptyDesign:
                    continue
                rows.append(
                    {
                        "model": s.model_name,
                        "analysis_date": s.analysis_date.isoformat(),
                        "horizon_months": h,
                        **_coef_row(fit, SCORE_COL),
                    }
                )
        report.tables["h2_per_model"] = pd.DataFrame(rows)

    # H2: pooled panel, model FE, model-clustered errors; sector FE variant
    def do_h2_pooled() -> None:
        rows = []
        for h in horizons:
            spec = DesignSpec(
                response=ret_col(h),
                predictor=SCORE_COL,
                controls=H2_CONTROLS,
                fixed_effects=("model_name",),
            )
            fit = fit_design(pooled, spec, se="cluster", cluster_col="model_name")
            rows.append({"horizon_months": h, "fixed_effects": "model", **_coef_row(fit, SCORE_COL)})
        if "sector" in pooled.columns:
            spec = DesignSpec(
                response=ret_col(horizons[0]),
                predictor=SCORE_COL,
                controls=H2_CONTROLS,
                fixed_effects=("model_name", "sector"),
            )
            fit = fit_design(pooled, spec, se="cluster", cluster_col="model_name")
            rows.append(
                {
                    "horizon_months": horizons[0],
                    "fixed_effects": "model+sector",
                    **_coef_row(fit, SCORE_COL),
                }
            )
        report.tables["h2_pooled"] = pd.DataFrame(rows)

    # H2: pooled panel with time-grouped kernel errors (cutoff groups)
    def do_h2_dk() -> None:
        rows = []
        for h in horizons:
            spec = DesignSpec(
                response=ret_col(h),
                predictor=SCORE_COL,
                controls=H2_CONTROLS,
                fixed_effects=("model_name",),
            )
            fit = fit_design(pooled, spec, se="driscoll_kraay", time_col="analysis_date", lag=nw_lag)
            rows.append({"horizon_months": h, **_coef_row(fit, SCORE_COL)})
        report.tables["h2_driscoll_kraay"] = pd.DataFrame(rows)

    # H2: cross-section averaging (all models; one model per cutoff)
    def do_h2_fm() -> None:
        per_model = report.tables.get("h2_per_model")
        if per_model is None or per_model.empty:
            raise InsufficientSections("per-model table is empty")
        reduced = _one_per_cutoff(sections, model_priority)
        variants = [
            ("all_models", per_model),
            (
                "one_per_cutoff",
                per_model[per_model["model"].isin([s.model_name for s in reduced])],
            ),
        ]
        rows = []
        for variant, table in variants:
            for h in horizons:
                coeffs = table[table["horizon_months"] == h].sort_values("analysis_date")["coef"]
                if len(coeffs) < 2:
                    continue
                fm = fama_macbeth(coeffs.to_numpy(), nw_lag=nw_lag)
                boot = bootstrap_mean(coeffs.to_numpy(), n_resamples=n_bootstrap, seed=seed)
                rows.append(
                    {
                        "variant": variant,
                        "horizon_months": h,
                        "mean_coef": fm.mean,
                        "se_iid": fm.se_iid,
                        "se_iid_ddof0": fm.se_iid_ddof0,
                        "se_nw": fm.se_nw,
                        "t_iid": fm.t_iid,
                        "t_nw": fm.t_nw,
                        "ci_low": boot.ci_low,
                        "ci_high": boot.ci_high,
                        "p_boot": boot.p_value,
                        "n_sections": fm.n_sections,
                        "degenerate": fm.degenerate,
                    }
                )
        report.tables["h2_fama_macbeth"] = pd.DataFrame(rows)

    # H2: decomposition (score vs cheapness composite) with a Wald test
    def do_h2_decomposition() -> None:
        frame = primary.data.copy()
        legs = [c for c in CHEAPNESS_COLS if c in frame.columns]
        frame["cheap_composite"] = frame[legs].mean(axis=1)
        frame.loc[frame[legs].notna().sum(axis=1) == 0, "cheap_composite"] = np.nan
        frame["mismatch_composite"] = frame[SCORE_COL] + frame["cheap_composite"]
        response = ret_col(horizons[0])
        common = frame.dropna(
            subset=[response, SCORE_COL, "cheap_composite", *FACTOR_CONTROLS]
        )
        rows = []
        specs = {
            "cheapness_only": DesignSpec(response, "cheap_composite", FACTOR_CONTROLS),
            "score_only": DesignSpec(response, SCORE_COL, FACTOR_CONTROLS),
            "mismatch": DesignSpec(response, "mismatch_composite", FACTOR_CONTROLS),
            "unrestricted": DesignSpec(
                response, SCORE_COL, FACTOR_CONTROLS + ("cheap_composite",)
            ),
        }
        unrestricted = None
        for name, spec in specs.items():
            fit = fit_design(common, spec, se="iid")
            rows.append({"specification": name, "predictor": spec.predictor, **_coef_row(fit, spec.predictor)})
            if name == "unrestricted":
                unrestricted = fit
        assert unrestricted is not None
        R = np.zeros((1, unrestricted.k))
        R[0, unrestricted.params.index.get_loc(SCORE_COL)] = 1.0
        R[0, unrestricted.params.index.get_loc("cheap_composite")] = -1.0
        wald = wald_restriction(unrestricted, R, np.zeros(1))
        report.tables["h2_decomposition"] = pd.DataFrame(rows)
        report.metadata["equal_weight_wald"] = {
            "f_stat": wald.f_stat,
            "p_value": wald.p_value,
            "rank": wald.rank,
        }

    # H2 robustness: individual and composite mismatch legs
    def do_h2_mismatch() -> None:
        frame = primary.data.copy()
        response = ret_col(horizons[0])
        rows = []
        legs = [c for c in CHEAPNESS_COLS if c in frame.columns]
        for leg in legs + ["composite"]:
            if leg == "composite":
                comp = frame[legs].mean(axis=1)
                comp[frame[legs].notna().sum(axis=1) == 0] = np.nan
                frame["mismatch"] = frame[SCORE_COL] + comp
            else:
                frame["mismatch"] = frame[SCORE_COL] + frame[leg]
            try:
                fit = fit_design(frame, DesignSpec(response, "mismatch", FACTOR_CONTROLS), se="iid")
            except EmptyDesign:
                continue
            rows.append({"leg": leg, **_coef_row(fit, "mismatch")})
        report.tables["h2_mismatch_legs"] = pd.DataFrame(rows)

    # H3: size terciles
    def do_h3_terciles() -> None:
        frame = primary.data
        if "log_mcap" not in frame.columns:
            return
        spec = h2_spec(horizons[0])
        usable = frame.dropna(subset=list(spec.required_columns()) + ["log_mcap"])
        # stable sort on a firm_id-sorted frame: ties break by firm_id
        order = usable.sort_index(kind="mergesort").sort_values("log_mcap", kind="mergesort")
        n = len(order)
        base, rem = divmod(n, 3)
        sizes = [base + (1 if i < rem else 0) for i in range(3)]
        rows = []
        start = 0
        for name, size in zip(("small", "mid", "large"), sizes):
            part = order.iloc[start : start + size]
            start += size
            fit = fit_design(part, spec, se="iid")
            rows.append({"tercile": name, **_coef_row(fit, SCORE_COL)})
        report.tables["h3_size_terciles"] = pd.DataFrame(rows)

    # H3: information-environment interactions, single-model and pooled
    def do_h3_interactions() -> None:
        rows = []
        for proxy in PROXY_COLS:
            if proxy not in primary.data.columns:
                continue
            spec = DesignSpec(
                response=ret_col(horizons[0]),
                predictor=SCORE_COL,
                controls=H2_CONTROLS + (proxy,),
                interactions=(proxy,),
            )
            coef = interaction_col(SCORE_COL, proxy)
            try:
                single = fit_design(primary.data, spec, se="iid")
                rows.append({"proxy": proxy, "sample": "single_model", **_coef_row(single, coef)})
            except (EmptyDesign, RankDeficient):
                pass
            pooled_spec = DesignSpec(
                response=spec.response,
                predictor=SCORE_COL,
                controls=H2_CONTROLS + (proxy,),
                interactions=(proxy,),
                fixed_effects=("model_name",),
            )
            try:
                pool = fit_design(pooled, pooled_spec, se="cluster", cluster_col="model_name")
                rows.append({"proxy": proxy, "sample": "pooled", **_coef_row(pool, coef)})
            except (EmptyDesign, RankDeficient):
                pass
        report.tables["h3_interactions"] = pd.DataFrame(rows)

    # H4: per-model coefficients and the horizon gradient
    def do_h4() -> None:
        per_model = report.tables.get("h2_per_model")
        if per_model is None or per_model.empty:
            return
        h1m = per_model[per_model["horizon_months"] == horizons[0]]
        report.tables["h4_per_model"] = h1m.sort_values(
            ["analysis_date", "model"], kind="mergesort"
        ).reset_index(drop=True)
        rows = []
        for sample, table in (
            ("single_model", per_model[per_model["model"] == primary.model_name]),
            ("pooled", report.tables.get("h2_pooled")),
        ):
            if table is None or table.empty:
                continue
            if "fixed_effects" in table.columns:
                sub = table[table["fixed_effects"] == "model"]
            else:
                sub = table
            gammas = sub.sort_values("horizon_months")["coef"].to_numpy()
            hs = sub.sort_values("horizon_months")["horizon_months"].to_numpy(dtype=float)
            if len(hs) < 3:
                continue
            res = spearman(hs, gammas)
            exact = spearman_exact_p(hs, gammas, res.rho) if len(hs) <= 8 else math.nan
            rows.append(
                {
                    "sample": sample,
                    "n_horizons": len(hs),
                    "spearman_rho": res.rho,
                    "p_exact": exact,
                    "p_t_approx": spearman_t_p(res.rho, len(hs)),
                }
            )
        report.tables["h4_horizon_spearman"] = pd.DataFrame(rows)

    guarded("h1_validation", do_h1)
    guarded("h2_per_model", do_h2_per_model)
    guarded("h2_pooled", do_h2_pooled)
    guarded("h2_driscoll_kraay", do_h2_dk)
    guarded("h2_fama_macbeth", do_h2_fm)
    guarded("h2_decomposition", do_h2_decomposition)
    guarded("h2_mismatch_legs", do_h2_mismatch)
    guarded("h3_size_terciles", do_h3_terciles)
    guarded("h3_interactions", do_h3_interactions)
    guarded("h4", do_h4)
    return report


__all__ = [
    "BootstrapResult",
    "CHEAPNESS_COLS",
    "CrossSection",
    "DegenerateTimeDimension",
    "Design",
    "DesignSpec",
    "EconometricsError",
    "EmptyDesign",
    "FACTOR_CONTROLS",
    "FMResult",
    "H2_CONTROLS",
    "HORIZONS",
    "HypothesisReport",
    "InsufficientSections",
    "PROXY_COLS",
    "RankDeficient",
    "RegressionFit",
    "SCORE_COL",
    "ShapeError",
    "SingularRestriction",
    "SpearmanResult",
    "WaldResult",
    "bootstrap_mean",
    "build_design",
    "driscoll_kraay_cov",
    "fama_macbeth",
    "fit_design",
    "h1_spec",
    "h2_spec",
    "interaction_col",
    "ols_fit",
    "ret_col",
    "run_hypothesis_suite",
    "sample_autocovariance",
    "spearman",
    "spearman_exact_p",
    "spearman_t_p",
    "stack_sections",
    "wald_restriction",
]
