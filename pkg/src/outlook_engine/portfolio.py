"""Portfolio construction and analytics: quintile sorts, score
residualization, capped long-only mean-variance optimization against a
factor risk model, and backtest bookkeeping.

The optimizer maximizes mu'w - lambda * w'Sigma w subject to a full-investment
budget, long-only bounds and a per-name cap. Sigma stays in factor form
(B F B' + D); matrix-vector products and the reduced KKT solves use the
low-rank structure, never a dense n x n covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import lu_factor, lu_solve

from .econometrics import RankDeficient, ols_fit


class PortfolioError(Exception):
    pass


class TooFewFirms(PortfolioError):
    pass


class AsymmetricInput(PortfolioError):
    pass


class Infeasible(PortfolioError):
    pass


class RiskModelInvalid(PortfolioError):
    pass


class SharpeUndefined(PortfolioError):
    pass


class OptimizationFailed(PortfolioError):
    pass


# ---------------------------------------------------------------------------
# Sorts and residualization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuintileSortResult:
    means: tuple[float, ...]
    counts: tuple[int, ...]
    spread: float
    t_stat: float


def quintile_sort(scores: pd.Series, returns: pd.Series) -> QuintileSortResult:
    """Mean return per score quintile plus the top-minus-bottom spread.

    Firms are ranked ascending by score (ties broken by firm_id); bins are
    near-equal with any remainder going to the lower quintiles. The spread
    t-statistic is the two-sample unequal-variance form.
    """
    scores, returns = scores.align(returns, join="inner")
    mask = scores.notna() & returns.notna()
    scores, returns = scores[mask], returns[mask]
    n = len(scores)
    if n < 5:
        raise TooFewFirms(f"need >= 5 paired observations, got {n}")
    order = pd.DataFrame({"score": scores, "ret": returns})
    order = order.sort_index(kind="mergesort").sort_values("score", kind="mergesort")
    base, rem = divmod(n, 5)
    sizes = [base + (1 if i < rem else 0) for i in range(5)]
    means, counts, groups = [], [], []
    start = 0
    for size in sizes:
        part = order["ret"].iloc[start : start + size]
        start += size
        groups.append(part)
        means.append(float(part.mean()))
        counts.append(size)
    spread = means[4] - means[0]
    v1 = float(groups[0].var(ddof=1)) if counts[0] > 1 else 0.0
    v5 = float(groups[4].var(ddof=1)) if counts[4] > 1 else 0.0
    denom = math.sqrt(v1 / counts[0] + v5 / counts[4])
    t = spread / denom if denom > 0 else math.nan
    return QuintileSortResult(tuple(means), tuple(counts), spread, t)


def residualize(score: pd.Series, controls: pd.DataFrame) -> pd.Series:
    """Residual of the score regressed on an intercept plus the controls.

    Rows with any missing value come back NaN; the rest carry the exact OLS
    residual.
    """
    score, controls = score.align(controls, join="inner", axis=0)
    mask = score.notna() & controls.notna().all(axis=1)
    y = score[mask].to_numpy(dtype=float)
    X = np.column_stack([np.ones(mask.sum()), controls[mask].to_numpy(dtype=float)])
    cols = ["const"] + list(controls.columns)
    fit = ols_fit(y, X, cols, se="iid")
    out = pd.Series(np.nan, index=score.index, dtype=float)
    out[mask] = fit.residuals
    return out


# ---------------------------------------------------------------------------
# Risk model
# ---------------------------------------------------------------------------


@dataclass
class FactorRiskModel:
    """Factor exposures, factor covariance and idiosyncratic variances.

    Sigma = B F B' + diag(d) in monthly variance units. F must be symmetric
    PSD and d non-negative; the optimizer additionally requires d > 0.
    """

    exposures: pd.DataFrame
    factor_cov: pd.DataFrame
    idio_var: pd.Series

    def __post_init__(self) -> None:
        F = self.factor_cov.to_numpy(dtype=float)
        if F.shape[0] != F.shape[1]:
            raise RiskModelInvalid("factor covariance must be square")
        scale = max(1.0, float(np.abs(F).max()))
        if np.abs(F - F.T).max() > 1e-10 * scale:
            raise RiskModelInvalid("factor covariance must be symmetric")
        eig = np.linalg.eigvalsh(F)
        if eig.min() < -1e-10 * max(1.0, eig.max()):
            raise RiskModelInvalid("factor covariance must be PSD")
        if (self.idio_var < 0).any():
            raise RiskModelInvalid("idiosyncratic variances must be >= 0")
        if list(self.exposures.columns) != list(self.factor_cov.index):
            self.exposures = self.exposures.reindex(columns=self.factor_cov.index, fill_value=0.0)

    @property
    def n_firms(self) -> int:
        return len(self.exposures)

    def subset(self, firm_ids: Sequence[str]) -> "FactorRiskModel":
        ids = pd.Index(firm_ids)
        missing = ids.difference(self.exposures.index)
        if len(missing):
            raise KeyError(f"firms not in risk model: {list(missing)[:5]}")
        return FactorRiskModel(
            exposures=self.exposures.loc[ids],
            factor_cov=self.factor_cov,
            idio_var=self.idio_var.loc[ids],
        )


def load_risk_model_csvs(
    exposures_csv: str | Path, factor_cov_csv: str | Path, idio_csv: str | Path
) -> FactorRiskModel:
    """Read the three-file risk model: long-format exposures
    (firm_id,factor,loading), covariance entries (factor_i,factor_j,cov)
    and idiosyncratic variances (firm_id,var)."""
    expo = pd.read_csv(exposures_csv)
    B = expo.pivot_table(index="firm_id", columns="factor", values="loading", aggfunc="first")
    B = B.sort_index().sort_index(axis=1).fillna(0.0)
    covs = pd.read_csv(factor_cov_csv)
    factors = sorted(set(covs["factor_i"]) | set(covs["factor_j"]))
    F = pd.DataFrame(np.nan, index=factors, columns=factors)
    for _, row in covs.iterrows():
        F.loc[row["factor_i"], row["factor_j"]] = row["cov"]
        F.loc[row["factor_j"], row["factor_i"]] = row["cov"]
    F = F.fillna(0.0)
    idio = pd.read_csv(idio_csv).set_index("firm_id")["var"].sort_index()
    B = B.reindex(columns=factors, fill_value=0.0)
    common = B.index.intersection(idio.index)
    return FactorRiskModel(
        exposures=B.loc[common], factor_cov=F, idio_var=idio.loc[common]
    )


def shrink_factor_cov(F: pd.DataFrame | np.ndarray, alpha: float) -> pd.DataFrame | np.ndarray:
    """Blend toward the diagonal: (1-alpha) F + alpha diag(F)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    arr = F.to_numpy(dtype=float) if isinstance(F, pd.DataFrame) else np.asarray(F, dtype=float)
    scale = max(1.0, float(np.abs(arr).max()))
    if np.abs(arr - arr.T).max() > 1e-10 * scale:
        raise AsymmetricInput("factor covariance must be symmetric")
    shrunk = (1.0 - alpha) * arr + alpha * np.diag(np.diag(arr))
    if isinstance(F, pd.DataFrame):
        return pd.DataFrame(shrunk, index=F.index, columns=F.columns)
    return shrunk


# ---------------------------------------------------------------------------
# Mean-variance optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    risk_aversion: float = 1.0
    shrinkage: float = 0.10
    z_bound: float = 2.5
    position_cap: float = 0.015
    budget: float = 1.0
    long_only: bool = True
    kkt_tol: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in [0, 1]")
        if not 0.0 < self.position_cap <= 1.0:
            raise ValueError("position cap must be in (0, 1]")
        if self.risk_aversion <= 0:
            raise ValueError("risk aversion must be > 0")
        if not self.long_only:
            raise ValueError("only the long-only configuration is supported")


def expected_returns(score_z: pd.Series, gamma_hat: float, z_bound: float = 2.5) -> pd.Series:
    """Map outlook z-scores to expected returns, clipping at +/- z_bound."""
    return gamma_hat * score_z.clip(lower=-z_bound, upper=z_bound)


def _project_capped_simplex(v: np.ndarray, budget: float, cap: float) -> np.ndarray:
    """Euclidean projection onto {w: sum w = budget, 0 <= w <= cap}."""
    lo = float(v.min()) - cap - abs(budget) - 1.0
    hi = float(v.max()) + 1.0
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        total = np.clip(v - theta, 0.0, cap).sum()
        if total > budget:
            lo = theta
        else:
            hi = theta
        if hi - lo < 1e-16 * max(1.0, abs(hi), abs(lo)):
            break
    return np.clip(v - 0.5 * (lo + hi), 0.0, cap)


class _FactorQuadratic:
    """Callable pieces of q(w) = lam * w'(BFB' + D)w - mu'w in factor form."""

    def __init__(self, B: np.ndarray, F: np.ndarray, d: np.ndarray, lam: float, mu: np.ndarray):
        self.B = B
        self.F = F
        self.d = d
        self.lam = lam
        self.mu = mu

    def sigma_matvec(self, w: np.ndarray) -> np.ndarray:
        return self.B @ (self.F @ (self.B.T @ w)) + self.d * w

    def grad(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * self.lam * self.sigma_matvec(w) - self.mu

    def lipschitz(self) -> float:
        n = len(self.d)
        v = np.full(n, 1.0 / math.sqrt(n))
        lam_max = 0.0
        for _ in range(60):
            u = self.sigma_matvec(v)
            norm = np.linalg.norm(u)
            if norm == 0:
                break
            lam_max = norm
            v = u / norm
        return 2.0 * self.lam * max(lam_max, float(self.d.max()), 1e-300)


def kkt_residual(
    w: np.ndarray,
    mu: np.ndarray,
    sigma_matvec: Callable[[np.ndarray], np.ndarray],
    risk_aversion: float,
    budget: float,
    cap: float,
    *,
    boundary_tol: float = 1e-12,
) -> float:
    """Max violation of the first-order conditions at w.

    With g = mu - 2*lam*Sigma w, interior names must share a common
    multiplier nu, capped names need g >= nu, zeroed names g <= nu; budget
    and box feasibility are included in the residual.
    """
    w = np.asarray(w, dtype=float)
    g = mu - 2.0 * risk_aversion * sigma_matvec(w)
    interior = (w > boundary_tol) & (w < cap - boundary_tol)
    at_zero = w <= boundary_tol
    at_cap = w >= cap - boundary_tol
    if interior.any():
        nu = float(g[interior].mean())
    elif at_cap.any():
        nu = float(g[at_cap].min())
    else:
        nu = float(g[at_zero].max())
    res = abs(float(np.sum(w)) - budget)
    res = max(res, float(-w.min()) if w.min() < 0 else 0.0)
    res = max(res, float(w.max() - cap) if w.max() > cap else 0.0)
    if interior.any():
        res = max(res, float(np.abs(g[interior] - nu).max()))
    if at_zero.any():
        res = max(res, max(0.0, float((g[at_zero] - nu).max())))
    if at_cap.any():
        res = max(res, max(0.0, float((nu - g[at_cap]).max())))
    return res


def _polish_active_set(
    q: _FactorQuadratic, w: np.ndarray, budget: float, cap: float, max_rounds: int = 500
) -> np.ndarray:
    """Refine a near-solution to an exact KKT point by active-set iteration.

    Names are classified free/zero/capped from the warm start; the reduced
    equality-constrained problem is solved exactly through the Woodbury
    identity, then primal and dual violators are reclassified until clean.
    """
    n = len(w)
    d = q.d
    if d.min() <= 0:
        raise RiskModelInvalid("optimizer requires strictly positive idiosyncratic variance")
    k = q.F.shape[0]
    eye = np.eye(k)
    grace = 1e-7 * cap
    zero = w <= grace
    capped = w >= cap - grace
    free = ~(zero | capped)
    seen: set[tuple] = set()
    single_move = False

    for _ in range(max_rounds):
        sig = (tuple(np.flatnonzero(zero)), tuple(np.flatnonzero(capped)))
        if sig in seen:
            single_move = True
        seen.add(sig)

        b_free = budget - cap * capped.sum()
        if not free.any():
            w_full = np.where(capped, cap, 0.0)
            if abs(w_full.sum() - budget) <= 1e-12 * max(1.0, abs(budget)):
                return w_full
            # budget cannot close without a free name: release the best bound name
            g = q.mu - 2.0 * q.lam * q.sigma_matvec(w_full)
            if b_free > 0:
                candidates = np.flatnonzero(zero)
                pick = candidates[np.argmax(g[candidates])]
            else:
                candidates = np.flatnonzero(capped)
                pick = candidates[np.argmin(g[candidates])]
            zero[pick] = capped[pick] = False
            free[pick] = True
            continue

        Bf = q.B[free]
        df = d[free]
        dinv = 1.0 / df
        M = eye + (q.F @ (Bf.T @ (Bf * dinv[:, None])))
        lu = lu_factor(M)

        def solve_reduced(x: np.ndarray) -> np.ndarray:
            inner = lu_solve(lu, q.F @ (Bf.T @ (dinv * x)))
            return (dinv * x - (Bf * dinv[:, None]) @ inner) / (2.0 * q.lam)

        sigma_fc = Bf @ (q.F @ (q.B[capped].T @ np.full(capped.sum(), cap)))
        c_free = q.mu[free] - 2.0 * q.lam * sigma_fc
        u = solve_reduced(c_free)
        ones = np.ones(free.sum())
        v = solve_reduced(ones)
        nu = (float(ones @ u) - b_free) / float(ones @ v)
        wf = u - nu * v

        w_full = np.where(capped, cap, 0.0)
        w_full[free] = wf

        below = free.copy()
        below[free] = wf < 0.0
        above = free.copy()
        above[free] = wf > cap
        if below.any() or above.any():
            if single_move:
                # move only the worst primal violator
                worst_b = np.flatnonzero(below)
                worst_a = np.flatnonzero(above)
                if worst_b.size and (
                    not worst_a.size
                    or abs(w_full[worst_b].min()) >= (w_full[worst_a].max() - cap)
                ):
                    pick = worst_b[np.argmin(w_full[worst_b])]
                    free[pick] = False
                    zero[pick] = True
                else:
                    pick = worst_a[np.argmax(w_full[worst_a])]
                    free[pick] = False
                    capped[pick] = True
            else:
                free[below | above] = False
                zero[below] = True
                capped[above] = True
            continue

        g = q.mu - 2.0 * q.lam * q.sigma_matvec(w_full)
        tol_dual = 1e-10 * max(1.0, float(np.abs(g).max()))
        bad_zero = zero & (g > nu + tol_dual)
        bad_cap = capped & (g < nu - tol_dual)
        if not bad_zero.any() and not bad_cap.any():
            return w_full
        if single_move:
            idx_z = np.flatnonzero(bad_zero)
            idx_c = np.flatnonzero(bad_cap)
            if idx_z.size and (not idx_c.size or g[idx_z].max() - nu >= nu - g[idx_c].min()):
                pick = idx_z[np.argmax(g[idx_z])]
            else:
                pick = idx_c[np.argmin(g[idx_c])]
            zero[pick] = capped[pick] = False
            free[pick] = True
        else:
            zero[bad_zero] = False
            capped[bad_cap] = False
            free[bad_zero | bad_cap] = True

    raise OptimizationFailed(f"active-set polish did not converge in {max_rounds} rounds")


def mv_optimize(
    mu: pd.Series | np.ndarray,
    model: FactorRiskModel,
    cfg: OptimizerConfig,
) -> pd.Series:
    """Long-only capped mean-variance weights in factor form.

    Maximizes mu'w - risk_aversion * w' Sigma w with Sigma = B Fs B' + D
    (Fs = diagonally shrunk factor covariance), subject to sum(w) = budget
    and 0 <= w <= cap. A projected-gradient pass warm-starts an active-set
    polish that lands on a KKT point; the solve fails loudly if the residual
    exceeds cfg.kkt_tol.
    """
    if isinstance(mu, pd.Series):
        index = mu.index
        mu_vec = mu.to_numpy(dtype=float)
        model = model.subset(index)
    else:
        mu_vec = np.asarray(mu, dtype=float)
        index = model.exposures.index
        if len(mu_vec) != len(index):
            raise ValueError("mu length does not match risk model")
    if not np.isfinite(mu_vec).all():
        raise ValueError("mu must be finite")
    n = len(mu_vec)
    if n == 0:
        raise TooFewFirms("empty universe")
    if cfg.position_cap * n < cfg.budget - 1e-12:
        raise Infeasible(
            f"cap {cfg.position_cap} x {n} names cannot reach budget {cfg.budget}"
        )

    F_shrunk = shrink_factor_cov(model.factor_cov.to_numpy(dtype=float), cfg.shrinkage)
    eig = np.linalg.eigvalsh(F_shrunk)
    if eig.min() < -1e-10 * max(1.0, eig.max()):
        raise RiskModelInvalid("shrunk factor covariance is not PSD")
    d = model.idio_var.to_numpy(dtype=float)
    if d.min() <= 0:
        raise RiskModelInvalid("optimizer requires strictly positive idiosyncratic variance")
    B = model.exposures.to_numpy(dtype=float)

    q = _FactorQuadratic(B=B, F=F_shrunk, d=d, lam=cfg.risk_aversion, mu=mu_vec)

    w = np.full(n, cfg.budget / n)
    if cfg.position_cap * n == cfg.budget:
        return pd.Series(np.full(n, cfg.position_cap), index=index)

    step = 1.0 / (1.05 * q.lipschitz())
    z = w.copy()
    t_accel = 1.0
    for _ in range(2000):
        w_next = _project_capped_simplex(z - step * q.grad(z), cfg.budget, cfg.position_cap)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_accel * t_accel))
        z = w_next + ((t_accel - 1.0) / t_next) * (w_next - w)
        move = float(np.abs(w_next - w).max())
        w, t_accel = w_next, t_next
        if move < 1e-11 * max(1.0, cfg.position_cap):
            break

    w = _polish_active_set(q, w, cfg.budget, cfg.position_cap)
    residual = kkt_residual(
        w, mu_vec, q.sigma_matvec, cfg.risk_aversion, cfg.budget, cfg.position_cap
    )
    if residual > cfg.kkt_tol:
        raise OptimizationFailed(f"KKT residual {residual:.3e} exceeds {cfg.kkt_tol:.1e}")
    return pd.Series(w, index=index)


# ---------------------------------------------------------------------------
# Performance analytics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerfStats:
    ann_return: float
    ann_vol: float
    sharpe: float
    max_drawdown: float
    n_periods: int


def max_drawdown(returns: Sequence[float]) -> float:
    """Largest peak-to-trough decline of the cumulative value path (<= 0)."""
    r = np.asarray(list(returns), dtype=float)
    path = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    peaks = np.maximum.accumulate(path)
    return float((path / peaks - 1.0).min())


def perf_stats(returns: Sequence[float]) -> PerfStats:
    """Annualized return/vol/Sharpe (rf = 0, price-return convention) and
    max drawdown for a monthly return series."""
    r = np.asarray(list(returns), dtype=float)
    if len(r) < 2:
        raise ValueError("need >= 2 periods")
    ann_ret = float(r.mean() * 12.0)
    ann_vol = float(r.std(ddof=1) * math.sqrt(12.0))
    if ann_vol == 0.0:
        raise SharpeUndefined("zero volatility")
    return PerfStats(
        ann_return=ann_ret,
        ann_vol=ann_vol,
        sharpe=ann_ret / ann_vol,
        max_drawdown=max_drawdown(r),
        n_periods=len(r),
    )


def turnover(w_prev: pd.Series, w_next: pd.Series) -> float:
    """One-way turnover: half the L1 distance on the union universe."""
    a, b = w_prev.align(w_next, fill_value=0.0)
    return 0.5 * float((b - a).abs().sum())


# ---------------------------------------------------------------------------
# Backtest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestConfig:
    optimizer: OptimizerConfig = OptimizerConfig()
    signal_life_months: int = 12
    cost_roundtrip_bps: float = 20.0
    gamma_hat: float = 0.0074  # pooled one-month estimate; overridable


@dataclass
class PortfolioLedger:
    """Per-rebalance weights and returns plus derived statistics."""

    label: str
    rows: pd.DataFrame = field(default_factory=pd.DataFrame)
    weights: dict = field(default_factory=dict)

    @property
    def n_months(self) -> int:
        return len(self.rows)

    def stats(self, net: bool = False) -> PerfStats:
        col = "net_return" if net else "gross_return"
        return perf_stats(self.rows[col].to_numpy())

    def avg_turnover(self, exclude_formation: bool = True) -> float:
        t = self.rows["turnover"]
        if exclude_formation and len(t) > 1:
            t = t[~self.rows["formation"]]
        return float(t.mean()) if len(t) else 0.0

    def annual_cost_drag(self, exclude_formation: bool = True) -> float:
        c = self.rows["cost"]
        if exclude_formation and len(c) > 1:
            c = c[~self.rows["formation"]]
        return float(c.mean() * 12.0) if len(c) else 0.0

    def summary(self) -> dict:
        out = {"label": self.label, "months": self.n_months}
        for tag, net in (("gross", False), ("net", True)):
            try:
                s = self.stats(net=net)
                out[f"{tag}_ann_return"] = s.ann_return
                out[f"{tag}_ann_vol"] = s.ann_vol
                out[f"{tag}_sharpe"] = s.sharpe
                out[f"{tag}_max_drawdown"] = s.max_drawdown
            except (SharpeUndefined, ValueError):
                out[f"{tag}_ann_return"] = math.nan
                out[f"{tag}_ann_vol"] = math.nan
                out[f"{tag}_sharpe"] = math.nan
                out[f"{tag}_max_drawdown"] = math.nan
        out["avg_turnover"] = self.avg_turnover()
        out["annual_cost_drag"] = self.annual_cost_drag()
        return out


def active_signal_months(
    months: Sequence, signal_months: Sequence, signal_life: int
) -> dict:
    """Map each month to the cutoff signal it trades, if any.

    A signal activates the month after its cutoff month and is retired at
    expiry (signal_life rebalances) or when a newer signal activates,
    whichever comes first.
    """
    months = list(months)
    pos = {m: i for i, m in enumerate(months)}
    starts = sorted(m for m in signal_months if m in pos)
    active: dict = {}
    for s in starts:
        i = pos[s]
        for j in range(i + 1, min(i + 1 + signal_life, len(months))):
            active[months[j]] = s  # newer cutoffs overwrite older ones
    return active


def run_backtest(
    monthly_returns: pd.DataFrame,
    signals: Mapping,
    risk_model_for: Callable[[object], FactorRiskModel],
    cfg: BacktestConfig,
    *,
    label: str = "mv",
    benchmark: bool = True,
) -> dict[str, PortfolioLedger]:
    """Monthly-rebalanced book with a fixed alpha signal per cutoff.

    `monthly_returns` is months x firms; `signals` maps a cutoff month (a
    value of the month index) to that cutoff's outlook z-scores. The risk
    model refreshes every month through `risk_model_for`, while the alpha is
    frozen at the cutoff. Costs charge one-way turnover times the round-trip
    rate. Returns ledgers for the optimized book and, optionally, an
    equal-weight benchmark on the same universe.
    """
    months = list(monthly_returns.index)
    active = active_signal_months(months, list(signals.keys()), cfg.signal_life_months)
    ledgers = {label: PortfolioLedger(label=label)}
    if benchmark:
        ledgers["ew"] = PortfolioLedger(label="ew")
    prev: dict[str, pd.Series | None] = {name: None for name in ledgers}
    prev_month = None
    rows: dict[str, list[dict]] = {name: [] for name in ledgers}
    cost_rate = cfg.cost_roundtrip_bps / 1e4

    for m in months:
        if m not in active:
            prev = {name: None for name in ledgers}  # book unwinds at expiry
            prev_month = None
            continue
        scores = signals[active[m]].dropna()
        model = risk_model_for(m)
        rets = monthly_returns.loc[m]
        universe = scores.index.intersection(model.exposures.index).intersection(
            rets.dropna().index
        )
        universe = universe.sort_values()
        if len(universe) == 0:
            continue
        mu = expected_returns(scores.loc[universe], cfg.gamma_hat, cfg.optimizer.z_bound)
        books = {label: mv_optimize(mu, model.subset(universe), cfg.optimizer)}
        if benchmark:
            books["ew"] = pd.Series(1.0 / len(universe), index=universe)
        formation = prev_month is None
        for name, w in books.items():
            prior = prev[name] if prev[name] is not None else pd.Series(dtype=float)
            one_way = turnover(prior, w)
            gross = float((w * rets.loc[w.index]).sum())
            cost = one_way * cost_rate
            rows[name].append(
                {
                    "month": m,
                    "signal_month": active[m],
                    "gross_return": gross,
                    "net_return": gross - cost,
                    "turnover": one_way,
                    "cost": cost,
                    "n_positions": int((w > 1e-12).sum()),
                    "formation": formation,
                }
            )
            ledgers[name].weights[m] = w
            prev[name] = w
        prev_month = m

    for name, ledger in ledgers.items():
        ledger.rows = pd.DataFrame(rows[name])
    return ledgers


__all__ = [
    "AsymmetricInput",
    "BacktestConfig",
    "FactorRiskModel",
    "Infeasible",
    "OptimizationFailed",
    "OptimizerConfig",
    "PerfStats",
    "PortfolioError",
    "PortfolioLedger",
    "QuintileSortResult",
    "RiskModelInvalid",
    "SharpeUndefined",
    "TooFewFirms",
    "active_signal_months",
    "expected_returns",
    "kkt_residual",
    "load_risk_model_csvs",
    "max_drawdown",
    "mv_optimize",
    "perf_stats",
    "quintile_sort",
    "residualize",
    "run_backtest",
    "shrink_factor_cov",
    "turnover",
]
