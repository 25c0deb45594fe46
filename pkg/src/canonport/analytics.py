"""Out-of-sample performance statistics, weight statistics and return
attribution (static/dynamic split and long/short legs)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivisionDegenerate, RankDeficientRegressors, ShapeMismatch, ZeroVariance

FACTOR_COLUMNS = ("Mkt-RF", "SMB", "HML", "RMW", "CMA", "UNI")


@dataclass
class PerformanceReport:
    """Annualized summary of a return series; percentages where noted.

    The regression block (alpha through ir_t) is against a six-factor
    benchmark whose last column is the univariate factor; it is None when
    no factor panel was supplied.
    """

    mean_ann: float  # %
    sd_ann: float  # %
    sharpe_ann: float
    sharpe_t: float
    alpha_ann: float | None = None  # %
    beta_uni: float | None = None
    idio_vol_ann: float | None = None  # %
    ir_ann: float | None = None
    ir_t: float | None = None
    periods_per_year: float = 12.0
    n_periods: int = 0


@dataclass
class WeightStats:
    """Per-date weight statistics averaged over rebalance dates."""

    turnover: float
    prop_leverage: float
    sum_neg: float
    min_w: float
    max_w: float
    sd_w: float
    n_dates: int


@dataclass
class LegDecomposition:
    """Long/short attribution with a common per-date leverage scale.

    Both legs are scaled by l_t = (gross long + gross short) / 2, so
    l_t * (long_t - short_t) equals the portfolio return exactly for any
    weight vector; with a balanced book each leg's weights sum to one.
    Dates lacking one of the legs are missing (NaN) and excluded from the
    means.
    """

    long_returns: np.ndarray
    short_returns: np.ndarray
    leverage: np.ndarray
    long_mean: float
    short_mean: float
    leverage_mean: float


def lo_tstat(sharpe_per_period: float, n_periods: int) -> float:
    """t-statistic of a per-period Sharpe ratio under iid returns.

    t = SR / sqrt((1 + SR^2 / 2) / T), the asymptotic standard error of
    the estimated Sharpe ratio.
    """
    if n_periods < 2:
        raise ValueError("need at least 2 periods")
    sr = float(sharpe_per_period)
    return sr / np.sqrt((1.0 + 0.5 * sr**2) / n_periods)


def performance_report(
    portfolio_returns: np.ndarray,
    factor_panel: np.ndarray | None = None,
    periods_per_year: float = 12.0,
) -> PerformanceReport:
    """Annualized mean/volatility/Sharpe plus a six-factor regression.

    Means and alpha annualize by the period count, volatilities by its
    square root. The regression uses an intercept and the six factor
    columns; alpha is the intercept, beta_uni the loading on the last
    column, the information ratio is alpha over residual volatility, and
    both t-statistics use the iid Sharpe standard error.
    """
    r = np.asarray(portfolio_returns, dtype=float)
    if r.ndim != 1:
        raise ShapeMismatch("portfolio returns must be 1-D")
    t = r.shape[0]
    sd_p = float(r.std(ddof=1)) if t > 1 else 0.0
    if sd_p == 0.0:
        raise ZeroVariance("return series has zero variance")
    mean_p = float(r.mean())
    sr_p = mean_p / sd_p
    report = PerformanceReport(
        mean_ann=mean_p * periods_per_year * 100.0,
        sd_ann=sd_p * np.sqrt(periods_per_year) * 100.0,
        sharpe_ann=sr_p * np.sqrt(periods_per_year),
        sharpe_t=lo_tstat(sr_p, t),
        periods_per_year=periods_per_year,
        n_periods=t,
    )
    if factor_panel is None:
        return report
    f = np.asarray(factor_panel, dtype=float)
    if f.ndim != 2 or f.shape[0] != t or f.shape[1] != 6:
        raise ShapeMismatch(f"factor panel must be {t} x 6, got {f.shape}")
    if t < 8:
        raise ShapeMismatch("need at least 8 periods for a 6-factor regression")
    design = np.column_stack([np.ones(t), f])
    beta, _, rank, _ = np.linalg.lstsq(design, r, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientRegressors(f"design rank {rank} < {design.shape[1]}")
    resid = r - design @ beta
    idio_p = float(np.sqrt(resid @ resid / (t - design.shape[1])))
    alpha_p = float(beta[0])
    report.alpha_ann = alpha_p * periods_per_year * 100.0
    report.beta_uni = float(beta[-1])
    report.idio_vol_ann = idio_p * np.sqrt(periods_per_year) * 100.0
    if idio_p > 0.0:
        ir_p = alpha_p / idio_p
        report.ir_ann = ir_p * np.sqrt(periods_per_year)
        report.ir_t = lo_tstat(ir_p, t)
    else:
        report.ir_ann = 0.0
        report.ir_t = 0.0
    return report


def weight_stats(weights: np.ndarray) -> WeightStats:
    """Turnover and per-date distribution statistics of the weights.

    Turnover at t is sum_i |w_{t,i} - w_{t-1,i}|, averaged over t >= 2;
    proportional leverage is the fraction of strictly negative weights
    among non-zero positions. Flat dates are skipped in the leverage
    average.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ShapeMismatch("need a 2-D weight matrix with at least 2 dates")
    turnover = float(np.abs(np.diff(w, axis=0)).sum(axis=1).mean())
    nonzero = w != 0.0
    counts = nonzero.sum(axis=1)
    live = counts > 0
    prop = float(
        ((w < 0.0).sum(axis=1)[live] / counts[live]).mean()
    ) if live.any() else 0.0
    return WeightStats(
        turnover=turnover,
        prop_leverage=prop,
        sum_neg=float(np.where(w < 0.0, w, 0.0).sum(axis=1).mean()),
        min_w=float(w.min(axis=1).mean()),
        max_w=float(w.max(axis=1).mean()),
        sd_w=float(w.std(axis=1, ddof=1).mean()),
        n_dates=int(w.shape[0]),
    )


def static_dynamic_decomp(
    weights: np.ndarray, asset_returns: np.ndarray
) -> tuple[float, float, float]:
    """Split mean portfolio return into static and dynamic components.

    static = mean(w)' mean(r); dynamic = (1/T) sum_t (w_t - w_bar)'(r_t - r_bar),
    a sample (not bias-corrected) covariance, so static + dynamic equals
    the mean realized return exactly. Returns (static, dynamic, dynamic
    share of the total).
    """
    w = np.asarray(weights, dtype=float)
    r = np.asarray(asset_returns, dtype=float)
    if w.shape != r.shape or w.ndim != 2:
        raise ShapeMismatch(f"weights {w.shape} and returns {r.shape} must align")
    r = np.where(np.isnan(r) & (w == 0.0), 0.0, r)  # ineligible assets carry no bet
    w_bar = w.mean(axis=0)
    r_bar = r.mean(axis=0)
    static = float(w_bar @ r_bar)
    dynamic = float(((w - w_bar) * (r - r_bar)).sum(axis=1).mean())
    total = static + dynamic
    if total == 0.0:
        raise DivisionDegenerate("total mean return is zero")
    return static, dynamic, dynamic / total


def long_short_legs(weights: np.ndarray, asset_returns: np.ndarray) -> LegDecomposition:
    """Per-date long and short leg returns under a common leverage scale."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(asset_returns, dtype=float)
    if w.shape != r.shape or w.ndim != 2:
        raise ShapeMismatch(f"weights {w.shape} and returns {r.shape} must align")
    r = np.where(np.isnan(r) & (w == 0.0), 0.0, r)
    pos = np.where(w > 0.0, w, 0.0)
    neg = np.where(w < 0.0, -w, 0.0)
    gross_pos = pos.sum(axis=1)
    gross_neg = neg.sum(axis=1)
    lev = 0.5 * (gross_pos + gross_neg)
    both = (gross_pos > 0.0) & (gross_neg > 0.0)
    long_r = np.full(w.shape[0], np.nan)
    short_r = np.full(w.shape[0], np.nan)
    long_r[both] = (pos[both] * r[both]).sum(axis=1) / lev[both]
    short_r[both] = (neg[both] * r[both]).sum(axis=1) / lev[both]
    lev_out = np.where(both, lev, np.nan)
    return LegDecomposition(
        long_returns=long_r,
        short_returns=short_r,
        leverage=lev_out,
        long_mean=float(np.nanmean(long_r)) if both.any() else float("nan"),
        short_mean=float(np.nanmean(short_r)) if both.any() else float("nan"),
        leverage_mean=float(np.nanmean(lev_out)) if both.any() else float("nan"),
    )
