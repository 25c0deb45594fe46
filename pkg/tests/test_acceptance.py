"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The empirical reproduction (criteria 9 and part of 10) needs the daily
portfolio files in the data cache; those checks skip with an explicit
reason when the files are unavailable and no network can fetch them.
"""
import functools

import numpy as np
import pytest

from canonport.analytics import lo_tstat, long_short_legs, static_dynamic_decomp
from canonport.backtest import BacktestConfig, run_backtest
from canonport.cca import adjusted_cross_cov, cca_decompose
from canonport.cli import DEFAULT_CACHE, periods_per_year
from canonport.data import DatasetId, load_panel
from canonport.errors import CanonportError, NetworkUnavailable
from canonport.moments import MomentEstimates
from canonport.montecarlo import (
    SyntheticMarketSpec,
    build_cross_cov,
    insample_bias_experiment,
    isserlis_variance_check,
    random_valid_moments,
    verify_prop4,
    wachter_bias_experiment,
)
from canonport.policy import cp_policy, cp_policy_from_moments, fully_invested, kronecker_oracle, normalize_gross

from conftest import synthetic_panel


def report(cid: str, detail: str):
    """Print the criterion verdict even when an assertion fails."""

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                extra = fn(*args, **kwargs)
            except Exception:
                print(f"ACCEPTANCE {cid}: FAIL - {detail}")
                raise
            suffix = f" [{extra}]" if isinstance(extra, str) else ""
            print(f"ACCEPTANCE {cid}: PASS - {detail}{suffix}")

        return wrapper

    return decorator


def objective_full(a, m, gamma):
    return float(
        np.trace(a @ m.sigma_rx)
        - 0.5
        * gamma
        * (
            np.trace(m.sigma_x @ a @ m.sigma_r @ a.T)
            + np.trace(m.sigma_rx @ a @ m.sigma_rx @ a)
        )
    )


@report("1", "exact-solution optimality and closed-form objective value")
def test_criterion_1_analytic_solution():
    rng = np.random.default_rng(101)
    for trial in range(20):
        n = int(rng.integers(2, 5))
        m = random_valid_moments(rng, n, n, 0.9)
        gamma = float(rng.uniform(0.5, 2.5))
        d = cca_decompose(m)
        a_star = cp_policy(d, gamma, "full").a
        value = objective_full(a_star, m, gamma)
        predicted = float(np.sum(d.s**2 / (1.0 + d.s**2))) / (2.0 * gamma)
        assert abs(value - predicted) < 1e-10
        for _ in range(100):
            delta = rng.standard_normal(a_star.shape)
            delta /= np.linalg.norm(delta)
            assert objective_full(a_star + 1e-3 * delta, m, gamma) < value


@report("2", "untruncated approx policy equals the Kronecker-system solution")
def test_criterion_2_kronecker_equivalence():
    rng = np.random.default_rng(102)
    combos = [(n, m) for n in (2, 3, 4) for m in (1, 2)]
    for trial in range(50):
        n, m_sig = combos[trial % len(combos)]
        mom = random_valid_moments(rng, n, n * m_sig, 0.85)
        direct = cp_policy_from_moments(mom).a
        oracle = kronecker_oracle(mom).a
        assert np.abs(direct - oracle).max() < 1e-10


@report("3", "decomposition reconstruction, grid oracle and role-swap symmetry")
def test_criterion_3_cca_correctness():
    rng = np.random.default_rng(103)
    for _ in range(10):
        m = random_valid_moments(rng, 4, 6, 0.9)
        d = cca_decompose(m)
        recon = (d.u * d.s) @ d.v.T
        assert np.abs(recon - adjusted_cross_cov(m)).max() < 1e-10

    theta = np.linspace(0.0, np.pi, 2500, endpoint=False)
    q = np.stack([np.cos(theta), np.sin(theta)])
    for _ in range(10):
        m = random_valid_moments(rng, 2, 2, 0.95)
        num = np.einsum("ig,ij,jh->gh", q, m.sigma_rx, q)
        dr = np.einsum("ig,ij,jg->g", q, m.sigma_r, q)
        dx = np.einsum("ig,ij,jg->g", q, m.sigma_x, q)
        grid_top = float((np.abs(num) / np.sqrt(np.outer(dr, dx))).max())
        assert abs(cca_decompose(m).s[0] - grid_top) < 1e-3

    for _ in range(10):
        m = random_valid_moments(rng, 5, 5, 0.9)
        swapped = MomentEstimates(
            sigma_r=m.sigma_x, sigma_x=m.sigma_r, sigma_rx=m.sigma_rx.T,
            mu_r=m.mu_x, mu_x=m.mu_r,
        )
        assert np.abs(cca_decompose(m).s - cca_decompose(swapped).s).max() < 1e-10


@report("4", "canonical portfolio mean/variance and mean-adjusted portfolio return")
def test_criterion_4_prop4_prop5_monte_carlo():
    n = 3
    s = (0.7, 0.3)
    seed = 104
    # replicate the generator's factor draw to place the means orthogonally
    # to the canonical spaces, where the static+dynamic mean formula is exact
    rng = np.random.default_rng(seed)
    _, u0, v0 = build_cross_cov(rng, n, n, s)
    null_r = np.linalg.svd(u0, full_matrices=True)[0][:, -1]
    null_x = np.linalg.svd(v0, full_matrices=True)[0][:, -1]
    spec = SyntheticMarketSpec(
        n, 1, 1, target_s=s, mu_r=0.8 * null_r, mu_x=1.2 * null_x, seed=seed
    )
    rep = verify_prop4(spec, n_draws=1_000_000)
    for i in range(2):
        assert abs(rep.emp_mean[i] - rep.pred_mean[i]) < 3.0 * rep.se_mean[i]
        assert abs(rep.emp_var[i] - rep.pred_var[i]) < 3.0 * rep.se_var[i]
    assert abs(rep.portfolio_emp_mean - rep.portfolio_pred_mean) < 3.0 * rep.portfolio_se_mean
    return (
        f"E[pi]={rep.emp_mean.round(4)} vs {rep.pred_mean}, "
        f"portfolio {rep.portfolio_emp_mean:.4f} vs {rep.portfolio_pred_mean:.4f}"
    )


@report("5", "fourth-moment variance identity for x'Ar")
def test_criterion_5_isserlis_variance():
    rng = np.random.default_rng(105)
    for _ in range(10):
        n = int(rng.integers(2, 5))
        p = int(rng.integers(2, 5))
        m = random_valid_moments(rng, n, p, 0.85)
        a = rng.standard_normal((p, n))
        emp, se, pred = isserlis_variance_check(
            m, a, n_draws=300_000, seed=int(rng.integers(1 << 30))
        )
        assert abs(emp - pred) < 3.0 * se


@report("6", "upward bias ordering and in-sample optimism with 3-SE separation")
def test_criterion_6_bias_phenomena():
    cells = wachter_bias_experiment(
        [(0.03, 0.06), (0.1, 0.2), (0.3, 0.6)], t=100, reps=150, seed=106
    )
    for a, b in zip(cells, cells[1:]):
        gap = b.mean_s - a.mean_s
        assert gap > 3.0 * float(np.hypot(a.se_mean_s, b.se_mean_s))

    spec = SyntheticMarketSpec(5, 1, 60, target_s=(0.3,) * 5, seed=1060)
    bias = insample_bias_experiment(spec, reps=400)
    sep = bias.mean_insample - bias.mean_outsample
    assert sep > 3.0 * float(np.hypot(bias.se_insample, bias.se_outsample))
    return (
        f"mean s-bar {[round(c.mean_s, 3) for c in cells]}, "
        f"in-sample {bias.mean_insample:.3f} > realized {bias.mean_outsample:.3f}"
    )


@report("7", "budget constraint, gross normalization and two-asset return formula")
def test_criterion_7_constraints():
    rng = np.random.default_rng(107)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        p = int(rng.integers(2, 6))
        m = random_valid_moments(rng, n, p, 0.9)
        x = rng.standard_normal(p)
        w = fully_invested(m, x, gamma=float(rng.uniform(0.5, 3.0)))
        assert abs(w.w.sum() - 1.0) < 1e-12

    for _ in range(50):
        w = rng.standard_normal(int(rng.integers(2, 8)))
        g = normalize_gross(w)
        assert abs(np.abs(g).sum() - 1.0) < 1e-12
        assert np.abs(normalize_gross(g) - g).max() < 1e-14
        assert np.abs(normalize_gross(float(rng.uniform(0.1, 9.0)) * w) - g).max() < 1e-13

    for rho in np.arange(-0.9, 0.91, 0.1):
        xi = rng.standard_normal((2, 2))
        sigma_r = np.array([[1.0, rho], [rho, 1.0]])
        closed = (
            (xi**2).sum() - 2.0 * rho * (xi[0, 0] * xi[1, 0] + xi[0, 1] * xi[1, 1])
        ) / (1.0 - rho**2)
        trace = float(np.trace(np.linalg.inv(sigma_r) @ xi @ xi.T))
        assert abs(closed - trace) < 1e-12
        assert closed >= 0.0


@report("8", "Sharpe t-statistic pins the published value")
def test_criterion_8_lo_tstat_pin():
    t = lo_tstat(1.010 / np.sqrt(12.0), 578)
    assert abs(t - 6.872) < 0.05
    return f"t = {t:.3f} vs 6.872"


# --- empirical reproduction -------------------------------------------------

_FF_RESULTS: dict = {}


def ff25_backtests():
    """CP2 / PP2 / UNI on the FF25 daily file, or skip when unavailable."""
    if "error" in _FF_RESULTS:
        pytest.skip(_FF_RESULTS["error"])
    if not _FF_RESULTS:
        try:
            panel = load_panel(DatasetId("FF25"), DEFAULT_CACHE, offline=False)
        except (NetworkUnavailable, CanonportError) as exc:
            _FF_RESULTS["error"] = (
                "FF25 daily data unavailable (no cache entry and no network): "
                f"{exc}; cache it under {DEFAULT_CACHE} to enable the empirical checks"
            )
            pytest.skip(_FF_RESULTS["error"])
        vintage_ok = panel.dates[-1] <= "2022-11-15"
        for policy in ("cp", "pp", "uni"):
            config = BacktestConfig(policy=policy)
            _FF_RESULTS[policy] = run_backtest(config, panel)
        _FF_RESULTS["vintage_ok"] = vintage_ok
        _FF_RESULTS["last_date"] = panel.dates[-1]
    return _FF_RESULTS


def annualized(result):
    ppy = periods_per_year(21)
    mean = result.realized_returns.mean() * ppy * 100.0
    sd = result.realized_returns.std(ddof=1) * np.sqrt(ppy) * 100.0
    return mean, sd, mean / sd


@report("9", "FF25 reproduction: counts, CP2/PP2/UNI Sharpe and CP2 mean")
def test_criterion_9_empirical_reproduction():
    results = ff25_backtests()
    tol = 0.10 if results["vintage_ok"] else 0.20
    vintage = "10-2022 vintage" if results["vintage_ok"] else (
        f"vintage-mismatch (data through {results['last_date']}), tolerances widened"
    )
    cp2 = results["cp"]
    assert cp2.n_returns == 578
    assert cp2.n_weights == 579
    mean, _, sharpe = annualized(cp2)
    assert abs(sharpe - 1.010) < tol
    assert abs(mean - 2.196) < 0.4 if results["vintage_ok"] else abs(mean - 2.196) < 0.8
    _, _, pp_sharpe = annualized(results["pp"])
    assert abs(pp_sharpe - 0.662) < tol
    _, _, uni_sharpe = annualized(results["uni"])
    assert abs(uni_sharpe - 0.452) < tol
    return (
        f"{vintage}; CP2 mean {mean:.3f}% SR {sharpe:.3f}, "
        f"PP2 SR {pp_sharpe:.3f}, UNI SR {uni_sharpe:.3f}, n={cp2.n_returns}"
    )


@report("10", "per-date leg identity, exact static+dynamic split, long-leg level")
def test_criterion_10_decomposition_identities():
    config = BacktestConfig(
        dataset="synthetic",
        policy="cp",
        k=2,
        lookback_days=(5,),
        window_blocks=12,
        horizon_days=5,
        history_reserve_days=0,
        sample_start=None,
    )
    panel = synthetic_panel(5, 260, seed=110)
    result = run_backtest(config, panel)
    legs = long_short_legs(result.weights, result.asset_block_returns)
    both = ~np.isnan(legs.leverage)
    assert both.sum() > 0
    recon = (legs.leverage * (legs.long_returns - legs.short_returns))[both]
    assert np.abs(recon - result.realized_returns[both]).max() < 1e-12
    static, dynamic, _ = static_dynamic_decomp(result.weights, result.asset_block_returns)
    assert abs((static + dynamic) - result.realized_returns.mean()) < 1e-12

    detail = "synthetic identities exact"
    if "error" not in _FF_RESULTS and _FF_RESULTS:
        cp2 = _FF_RESULTS["cp"]
        ff_legs = long_short_legs(cp2.weights, cp2.asset_block_returns)
        long_ann = ff_legs.long_mean * 12.0 * 100.0
        assert abs(long_ann - 8.01) < 0.5
        ok = ~np.isnan(ff_legs.leverage)
        ff_recon = (ff_legs.leverage * (ff_legs.long_returns - ff_legs.short_returns))[ok]
        assert np.abs(ff_recon - cp2.realized_returns[ok]).max() < 1e-12
        detail += f"; CP2 FF25 long leg {long_ann:.2f}% vs 8.01%"
    else:
        detail += "; FF25 long-leg level skipped (no data)"
    return detail
