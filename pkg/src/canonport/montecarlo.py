"""Synthetic joint-Gaussian markets and estimator diagnostics.

The generator draws (r_{t+1}, x_t) pairs with identity marginal
covariances and a cross covariance assembled from target canonical
correlations, so the population decomposition is known exactly. General
SPD marginals can be obtained by post-multiplying the samples with a
matrix square root, which leaves the canonical correlations unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cca import cca_decompose
from .data import ReturnPanel
from .errors import InvalidSpec
from .moments import MomentEstimates, sample_moments, sym_sqrt
from .signals import SignalPanel


@dataclass
class SyntheticMarketSpec:
    n_assets: int
    n_signals: int  # signals per asset; the signal vector has n_assets * n_signals entries
    n_periods: int
    target_s: tuple[float, ...] = ()
    mu_r: np.ndarray | None = None
    mu_x: np.ndarray | None = None
    seed: int = 0
    # applied to the unit-variance return draws before they enter the panel,
    # keeping simulated returns inside the > -1 domain of real ones; canonical
    # correlations are unaffected by the rescaling
    return_scale: float = 0.01

    def __post_init__(self):
        if self.n_assets < 1 or self.n_signals < 1 or self.n_periods < 1:
            raise InvalidSpec("n_assets, n_signals and n_periods must be positive")
        if not 0.0 < self.return_scale <= 1.0:
            raise InvalidSpec("return_scale must lie in (0, 1]")
        self.target_s = tuple(float(v) for v in self.target_s)
        k = len(self.target_s)
        if k > min(self.n_assets, self.signal_dim):
            raise InvalidSpec("more target correlations than min(N, N*M)")
        if any(v < 0 or v >= 1 for v in self.target_s):
            raise InvalidSpec("target canonical correlations must lie in [0, 1)")
        for name, dim in (("mu_r", self.n_assets), ("mu_x", self.signal_dim)):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (dim,):
                    raise InvalidSpec(f"{name} must have length {dim}")
                setattr(self, name, v)

    @property
    def signal_dim(self) -> int:
        return self.n_assets * self.n_signals


@dataclass
class CanonicalMoments:
    """Population return moments of the canonical portfolios."""

    s: np.ndarray
    expected: np.ndarray  # s_i^2
    variance: np.ndarray  # s_i^2 (1 + s_i^2)
    sharpe: np.ndarray  # s_i / sqrt(1 + s_i^2)
    total_expected: float  # sum s_i^2 / gamma
    total_variance: float
    total_sharpe: float  # sqrt(sum s_i^2 / gamma)
    gamma: float = 1.0


def canonical_moments(s, gamma: float = 1.0) -> CanonicalMoments:
    """Per-component and total moments implied by the canonical correlations."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise InvalidSpec("canonical correlations must be non-negative")
    total = float(np.sum(s**2)) / gamma
    return CanonicalMoments(
        s=s,
        expected=s**2,
        variance=s**2 * (1.0 + s**2),
        sharpe=s / np.sqrt(1.0 + s**2),
        total_expected=total,
        total_variance=total,
        total_sharpe=float(np.sqrt(total)),
        gamma=gamma,
    )


def _haar_columns(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, max(k, 1))))
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q[:, :k]


def build_cross_cov(rng: np.random.Generator, n: int, p: int, target_s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cross covariance U0 diag(s) V0' with random orthonormal factors."""
    s = np.asarray(target_s, dtype=float)
    k = s.shape[0]
    u0 = _haar_columns(rng, n, k)
    v0 = _haar_columns(rng, p, k)
    c = (u0 * s) @ v0.T if k else np.zeros((n, p))
    return c, u0, v0


def joint_covariance(moments: MomentEstimates) -> np.ndarray:
    """Assemble the partitioned joint covariance of (r_{t+1}, x_t)."""
    return np.block(
        [[moments.sigma_r, moments.sigma_rx], [moments.sigma_rx.T, moments.sigma_x]]
    )


def draw_joint(
    moments: MomentEstimates, n_draws: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (r, x) pairs from the joint Gaussian implied by the moments."""
    cov = joint_covariance(moments)
    chol = np.linalg.cholesky(cov + 1e-14 * np.trace(cov) / cov.shape[0] * np.eye(cov.shape[0]))
    z = rng.standard_normal((n_draws, cov.shape[0])) @ chol.T
    n = moments.n_assets
    r = z[:, :n] + moments.mu_r
    x = z[:, n:] + moments.mu_x
    return r, x


def gaussian_market(spec: SyntheticMarketSpec) -> tuple[ReturnPanel, SignalPanel, MomentEstimates]:
    """Simulate panels whose (x_t, r_{t+1}) pairs follow the target moments.

    Returns the panels plus the true moments (identity marginals, the
    constructed cross covariance and the requested means). Row t of the
    signal panel pairs with row t+1 of the return panel; the first return
    row and last signal row are independent padding draws.
    """
    rng = np.random.default_rng(spec.seed)
    n, p, t = spec.n_assets, spec.signal_dim, spec.n_periods
    scale = spec.return_scale
    c, _, _ = build_cross_cov(rng, n, p, spec.target_s)
    mu_r = np.zeros(n) if spec.mu_r is None else spec.mu_r
    mu_x = np.zeros(p) if spec.mu_x is None else spec.mu_x
    unit = MomentEstimates(
        sigma_r=np.eye(n),
        sigma_x=np.eye(p),
        sigma_rx=c,
        mu_r=mu_r,
        mu_x=mu_x,
        demean_flags={"returns": True, "signals": True, "cross_moment": "centered"},
    )
    truth = MomentEstimates(
        sigma_r=scale**2 * np.eye(n),
        sigma_x=np.eye(p),
        sigma_rx=scale * c,
        mu_r=scale * mu_r,
        mu_x=mu_x,
        demean_flags=dict(unit.demean_flags),
    )
    r_draws, x_draws = draw_joint(unit, t, rng)
    returns = scale * np.vstack([mu_r + rng.standard_normal(n), r_draws])
    signals = np.vstack([x_draws, mu_x + rng.standard_normal(p)])
    dates = [_synthetic_date(i) for i in range(t + 1)]
    clipped = np.maximum(returns, -0.999999)  # defensive; > -1 by construction
    panel = ReturnPanel(dates, [f"A{i + 1}" for i in range(n)], clipped)
    sig_panel = SignalPanel(
        rebalance_dates=dates,
        assets=panel.assets,
        signal_names=[f"sim{m + 1}" for m in range(spec.n_signals)],
        values=signals,
        normalized=False,
    )
    return panel, sig_panel, truth


def _synthetic_date(i: int) -> str:
    import datetime

    return (datetime.date(1970, 1, 1) + datetime.timedelta(days=i)).isoformat()


@dataclass
class Prop4Report:
    """Empirical versus predicted canonical-portfolio moments."""

    s: np.ndarray
    emp_mean: np.ndarray
    se_mean: np.ndarray
    pred_mean: np.ndarray
    emp_var: np.ndarray
    se_var: np.ndarray
    pred_var: np.ndarray
    portfolio_emp_mean: float
    portfolio_se_mean: float
    portfolio_pred_mean: float
    portfolio_emp_var: float
    portfolio_pred_var: float  # exact zero-mean value; the per-index terms are uncorrelated
    n_draws: int


def verify_prop4(spec: SyntheticMarketSpec, n_draws: int, gamma: float = 1.0) -> Prop4Report:
    """Empirical moments of the canonical-portfolio returns.

    pi_i = s_i (v_i' x~)(u_i' r~) on centered whitened draws; the
    portfolio row evaluates x' A r on raw draws with A built from the raw
    second-moment cross matrix, whose predicted mean adds the product of
    the squared mean-based Sharpe terms to sum s_i^2.
    """
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n_assets, spec.signal_dim
    s = np.asarray(spec.target_s, dtype=float)
    c, u0, v0 = build_cross_cov(rng, n, p, s)
    mu_r = np.zeros(n) if spec.mu_r is None else spec.mu_r
    mu_x = np.zeros(p) if spec.mu_x is None else spec.mu_x
    truth = MomentEstimates(
        sigma_r=np.eye(n), sigma_x=np.eye(p), sigma_rx=c, mu_r=mu_r, mu_x=mu_x
    )
    r, x = draw_joint(truth, n_draws, rng)
    r_c = r - mu_r
    x_c = x - mu_x
    pi = s * (x_c @ v0) * (r_c @ u0)  # n_draws x k
    emp_mean = pi.mean(axis=0)
    emp_var = pi.var(axis=0)
    se_mean = pi.std(axis=0, ddof=1) / np.sqrt(n_draws)
    m2 = pi - emp_mean
    se_var = np.sqrt(((m2**2 - emp_var) ** 2).mean(axis=0) / n_draws)

    sigma_rx_raw = np.outer(mu_r, mu_x) + c
    a = sigma_rx_raw.T / gamma  # identity marginals: A = Sx^-1 Srx' Sr^-1 / gamma
    port = np.einsum("ti,ij,tj->t", x, a, r)
    pred_port = (mu_r @ mu_r) * (mu_x @ mu_x) / gamma + float(np.sum(s**2)) / gamma
    pred_port_var = float(np.sum(s**2 * (1.0 + s**2))) / gamma**2
    return Prop4Report(
        s=s,
        emp_mean=emp_mean,
        se_mean=se_mean,
        pred_mean=s**2,
        emp_var=emp_var,
        se_var=se_var,
        pred_var=s**2 * (1.0 + s**2),
        portfolio_emp_mean=float(port.mean()),
        portfolio_se_mean=float(port.std(ddof=1) / np.sqrt(n_draws)),
        portfolio_pred_mean=pred_port,
        portfolio_emp_var=float(port.var()),
        portfolio_pred_var=pred_port_var,
        n_draws=n_draws,
    )


@dataclass
class WachterCell:
    n_over_t: float
    m_over_t: float
    n: int
    m: int
    t: int
    reps: int
    mean_s: float
    se_mean_s: float
    mean_max_s: float
    se_mean_max_s: float
    quantiles: dict = field(default_factory=dict)


def wachter_bias_experiment(
    ratios: list[tuple[float, float]],
    t: int,
    reps: int,
    seed: int = 0,
) -> list[WachterCell]:
    """Sample canonical correlations of fully independent data.

    One cell per (N/T, M/T) ratio pair; reports the Monte Carlo mean of
    all sample canonical correlations and of the largest one. The upward
    bias grows with either ratio.
    """
    if reps < 1:
        raise InvalidSpec("reps must be >= 1")
    cells = []
    for cell_idx, (nr, mr) in enumerate(ratios):
        n = int(round(nr * t))
        m = int(round(mr * t))
        if n < 1 or m < 1 or min(n, m) > t:
            raise InvalidSpec(f"infeasible ratios ({nr}, {mr}) at T={t}")
        means = np.empty(reps)
        maxes = np.empty(reps)
        all_s = []
        for rep in range(reps):
            rng = np.random.default_rng([seed, cell_idx, rep])
            r = rng.standard_normal((t, n))
            x = rng.standard_normal((t, m))
            moments = sample_moments(r, x)
            s = cca_decompose(moments).s
            means[rep] = s.mean()
            maxes[rep] = s.max()
            all_s.append(s)
        pooled = np.concatenate(all_s)
        qs = {q: float(np.quantile(pooled, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)}
        cells.append(
            WachterCell(
                n_over_t=nr,
                m_over_t=mr,
                n=n,
                m=m,
                t=t,
                reps=reps,
                mean_s=float(means.mean()),
                se_mean_s=float(means.std(ddof=1) / np.sqrt(reps)),
                mean_max_s=float(maxes.mean()),
                se_mean_max_s=float(maxes.std(ddof=1) / np.sqrt(reps)),
                quantiles=qs,
            )
        )
    return cells


@dataclass
class InsampleBiasReport:
    mean_insample: float  # mean of sum s_hat_i^2
    se_insample: float
    mean_outsample: float  # mean of sum s_hat_i * s_i_circ
    se_outsample: float
    reps: int


def insample_bias_experiment(spec: SyntheticMarketSpec, reps: int) -> InsampleBiasReport:
    """In-sample squared canonical correlations versus their realized product.

    Marginals are known (identity) and only the cross moment is estimated,
    so s_hat are the singular values of the sample cross covariance and
    s_i_circ = u_hat_i' Sigma_rx v_hat_i is the out-of-sample correlation
    of the estimated directions. Jensen's inequality makes the in-sample
    mean an optimist: E[sum s_hat^2] >= E[sum s_hat s_circ].
    """
    if reps < 1:
        raise InvalidSpec("reps must be >= 1")
    rng_master = np.random.default_rng(spec.seed)
    n, p, t = spec.n_assets, spec.signal_dim, spec.n_periods
    c, _, _ = build_cross_cov(rng_master, n, p, spec.target_s)
    truth = MomentEstimates(
        sigma_r=np.eye(n), sigma_x=np.eye(p), sigma_rx=c,
        mu_r=np.zeros(n), mu_x=np.zeros(p),
    )
    ins = np.empty(reps)
    outs = np.empty(reps)
    for rep in range(reps):
        rng = np.random.default_rng([spec.seed, rep])
        r, x = draw_joint(truth, t, rng)
        srx = r.T @ x / t
        u, s_hat, vt = np.linalg.svd(srx, full_matrices=False)
        s_circ = np.einsum("ik,ij,jk->k", u, c, vt.T)
        ins[rep] = np.sum(s_hat**2)
        outs[rep] = np.sum(s_hat * s_circ)
    return InsampleBiasReport(
        mean_insample=float(ins.mean()),
        se_insample=float(ins.std(ddof=1) / np.sqrt(reps)),
        mean_outsample=float(outs.mean()),
        se_outsample=float(outs.std(ddof=1) / np.sqrt(reps)),
        reps=reps,
    )


def isserlis_variance_check(
    moments: MomentEstimates,
    a: np.ndarray,
    n_draws: int,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Monte Carlo variance of x'Ar against its fourth-moment identity.

    For zero-mean jointly Gaussian (r, x) the identity is
    Var(x'Ar) = Tr(Sx A Sr A') + Tr(Srx A Srx A). Returns
    (empirical variance, its standard error, predicted variance).
    """
    rng = np.random.default_rng(seed)
    centered = MomentEstimates(
        sigma_r=moments.sigma_r,
        sigma_x=moments.sigma_x,
        sigma_rx=moments.sigma_rx,
        mu_r=np.zeros(moments.n_assets),
        mu_x=np.zeros(moments.n_signal_cols),
    )
    r, x = draw_joint(centered, n_draws, rng)
    vals = np.einsum("ti,ij,tj->t", x, a, r)
    emp = float(vals.var())
    dev = (vals - vals.mean()) ** 2
    se = float(np.sqrt(((dev - emp) ** 2).mean() / n_draws))
    pred = float(
        np.trace(moments.sigma_x @ a @ moments.sigma_r @ a.T)
        + np.trace(moments.sigma_rx @ a @ moments.sigma_rx @ a)
    )
    return emp, se, pred


def random_valid_moments(
    rng: np.random.Generator,
    n: int,
    p: int,
    s_max: float = 0.9,
    k: int | None = None,
    spread: float = 1.0,
) -> MomentEstimates:
    """Random SPD marginals with a jointly PSD cross moment.

    The cross moment is sigma_r^{1/2} U0 diag(s) V0' sigma_x^{1/2} with
    s drawn in [0, s_max], so the canonical correlations are exactly s and
    the joint covariance is positive definite whenever s_max < 1.
    """

    def spd(d):
        g = rng.standard_normal((d, d)) / np.sqrt(d)
        return g @ g.T + (0.3 + spread * rng.random()) * np.eye(d)

    sigma_r = spd(n)
    sigma_x = spd(p)
    k = min(n, p) if k is None else k
    s = np.sort(rng.uniform(0.0, s_max, size=k))[::-1]
    c_white, _, _ = build_cross_cov(rng, n, p, s)
    sigma_rx = sym_sqrt(sigma_r) @ c_white @ sym_sqrt(sigma_x)
    return MomentEstimates(
        sigma_r=sigma_r,
        sigma_x=sigma_x,
        sigma_rx=sigma_rx,
        mu_r=np.zeros(n),
        mu_x=np.zeros(p),
    )
