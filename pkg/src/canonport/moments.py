"""Joint moment estimation: sample moments, linear shrinkage, matrix roots.

Conventions: a returns block holds rows of next-period returns and a
signals block holds the signals observed one period earlier, so row t of
both blocks is an aligned (r_{t+1}, x_t) pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotSymmetric, ShapeMismatch, SingularAfterFloor

SYM_TOL = 1e-12


@dataclass
class ShrinkageConfig:
    """Shrinkage intensities toward the scaled-identity target.

    ``delta_r`` / ``delta_x`` are either the string ``"auto"`` (asymptotic
    Ledoit-Wolf intensity) or a fixed value in [0, 1]. The signal covariance
    defaults to a fixed 0.9 because the asymptotic formula assumes iid
    returns, which rank-based signals are not.
    """

    delta_r: float | str = "auto"
    delta_x: float | str = 0.9
    eig_floor_rel: float = 1e-12

    def __post_init__(self):
        for name in ("delta_r", "delta_x"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "auto":
                    raise ValueError(f"{name} must be 'auto' or a value in [0, 1], got {v!r}")
            elif not 0.0 <= float(v) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class MomentEstimates:
    """Second moments of returns and signals plus their cross moment.

    ``sigma_r`` is N x N, ``sigma_x`` is P x P and ``sigma_rx`` is N x P,
    where P counts all signal columns (assets times signals per asset).
    Means are stored regardless of the centering flags.
    """

    sigma_r: np.ndarray
    sigma_x: np.ndarray
    sigma_rx: np.ndarray
    mu_r: np.ndarray
    mu_x: np.ndarray
    delta_r: float = 0.0
    delta_x: float = 0.0
    demean_flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma_r = np.asarray(self.sigma_r, dtype=float)
        self.sigma_x = np.asarray(self.sigma_x, dtype=float)
        self.sigma_rx = np.asarray(self.sigma_rx, dtype=float)
        self.mu_r = np.asarray(self.mu_r, dtype=float)
        self.mu_x = np.asarray(self.mu_x, dtype=float)
        n, p = self.sigma_rx.shape
        if self.sigma_r.shape != (n, n) or self.sigma_x.shape != (p, p):
            raise ShapeMismatch(
                f"inconsistent moment shapes: sigma_r {self.sigma_r.shape}, "
                f"sigma_x {self.sigma_x.shape}, sigma_rx {self.sigma_rx.shape}"
            )
        if self.mu_r.shape != (n,) or self.mu_x.shape != (p,):
            raise ShapeMismatch("mean vectors do not match moment dimensions")
        _check_symmetric(self.sigma_r, "sigma_r")
        _check_symmetric(self.sigma_x, "sigma_x")

    @property
    def n_assets(self) -> int:
        return self.sigma_r.shape[0]

    @property
    def n_signal_cols(self) -> int:
        return self.sigma_x.shape[0]


def _check_symmetric(s: np.ndarray, name: str = "matrix") -> None:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NotSymmetric(f"{name} is not square: shape {s.shape}")
    scale = max(1.0, float(np.abs(s).max(initial=0.0)))
    if np.abs(s - s.T).max(initial=0.0) > SYM_TOL * scale:
        raise NotSymmetric(f"{name} is not symmetric within tolerance")


def sample_moments(
    returns_block: np.ndarray,
    signals_block: np.ndarray,
    demean_returns: bool = True,
    demean_signals: bool = True,
    cross_moment: str = "centered",
) -> MomentEstimates:
    """Pre-shrinkage moments from paired (r_{t+1}, x_t) rows.

    Second moments use the 1/T normalization. With centering off,
    sigma_r is the raw second-moment matrix; either way the means are
    computed and stored. ``cross_moment`` selects whether sigma_rx is the
    cross covariance of centered rows ("centered") or the raw second
    moment ("raw"); the two differ exactly by the rank-one outer product
    of the means.
    """
    r = np.asarray(returns_block, dtype=float)
    x = np.asarray(signals_block, dtype=float)
    if r.ndim != 2 or x.ndim != 2 or r.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"blocks must be 2-D with equal row counts: {r.shape} vs {x.shape}")
    t = r.shape[0]
    if t < 2:
        raise ShapeMismatch(f"need at least 2 paired rows, got {t}")
    if cross_moment not in ("centered", "raw"):
        raise ValueError(f"cross_moment must be 'centered' or 'raw', got {cross_moment!r}")

    mu_r = r.mean(axis=0)
    mu_x = x.mean(axis=0)
    rc = r - mu_r if demean_returns else r
    xc = x - mu_x if demean_signals else x
    sigma_r = rc.T @ rc / t
    sigma_x = xc.T @ xc / t
    if cross_moment == "centered":
        sigma_rx = (r - mu_r).T @ (x - mu_x) / t
    else:
        sigma_rx = r.T @ x / t
    sigma_r = 0.5 * (sigma_r + sigma_r.T)
    sigma_x = 0.5 * (sigma_x + sigma_x.T)
    return MomentEstimates(
        sigma_r=sigma_r,
        sigma_x=sigma_x,
        sigma_rx=sigma_rx,
        mu_r=mu_r,
        mu_x=mu_x,
        demean_flags={
            "returns": demean_returns,
            "signals": demean_signals,
            "cross_moment": cross_moment,
        },
    )


def lw_shrink(
    s: np.ndarray,
    n_obs: int,
    mode: float | str = "auto",
    observations: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Linear shrinkage toward mu*I with mu = Tr(S)/N.

    ``mode`` is a fixed intensity in [0, 1] or "auto" for the Ledoit-Wolf
    (2004) identity-target intensity delta = min(b2, d2) / d2 with
    d2 = ||S - mu I||_F^2 and b2_bar = T^-2 sum_t ||z_t z_t' - S||_F^2,
    computed from the (centered) observations that produced S. The shrunk
    matrix is a convex combination with an equal-trace target, so the
    trace is preserved exactly.
    """
    s = np.asarray(s, dtype=float)
    _check_symmetric(s, "S")
    n = s.shape[0]
    mu = float(np.trace(s)) / n
    target = mu * np.eye(n)
    if isinstance(mode, str):
        if mode != "auto":
            raise ValueError(f"mode must be 'auto' or a float, got {mode!r}")
        if observations is None:
            raise ValueError("auto shrinkage requires the observations S was computed from")
        z = np.asarray(observations, dtype=float)
        if z.ndim != 2 or z.shape[1] != n:
            raise ShapeMismatch(f"observations shape {z.shape} does not match S dimension {n}")
        if z.shape[0] != n_obs:
            raise ShapeMismatch(f"n_obs={n_obs} but observations have {z.shape[0]} rows")
        z = z - z.mean(axis=0)
        t = int(n_obs)
        d2 = float(np.sum((s - target) ** 2))
        if d2 <= 0.0:
            delta = 0.0
        else:
            outer = z[:, :, None] * z[:, None, :]
            b2_bar = float(np.sum((outer - s) ** 2)) / t**2
            delta = min(b2_bar, d2) / d2
    else:
        delta = float(mode)
        if not 0.0 <= delta <= 1.0:
            raise ValueError(f"fixed shrinkage intensity must lie in [0, 1], got {delta}")
    shrunk = (1.0 - delta) * s + delta * target
    return 0.5 * (shrunk + shrunk.T), delta


def _floored_eig(sigma: np.ndarray, floor_rel: float) -> tuple[np.ndarray, np.ndarray]:
    _check_symmetric(sigma, "sigma")
    w, v = np.linalg.eigh(0.5 * (sigma + np.asarray(sigma).T))
    w_max = float(w[-1])
    if w_max <= 0.0:
        raise SingularAfterFloor("matrix has no positive eigenvalue")
    return np.maximum(w, floor_rel * w_max), v


def sym_sqrt(sigma: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with a relative floor."""
    w, v = _floored_eig(sigma, floor_rel)
    return (v * np.sqrt(w)) @ v.T


def sym_inv_sqrt(sigma: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Symmetric inverse square root; eigenvalues floored before inversion."""
    w, v = _floored_eig(sigma, floor_rel)
    return (v / np.sqrt(w)) @ v.T


def sym_inv(sigma: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Symmetric inverse with the same eigenvalue floor as sym_inv_sqrt."""
    w, v = _floored_eig(sigma, floor_rel)
    return (v / w) @ v.T


def shrink_moments(
    moments: MomentEstimates,
    config: ShrinkageConfig,
    returns_obs: np.ndarray | None = None,
    signals_obs: np.ndarray | None = None,
    n_obs: int | None = None,
) -> MomentEstimates:
    """Apply linear shrinkage to both marginal covariances.

    The cross moment is never shrunk directly; regularization reaches the
    decomposition only through the whitening matrices.
    """
    t = n_obs
    if t is None:
        for obs in (returns_obs, signals_obs):
            if obs is not None:
                t = np.asarray(obs).shape[0]
                break
    if t is None:
        raise ValueError("n_obs is required when no observations are supplied")
    sigma_r, delta_r = lw_shrink(moments.sigma_r, t, config.delta_r, returns_obs)
    sigma_x, delta_x = lw_shrink(moments.sigma_x, t, config.delta_x, signals_obs)
    return MomentEstimates(
        sigma_r=sigma_r,
        sigma_x=sigma_x,
        sigma_rx=moments.sigma_rx,
        mu_r=moments.mu_r,
        mu_x=moments.mu_x,
        delta_r=delta_r,
        delta_x=delta_x,
        demean_flags=dict(moments.demean_flags),
    )


def estimate_moments(
    returns_block: np.ndarray,
    signals_block: np.ndarray,
    config: ShrinkageConfig | None = None,
    demean_returns: bool = True,
    demean_signals: bool = True,
    cross_moment: str = "centered",
) -> MomentEstimates:
    """Sample moments followed by shrinkage in one step."""
    config = config or ShrinkageConfig()
    raw = sample_moments(
        returns_block,
        signals_block,
        demean_returns=demean_returns,
        demean_signals=demean_signals,
        cross_moment=cross_moment,
    )
    r = np.asarray(returns_block, dtype=float)
    x = np.asarray(signals_block, dtype=float)
    return shrink_moments(
        raw,
        config,
        returns_obs=r - r.mean(axis=0) if demean_returns else r,
        signals_obs=x - x.mean(axis=0) if demean_signals else x,
    )
