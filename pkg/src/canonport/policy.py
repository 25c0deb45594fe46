"""Closed-form trading policies and weight normalization.

All policies map a signal vector x_t into portfolio weights. The policy
coefficient matrix A has shape (P, N) so that w = A' x; P counts signal
columns and N assets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cca import CcaDecomposition, cca_decompose, truncate
from .errors import (
    DimensionTooLarge,
    DivisionDegenerate,
    InvalidK,
    ShapeMismatch,
    SvdFailure,
)
from .moments import MomentEstimates, sym_inv

GROSS_EPS = 1e-300


@dataclass
class PolicyMatrix:
    """Static coefficient matrix of a linear-in-signals policy."""

    a: np.ndarray
    gamma: float = 1.0
    mode: str = "approx"
    k: int | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2:
            raise ShapeMismatch(f"policy matrix must be 2-D, got shape {self.a.shape}")
        if not np.all(np.isfinite(self.a)):
            raise ValueError("policy matrix has non-finite entries")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass
class WeightVector:
    """Portfolio weights for one rebalance date."""

    w: np.ndarray
    date: str | None = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)

    @property
    def gross(self) -> float:
        return float(np.abs(self.w).sum())


def cp_policy(decomp: CcaDecomposition, gamma: float = 1.0, mode: str = "approx") -> PolicyMatrix:
    """Canonical-portfolio policy A = Q_x diag(L) Q_r'.

    In "approx" mode L_i = s_i / gamma (linear loading). In "full" mode
    L_i = s_i / (gamma (1 + s_i^2)), the exact maximizer of the quadratic
    utility including the cross-term variance; a canonical correlation of
    one is loaded at half its approximate weight.
    """
    if mode == "approx":
        loadings = decomp.s / gamma
    elif mode == "full":
        loadings = decomp.s / (gamma * (1.0 + decomp.s**2))
    else:
        raise ValueError(f"mode must be 'approx' or 'full', got {mode!r}")
    a = (decomp.q_x * loadings) @ decomp.q_r.T
    return PolicyMatrix(a=a, gamma=gamma, mode=mode, k=decomp.k)


def kronecker_oracle(moments: MomentEstimates, gamma: float = 1.0) -> PolicyMatrix:
    """Augmented-space solution vec(A) = (1/gamma) (Sx kron Sr)^{-1} vec(Srx').

    Test oracle only: the Kronecker system has (N P)^2 entries, so the
    dimension is capped at N*P <= 64.
    """
    n = moments.n_assets
    p = moments.n_signal_cols
    if n * p > 64:
        raise DimensionTooLarge(f"N*P = {n * p} exceeds the 64 cap for the Kronecker oracle")
    big = np.kron(moments.sigma_x, moments.sigma_r)
    # row-major flatten matches the vec convention in which x'Ar = vec(A)'(x kron r)
    rhs = moments.sigma_rx.T.reshape(-1)
    vec_a = np.linalg.solve(big, rhs) / gamma
    return PolicyMatrix(a=vec_a.reshape(p, n), gamma=gamma, mode="approx", k=None)


def pp_policy(moments: MomentEstimates, k: int, gamma: float = 1.0) -> PolicyMatrix:
    """Principal-portfolio style policy: truncated SVD of the raw cross moment.

    No whitening is applied; the moments are expected to be built from
    cross-sectionally demeaned returns. A = (1/gamma) sum_{i<=k} s_i v_i u_i',
    which coincides with the approx canonical policy when both marginal
    covariances are the identity.
    """
    n, p = moments.sigma_rx.shape
    if not 1 <= k <= min(n, p):
        raise InvalidK(f"k must lie in [1, {min(n, p)}], got {k}")
    try:
        u, s, vt = np.linalg.svd(moments.sigma_rx, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    a = (vt[:k].T * (s[:k] / gamma)) @ u[:, :k].T
    return PolicyMatrix(a=a, gamma=gamma, mode="pp", k=k)


def mvo_policy(
    sigma_r: np.ndarray,
    x_t: np.ndarray,
    gamma: float = 1.0,
    floor_rel: float = 1e-12,
) -> WeightVector:
    """Markowitz weights with the signal as the conditional-mean proxy."""
    x = np.asarray(x_t, dtype=float)
    return WeightVector(w=sym_inv(sigma_r, floor_rel) @ x / gamma)


def uni_policy(x_t: np.ndarray) -> WeightVector:
    """Univariate factor: the weights are the signals themselves."""
    return WeightVector(w=np.array(x_t, dtype=float, copy=True))


def reg_policy(
    moments: MomentEstimates,
    x_t: np.ndarray,
    gamma: float = 1.0,
    floor_rel: float = 1e-12,
) -> WeightVector:
    """Two-stage OLS-then-Markowitz policy using the residual covariance."""
    x = np.asarray(x_t, dtype=float)
    inv_x = sym_inv(moments.sigma_x, floor_rel)
    sigma_eps = moments.sigma_r - moments.sigma_rx @ inv_x @ moments.sigma_rx.T
    sigma_eps = 0.5 * (sigma_eps + sigma_eps.T)
    w = sym_inv(sigma_eps, floor_rel) @ moments.sigma_rx @ inv_x @ x / gamma
    return WeightVector(w=w)


def fully_invested(
    moments: MomentEstimates,
    x_t: np.ndarray,
    gamma: float = 1.0,
    floor_rel: float = 1e-12,
) -> WeightVector:
    """Budget-constrained policy: GMV blended with the renormalized signal bet.

    w = (1 - kappa) * GMV + kappa * signal-tilt with
    kappa = (1/gamma) 1' Sr^{-1} Srx Sx^{-1} x, so 1'w = 1 holds exactly.
    A degenerate signal term (denominator zero, e.g. x = 0) falls back to
    the GMV weights.
    """
    x = np.asarray(x_t, dtype=float)
    inv_r = sym_inv(moments.sigma_r, floor_rel)
    ones = np.ones(moments.n_assets)
    gmv_denom = float(ones @ inv_r @ ones)
    if gmv_denom == 0.0:
        raise DivisionDegenerate("1' Sr^{-1} 1 is zero")
    gmv = inv_r @ ones / gmv_denom
    tilt_raw = inv_r @ moments.sigma_rx @ sym_inv(moments.sigma_x, floor_rel) @ x
    denom = float(ones @ tilt_raw)
    if denom == 0.0:
        return WeightVector(w=gmv)
    kappa = denom / gamma
    w = (1.0 - kappa) * gmv + kappa * tilt_raw / denom
    return WeightVector(w=w)


def weights_from_policy(policy: PolicyMatrix, x_t: np.ndarray) -> WeightVector:
    """Apply the static coefficient matrix to a signal vector: w = A' x."""
    x = np.asarray(x_t, dtype=float)
    if x.shape != (policy.a.shape[0],):
        raise ShapeMismatch(f"signal length {x.shape} does not match policy rows {policy.a.shape}")
    return WeightVector(w=policy.a.T @ x)


def normalize_gross(w):
    """Scale weights so the gross exposure sum |w_i| equals one.

    Accepts a WeightVector or a plain array and returns the same type; an
    (effectively) zero vector passes through unchanged.
    """
    if isinstance(w, WeightVector):
        return WeightVector(w=normalize_gross(w.w), date=w.date)
    arr = np.asarray(w, dtype=float)
    gross = float(np.abs(arr).sum())
    if gross <= GROSS_EPS:
        return arr.copy()
    return arr / gross


def cp_policy_from_moments(
    moments: MomentEstimates,
    gamma: float = 1.0,
    mode: str = "approx",
    k: int | None = None,
    floor_rel: float = 1e-12,
) -> PolicyMatrix:
    """Decompose, optionally truncate to k components, and build the CP policy."""
    decomp = cca_decompose(moments, floor_rel)
    if k is not None and decomp.k > 0:
        decomp = truncate(decomp, min(k, decomp.k))
    return cp_policy(decomp, gamma=gamma, mode=mode)
