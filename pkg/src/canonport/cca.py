"""Canonical decomposition of the whitened cross moment.

The central object is the regularized adjusted cross-covariance
sigma_r^{-1/2} . sigma_rx . sigma_x^{-1/2}; its SVD gives the canonical
correlations and, mapped back through the inverse square roots, the
canonical directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidK, InvalidSpec, ShapeMismatch, SvdFailure
from .moments import MomentEstimates, ShrinkageConfig, estimate_moments, sym_inv_sqrt


@dataclass
class CcaDecomposition:
    """Canonical correlations and directions.

    ``s`` is sorted descending. ``u`` / ``v`` are the whitened singular
    vectors (orthonormal columns); ``q_r`` / ``q_x`` the canonical
    directions in original coordinates, i.e. q_r = sigma_r^{-1/2} u.
    """

    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    q_r: np.ndarray
    q_x: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        k = self.s.shape[0]
        for name in ("u", "v", "q_r", "q_x"):
            m = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, m)
            if m.ndim != 2 or m.shape[1] != k:
                raise ShapeMismatch(f"{name} must have {k} columns, got shape {m.shape}")
        if np.any(np.diff(self.s) > 0):
            raise ValueError("canonical correlations must be sorted descending")

    @property
    def k(self) -> int:
        return int(self.s.shape[0])


def adjusted_cross_cov(moments: MomentEstimates, floor_rel: float = 1e-12) -> np.ndarray:
    """Whitened cross moment sigma_r^{-1/2} sigma_rx sigma_x^{-1/2}."""
    wr = sym_inv_sqrt(moments.sigma_r, floor_rel)
    wx = sym_inv_sqrt(moments.sigma_x, floor_rel)
    return wr @ moments.sigma_rx @ wx


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # Deterministic orientation: largest-magnitude entry of each u column
    # positive, with v flipped jointly so u diag(s) v' is unchanged.
    for i in range(u.shape[1]):
        j = int(np.argmax(np.abs(u[:, i])))
        if u[j, i] < 0:
            u[:, i] *= -1.0
            v[:, i] *= -1.0


def cca_decompose(
    moments: MomentEstimates,
    floor_rel: float = 1e-12,
    drop_zero_tol: float = 0.0,
) -> CcaDecomposition:
    """SVD of the adjusted cross-covariance, mapped back to directions.

    ``drop_zero_tol`` > 0 discards trailing components whose singular
    value falls below tol * s_max; their directions are arbitrary and they
    contribute nothing to any policy. Regularized canonical correlations
    may exceed one; no clipping is applied.
    """
    wr = sym_inv_sqrt(moments.sigma_r, floor_rel)
    wx = sym_inv_sqrt(moments.sigma_x, floor_rel)
    adjusted = wr @ moments.sigma_rx @ wx
    try:
        u, s, vt = np.linalg.svd(adjusted, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    v = vt.T
    if drop_zero_tol > 0.0 and s.size:
        keep = s > drop_zero_tol * max(s[0], np.finfo(float).tiny)
        u, s, v = u[:, keep], s[keep], v[:, keep]
    u = np.ascontiguousarray(u)
    v = np.ascontiguousarray(v)
    _fix_signs(u, v)
    return CcaDecomposition(s=s, u=u, v=v, q_r=wr @ u, q_x=wx @ v)


def truncate(decomp: CcaDecomposition, k: int) -> CcaDecomposition:
    """Keep the k largest canonical correlations and slice all matrices."""
    if not 1 <= k <= decomp.k:
        raise InvalidK(f"k must lie in [1, {decomp.k}], got {k}")
    return CcaDecomposition(
        s=decomp.s[:k].copy(),
        u=decomp.u[:, :k].copy(),
        v=decomp.v[:, :k].copy(),
        q_r=decomp.q_r[:, :k].copy(),
        q_x=decomp.q_x[:, :k].copy(),
    )


def permutation_null(
    returns_block: np.ndarray,
    signals_block: np.ndarray,
    n_perms: int,
    seed: int,
    shrinkage: ShrinkageConfig | None = None,
    demean_returns: bool = True,
    demean_signals: bool = True,
    cross_moment: str = "centered",
) -> np.ndarray:
    """Null distribution of squared canonical correlations.

    Each replica independently shuffles the time order of every signal
    column (destroying the alignment with subsequent returns while
    preserving marginals) and reruns the full moment + decomposition
    pipeline. Returns an (n_perms, K) array with K = min(N, P); rows are
    zero-padded if a replica yields fewer components. Replica p draws from
    a generator seeded by (seed, p), so output is deterministic and
    independent of evaluation order.
    """
    if n_perms < 1:
        raise InvalidSpec(f"n_perms must be >= 1, got {n_perms}")
    r = np.asarray(returns_block, dtype=float)
    x = np.asarray(signals_block, dtype=float)
    if r.shape[0] != x.shape[0]:
        raise ShapeMismatch("returns and signals must have equal row counts")
    t = r.shape[0]
    k_full = min(r.shape[1], x.shape[1])
    out = np.zeros((n_perms, k_full))
    for p in range(n_perms):
        rng = np.random.default_rng([seed, p])
        shuffled = np.empty_like(x)
        for j in range(x.shape[1]):
            shuffled[:, j] = x[rng.permutation(t), j]
        moments = estimate_moments(
            r,
            shuffled,
            config=shrinkage,
            demean_returns=demean_returns,
            demean_signals=demean_signals,
            cross_moment=cross_moment,
        )
        s = cca_decompose(moments).s
        out[p, : s.shape[0]] = s**2
    return out
