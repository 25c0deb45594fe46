"""Walk-forward backtest engine.

Per rebalance boundary: build the eligible universe, estimate shrunk
moments on the trailing window of non-overlapping block returns paired
with lagged signals, compute the selected policy, hold for one block and
record gross-normalized weights plus the realized portfolio return.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cca import CcaDecomposition, cca_decompose, truncate
from .data import BlockCalendar, ReturnPanel, aggregate_to_blocks, complete_day_mask
from .errors import CanonportError, InsufficientData, ShapeMismatch
from .moments import MomentEstimates, ShrinkageConfig, sample_moments, shrink_moments
from .policy import (
    cp_policy,
    fully_invested,
    mvo_policy,
    normalize_gross,
    pp_policy,
    reg_policy,
    uni_policy,
    weights_from_policy,
)
from .signals import SignalSpec, rank_normalize

POLICIES = ("cp", "pp", "mvo", "uni", "reg", "fi")


@dataclass
class BacktestConfig:
    dataset: str = "FF25"
    policy: str = "cp"
    policy_mode: str = "approx"  # cp only: 'approx' or 'full'
    k: int = 2
    gamma: float = 1.0
    lookback_days: tuple[int, ...] = (21,)
    buffer_days: int = 1
    window_blocks: int = 120
    horizon_days: int = 21
    shrinkage: ShrinkageConfig = field(default_factory=ShrinkageConfig)
    demean_returns: bool = True
    demean_signals: bool = True
    cross_moment: str = "centered"
    # Days of daily history reserved before the estimation window so every
    # momentum variant in the study shares one out-of-sample period
    # (longest lookback 252 plus the one-day buffer).
    history_reserve_days: int = 253
    sample_start: str | None = "1963-07-01"
    sample_end: str | None = None
    include_final_weight: bool = True
    record_decomp: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.policy_mode not in ("approx", "full"):
            raise ValueError(f"policy_mode must be 'approx' or 'full', got {self.policy_mode!r}")
        if self.window_blocks < 2:
            raise ValueError("window_blocks must be >= 2")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if isinstance(self.lookback_days, int):
            self.lookback_days = (self.lookback_days,)
        else:
            self.lookback_days = tuple(int(v) for v in self.lookback_days)
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def signal_specs(self) -> list[SignalSpec]:
        return [
            SignalSpec(lookback_days=lb, buffer_days=self.buffer_days)
            for lb in self.lookback_days
        ]

    @property
    def label(self) -> str:
        if self.policy == "cp":
            base = f"CP{self.k}"
            return base + (" (Full)" if self.policy_mode == "full" else "")
        if self.policy == "pp":
            return f"PP{self.k}"
        return {"mvo": "MVO", "uni": "UNI", "reg": "REG", "fi": "FI"}[self.policy]


@dataclass
class DecompSnapshot:
    """Per-rebalance canonical structure kept for diagnostics."""

    s2: np.ndarray  # squared canonical correlations, full spectrum
    decomp: CcaDecomposition  # truncated to the policy's k
    assets: np.ndarray  # column indices of the eligible universe


@dataclass
class BacktestResult:
    """Weights and realized returns, one row per rebalance.

    ``weights`` rows pair one-to-one with ``realized_returns``; the weight
    chosen at the final boundary (which has no subsequent complete block)
    is exposed separately as ``final_weight`` so both the return count and
    the weight count used in the tables are available.
    """

    decision_dates: list[str]
    holding_end_dates: list[str]
    assets: list[str]
    weights: np.ndarray
    realized_returns: np.ndarray
    asset_block_returns: np.ndarray  # realized per-asset block returns, NaN if ineligible
    final_weight: np.ndarray | None = None
    final_decision_date: str | None = None
    eligible_counts: np.ndarray | None = None
    snapshots: list[DecompSnapshot] | None = None

    def __post_init__(self):
        if self.weights.shape[0] != self.realized_returns.shape[0]:
            raise ValueError("weights and realized_returns must have equal row counts")

    @property
    def n_returns(self) -> int:
        return int(self.realized_returns.shape[0])

    @property
    def n_weights(self) -> int:
        return self.n_returns + (1 if self.final_weight is not None else 0)

    @property
    def all_weights(self) -> np.ndarray:
        """Weight rows including the final no-return rebalance, if recorded."""
        if self.final_weight is None:
            return self.weights
        return np.vstack([self.weights, self.final_weight])


def sign_align(current: CcaDecomposition, previous: CcaDecomposition) -> CcaDecomposition:
    """Flip canonical components whose direction reversed since the previous date.

    Column i of (u, v, q_r, q_x) is jointly negated when the cosine
    similarity of q_r with the previous date's q_r is negative; exact
    orthogonality is left unflipped. Joint flips leave every policy
    matrix unchanged.
    """
    if current.q_r.shape != previous.q_r.shape:
        raise ShapeMismatch(
            f"decomposition shapes differ: {current.q_r.shape} vs {previous.q_r.shape}"
        )
    u = current.u.copy()
    v = current.v.copy()
    q_r = current.q_r.copy()
    q_x = current.q_x.copy()
    for i in range(current.k):
        if float(q_r[:, i] @ previous.q_r[:, i]) < 0.0:
            u[:, i] *= -1.0
            v[:, i] *= -1.0
            q_r[:, i] *= -1.0
            q_x[:, i] *= -1.0
    return CcaDecomposition(s=current.s.copy(), u=u, v=v, q_r=q_r, q_x=q_x)


def first_rebalance_block(config: BacktestConfig) -> int:
    """Smallest block index with a full estimation window and signal history.

    The oldest in-window signal is evaluated at the boundary after the
    window's first block, so it reaches lookback + buffer days back from
    there; the history reserve is applied the same way.
    """
    lb = config.horizon_days
    need = max([s.history_days for s in config.signal_specs] + [config.history_reserve_days])
    return config.window_blocks - 1 + max(1, math.ceil(need / lb))


def _raw_momentum_table(panel: ReturnPanel, cal: BlockCalendar, spec: SignalSpec) -> np.ndarray:
    """Raw momentum per (boundary, asset); NaN where history is short or missing.

    Boundary j is the start of block j; row cal.n_blocks is the
    end-of-calendar boundary.
    """
    vals = panel.values
    filled = np.nan_to_num(vals, nan=0.0)
    csum = np.vstack([np.zeros(panel.n_assets), np.cumsum(filled, axis=0)])
    nans = np.vstack([np.zeros(panel.n_assets), np.cumsum(np.isnan(vals), axis=0)])
    out = np.full((cal.n_blocks + 1, panel.n_assets), np.nan)
    for j in range(cal.n_blocks + 1):
        end = cal.boundary(j)
        lo = end - spec.buffer_days - spec.lookback_days
        hi = end - spec.buffer_days
        if lo < 0 or hi > panel.n_days:
            continue
        bad = (nans[hi] - nans[lo]) > 0
        mean = (csum[hi] - csum[lo]) / spec.lookback_days
        out[j] = np.where(bad, np.nan, mean)
    return out


@dataclass
class EngineContext:
    """Precomputed panel-level state shared by every rebalance."""

    panel: ReturnPanel
    cal: BlockCalendar
    block_returns: ReturnPanel
    raw_tables: list[np.ndarray]
    prefix_days: int
    b_first: int


@dataclass
class RebalanceState:
    """Inputs actually used by the policies at one boundary."""

    block: int
    decision_date: str
    asset_idx: np.ndarray
    moments: MomentEstimates | None
    moments_pp: MomentEstimates | None
    x_live: np.ndarray | None
    x_live_avg: np.ndarray | None


def prepare_engine(config: BacktestConfig, panel: ReturnPanel) -> EngineContext:
    if config.sample_start or config.sample_end:
        panel = panel.restrict_dates(config.sample_start, config.sample_end)
    cal = BlockCalendar.regular(panel.n_days, config.horizon_days)
    b_first = first_rebalance_block(config)
    if cal.n_blocks <= b_first:
        raise InsufficientData(f"panel supplies {cal.n_blocks} blocks; need more than {b_first}")
    specs = config.signal_specs
    return EngineContext(
        panel=panel,
        cal=cal,
        block_returns=aggregate_to_blocks(panel, cal),
        raw_tables=[_raw_momentum_table(panel, cal, s) for s in specs],
        prefix_days=max(s.history_days for s in specs),
        b_first=b_first,
    )


def _signal_rows(
    ctx: EngineContext, boundaries, asset_idx: np.ndarray
) -> np.ndarray:
    """Rank-normalized signal rows (one per boundary) for the given universe."""
    n = asset_idx.shape[0]
    m = len(ctx.raw_tables)
    out = np.empty((len(boundaries), n * m))
    for row, j in enumerate(boundaries):
        for s, table in enumerate(ctx.raw_tables):
            out[row, s * n : (s + 1) * n] = rank_normalize(table[j][asset_idx])
    return out


def rebalance_state(ctx: EngineContext, config: BacktestConfig, b: int) -> RebalanceState:
    """Universe, moments and live signals for the boundary of block ``b``."""
    panel, cal = ctx.panel, ctx.cal
    window = config.window_blocks
    if not ctx.b_first <= b <= cal.n_blocks:
        raise InsufficientData(
            f"block {b} is outside the tradeable range [{ctx.b_first}, {cal.n_blocks}]"
        )
    has_holding = b < cal.n_blocks
    day_b = cal.boundary(b)
    # full lookback window plus whatever signal history reaches past it
    lo = cal.boundary(b - window) + min(0, config.horizon_days - ctx.prefix_days)
    hi = cal.boundary(b + 1) if has_holding else day_b
    asset_idx = np.flatnonzero(complete_day_mask(panel, lo, hi))
    state = RebalanceState(
        block=b,
        decision_date=panel.dates[day_b - 1],
        asset_idx=asset_idx,
        moments=None,
        moments_pp=None,
        x_live=None,
        x_live_avg=None,
    )
    if asset_idx.shape[0] < 2:
        return state
    # the signal at boundary j predicts block j; pairing those for
    # j = b-window+1 .. b-1 leaves window - 1 usable rows, and the live
    # signal sits at boundary b
    sig_rows = _signal_rows(ctx, range(b - window + 1, b + 1), asset_idx)
    ret_rows = ctx.block_returns.values[b - window + 1 : b][:, asset_idx]
    x_window, x_live = sig_rows[:-1], sig_rows[-1]
    state.moments = shrink_moments(
        sample_moments(
            ret_rows,
            x_window,
            demean_returns=config.demean_returns,
            demean_signals=config.demean_signals,
            cross_moment=config.cross_moment,
        ),
        config.shrinkage,
        returns_obs=ret_rows - ret_rows.mean(axis=0) if config.demean_returns else ret_rows,
        signals_obs=x_window - x_window.mean(axis=0) if config.demean_signals else x_window,
    )
    if config.policy == "pp":
        ret_cs = ret_rows - ret_rows.mean(axis=1, keepdims=True)
        state.moments_pp = sample_moments(
            ret_cs,
            x_window,
            demean_returns=config.demean_returns,
            demean_signals=config.demean_signals,
            cross_moment=config.cross_moment,
        )
    n_sub = asset_idx.shape[0]
    state.x_live = x_live
    if len(ctx.raw_tables) > 1:
        state.x_live_avg = normalize_gross(x_live.reshape(len(ctx.raw_tables), n_sub).mean(axis=0))
    else:
        state.x_live_avg = x_live.copy()
    return state


def _policy_weights(
    config: BacktestConfig, state: RebalanceState
) -> tuple[np.ndarray, CcaDecomposition | None]:
    floor = config.shrinkage.eig_floor_rel
    moments = state.moments
    decomp = None
    if config.policy == "cp":
        decomp = cca_decompose(moments, floor)
        if decomp.k == 0:
            return np.zeros(moments.n_assets), None
        decomp = truncate(decomp, min(config.k, decomp.k))
        w = weights_from_policy(cp_policy(decomp, config.gamma, config.policy_mode), state.x_live).w
    elif config.policy == "pp":
        k = min(config.k, *state.moments_pp.sigma_rx.shape)
        w = weights_from_policy(pp_policy(state.moments_pp, k, config.gamma), state.x_live).w
    elif config.policy == "mvo":
        w = mvo_policy(moments.sigma_r, state.x_live_avg, config.gamma, floor).w
    elif config.policy == "uni":
        w = uni_policy(state.x_live_avg).w
    elif config.policy == "reg":
        w = reg_policy(moments, state.x_live, config.gamma, floor).w
    else:  # fi keeps its budget constraint, so it is not gross-normalized
        return fully_invested(moments, state.x_live, config.gamma, floor).w, None
    return normalize_gross(w), decomp


def run_backtest(config: BacktestConfig, panel: ReturnPanel) -> BacktestResult:
    """Run the walk-forward loop over every tradeable block boundary.

    Deterministic given the config and panel. Estimation at boundary b
    uses the window of blocks [b - window, b); its block returns are
    paired with the signals observed one block earlier, giving
    window - 1 usable pairs.
    """
    ctx = prepare_engine(config, panel)
    panel = ctx.panel
    cal = ctx.cal
    n_assets = panel.n_assets
    last = cal.n_blocks + (1 if config.include_final_weight else 0)
    decision_dates: list[str] = []
    holding_end_dates: list[str] = []
    weight_rows: list[np.ndarray] = []
    realized: list[float] = []
    asset_rows: list[np.ndarray] = []
    eligible_counts: list[int] = []
    snapshots: list[DecompSnapshot] = []
    final_weight = None
    final_date = None

    for b in range(ctx.b_first, last):
        try:
            state = rebalance_state(ctx, config, b)
            asset_idx = state.asset_idx
            w_full = np.zeros(n_assets)
            decomp = None
            if state.moments is not None:
                w_sub, decomp = _policy_weights(config, state)
                w_full[asset_idx] = w_sub
        except CanonportError as exc:
            when = panel.dates[min(cal.boundary(b), panel.n_days) - 1]
            raise type(exc)(f"rebalance at block {b} ({when}): {exc}") from exc

        if b < cal.n_blocks:
            decision_dates.append(state.decision_date)
            holding_end_dates.append(panel.dates[cal.boundary(b + 1) - 1])
            weight_rows.append(w_full)
            hold = ctx.block_returns.values[b]
            realized.append(float(w_full[asset_idx] @ hold[asset_idx]) if asset_idx.size else 0.0)
            row = np.full(n_assets, np.nan)
            row[asset_idx] = hold[asset_idx]
            asset_rows.append(row)
            eligible_counts.append(int(asset_idx.shape[0]))
            if config.record_decomp and decomp is not None:
                full_s = cca_decompose(state.moments, config.shrinkage.eig_floor_rel).s
                snapshots.append(DecompSnapshot(s2=full_s**2, decomp=decomp, assets=asset_idx))
        else:
            final_weight = w_full
            final_date = state.decision_date

    if config.record_decomp and snapshots:
        aligned = [snapshots[0]]
        for snap in snapshots[1:]:
            prev = aligned[-1]
            if snap.decomp.q_r.shape == prev.decomp.q_r.shape:
                snap = replace(snap, decomp=sign_align(snap.decomp, prev.decomp))
            aligned.append(snap)
        snapshots = aligned

    return BacktestResult(
        decision_dates=decision_dates,
        holding_end_dates=holding_end_dates,
        assets=list(panel.assets),
        weights=np.array(weight_rows) if weight_rows else np.zeros((0, n_assets)),
        realized_returns=np.array(realized),
        asset_block_returns=np.array(asset_rows) if asset_rows else np.zeros((0, n_assets)),
        final_weight=final_weight,
        final_decision_date=final_date,
        eligible_counts=np.array(eligible_counts, dtype=int),
        snapshots=snapshots if config.record_decomp else None,
    )
