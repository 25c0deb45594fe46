"""Canonical portfolios: joint moment estimation, canonical decomposition,
closed-form trading policies and walk-forward evaluation."""

__version__ = "0.1.0"

from .analytics import (
    LegDecomposition,
    PerformanceReport,
    WeightStats,
    lo_tstat,
    long_short_legs,
    performance_report,
    static_dynamic_decomp,
    weight_stats,
)
from .backtest import BacktestConfig, BacktestResult, run_backtest, sign_align
from .cca import CcaDecomposition, adjusted_cross_cov, cca_decompose, permutation_null, truncate
from .data import (
    BlockCalendar,
    DatasetId,
    ReturnPanel,
    aggregate_to_blocks,
    eligibility_mask,
    fetch_dataset,
    load_panel,
    parse_french_daily,
)
from .moments import (
    MomentEstimates,
    ShrinkageConfig,
    estimate_moments,
    lw_shrink,
    sample_moments,
    sym_inv_sqrt,
    sym_sqrt,
)
from .montecarlo import (
    CanonicalMoments,
    SyntheticMarketSpec,
    canonical_moments,
    gaussian_market,
    insample_bias_experiment,
    isserlis_variance_check,
    verify_prop4,
    wachter_bias_experiment,
)
from .policy import (
    PolicyMatrix,
    WeightVector,
    cp_policy,
    cp_policy_from_moments,
    fully_invested,
    kronecker_oracle,
    mvo_policy,
    normalize_gross,
    pp_policy,
    reg_policy,
    uni_policy,
    weights_from_policy,
)
from .signals import (
    SignalPanel,
    SignalSpec,
    average_signal_blocks,
    build_momentum_panel,
    momentum_raw,
    rank_normalize,
    stack_signals,
)

__all__ = [name for name in dir() if not name.startswith("_")]
