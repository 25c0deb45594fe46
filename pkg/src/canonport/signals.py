"""Cross-sectionally normalized momentum signals aligned to rebalance dates.

The normalization recipe: rank across assets (ties get average ranks),
divide by N, center, then divide by the sum of absolute values. The result
is dollar-neutral, has unit gross exposure and every entry in [-0.5, 0.5].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import BlockCalendar, ReturnPanel, read_matrix_csv, write_matrix_csv
from .errors import AlignmentMismatch, DegenerateInput, InsufficientHistory, MalformedHeader

GROSS_TOL = 1e-12


@dataclass
class SignalSpec:
    """Momentum signal definition: simple average daily return over
    ``lookback_days``, ending ``buffer_days`` before the rebalance date."""

    kind: str = "momentum"
    lookback_days: int = 21
    buffer_days: int = 1

    def __post_init__(self):
        if self.kind != "momentum":
            raise ValueError(f"unsupported signal kind {self.kind!r}")
        if self.lookback_days < 1:
            raise ValueError("lookback_days must be >= 1")
        if self.buffer_days < 0:
            raise ValueError("buffer_days must be >= 0")

    @property
    def history_days(self) -> int:
        return self.lookback_days + self.buffer_days

    @property
    def label(self) -> str:
        return f"mom{self.lookback_days}"


@dataclass
class SignalPanel:
    """T x (N*M) matrix of signals at rebalance dates.

    Columns are laid out in M blocks of N assets each. When ``normalized``
    is true every non-zero block has unit gross exposure and entries in
    [-0.5, 0.5]; raw (e.g. simulated) signals set it to false.
    """

    rebalance_dates: list[str]
    assets: list[str]
    signal_names: list[str]
    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        t = len(self.rebalance_dates)
        n = len(self.assets)
        m = len(self.signal_names)
        if self.values.shape != (t, n * m):
            raise ValueError(
                f"signal values shape {self.values.shape} does not match "
                f"{t} dates x {n} assets x {m} signals"
            )
        if self.normalized:
            for j in range(m):
                block = self.values[:, j * n : (j + 1) * n]
                gross = np.abs(block).sum(axis=1)
                bad = np.abs(gross - 1.0) > GROSS_TOL
                if np.any(bad & (gross > GROSS_TOL)):
                    raise ValueError(f"signal block {j} is not gross-normalized")
            if np.abs(self.values).max(initial=0.0) > 0.5 + GROSS_TOL:
                raise ValueError("normalized signals must lie in [-0.5, 0.5]")

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_signals(self) -> int:
        return len(self.signal_names)

    def block(self, m: int) -> np.ndarray:
        n = self.n_assets
        return self.values[:, m * n : (m + 1) * n]

    def write_csv(self, path) -> None:
        columns = [f"{a}#{s}" for s in self.signal_names for a in self.assets]
        with open(path, "w", newline="") as fh:
            write_matrix_csv(fh, "date", columns, self.rebalance_dates, self.values)

    @classmethod
    def read_csv(cls, path, normalized: bool = True) -> "SignalPanel":
        with open(path, newline="") as fh:
            label, columns, dates, values = read_matrix_csv(fh)
        if label != "date" or not columns or "#" not in columns[0]:
            raise MalformedHeader("not a signal panel CSV")
        assets: list[str] = []
        names: list[str] = []
        for col in columns:
            a, s = col.rsplit("#", 1)
            if s not in names:
                names.append(s)
            if a not in assets:
                assets.append(a)
        return cls(dates, assets, names, values, normalized=normalized)


def momentum_raw(
    panel: ReturnPanel,
    spec: SignalSpec,
    date: str | int,
    assets: np.ndarray | None = None,
) -> np.ndarray:
    """Average daily return over the lookback window ending before ``date``.

    ``date`` marks the rebalance boundary: the window covers the
    ``lookback_days`` trading days that end ``buffer_days`` before it, so
    the buffer days themselves are excluded. ``date`` may also be a day
    index, where ``panel.n_days`` addresses the end-of-panel boundary.
    """
    end = date if isinstance(date, int) else panel.index_of(date)
    lo = end - spec.buffer_days - spec.lookback_days
    hi = end - spec.buffer_days
    if lo < 0 or hi > panel.n_days:
        raise InsufficientHistory(
            f"need {spec.history_days} days of history before index {end}"
        )
    window = panel.values[lo:hi]
    if assets is not None:
        window = window[:, assets]
    return window.mean(axis=0)


def rank_normalize(raw: np.ndarray) -> np.ndarray:
    """Map raw signal values to centered, gross-normalized rank scores.

    Invariant under any strictly increasing transform of the input. An
    all-tied input yields the zero vector (no position) by design.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.shape[0] < 2:
        raise DegenerateInput(f"need a 1-D vector of length >= 2, got shape {raw.shape}")
    if np.any(np.isnan(raw)):
        raise DegenerateInput("raw signal contains missing values")
    scores = rankdata(raw, method="average") / raw.shape[0]
    scores = scores - scores.mean()
    gross = np.abs(scores).sum()
    if gross <= GROSS_TOL:
        return np.zeros_like(scores)
    return scores / gross


def stack_signals(panels: list[SignalPanel]) -> SignalPanel:
    """Column-block concatenation of per-signal panels into one M-signal panel."""
    if not panels:
        raise AlignmentMismatch("no panels to stack")
    first = panels[0]
    for p in panels[1:]:
        if p.rebalance_dates != first.rebalance_dates or p.assets != first.assets:
            raise AlignmentMismatch("panels differ in rebalance dates or asset sets")
    names: list[str] = []
    for p in panels:
        names.extend(p.signal_names)
    return SignalPanel(
        rebalance_dates=list(first.rebalance_dates),
        assets=list(first.assets),
        signal_names=names,
        values=np.hstack([p.values for p in panels]),
        normalized=all(p.normalized for p in panels),
    )


def average_signal_blocks(panel: SignalPanel) -> SignalPanel:
    """Equal-weighted average of the signal blocks, re-gross-normalized.

    Used to feed multi-signal inputs into methods that take a single
    signal vector (the univariate factor and mean-variance weights).
    """
    n = panel.n_assets
    avg = np.zeros((len(panel.rebalance_dates), n))
    for m in range(panel.n_signals):
        avg += panel.block(m)
    avg /= panel.n_signals
    gross = np.abs(avg).sum(axis=1, keepdims=True)
    scale = np.where(gross > GROSS_TOL, gross, 1.0)
    return SignalPanel(
        rebalance_dates=list(panel.rebalance_dates),
        assets=list(panel.assets),
        signal_names=["avg"],
        values=avg / scale,
        normalized=panel.normalized,
    )


def build_momentum_panel(
    panel: ReturnPanel,
    cal: BlockCalendar,
    specs: list[SignalSpec],
    boundaries: list[int],
    assets: np.ndarray | None = None,
) -> SignalPanel:
    """Rank-normalized momentum stack evaluated at the given block boundaries.

    ``boundaries`` are block indices; index ``cal.n_blocks`` addresses the
    end-of-calendar boundary, whose signal is computable even though no
    holding block follows.
    """
    asset_idx = np.arange(panel.n_assets) if assets is None else np.flatnonzero(assets)
    names = [s.label for s in specs]
    t = len(boundaries)
    n = asset_idx.shape[0]
    values = np.empty((t, n * len(specs)))
    dates = []
    for row, b in enumerate(boundaries):
        day = cal.boundary(b)
        dates.append(panel.dates[min(day, panel.n_days - 1)])
        for m, spec in enumerate(specs):
            raw = momentum_raw(panel, spec, day, assets=asset_idx)
            values[row, m * n : (m + 1) * n] = rank_normalize(raw)
    return SignalPanel(
        rebalance_dates=dates,
        assets=[panel.assets[i] for i in asset_idx],
        signal_names=names,
        values=values,
    )
