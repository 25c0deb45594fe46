import datetime

import numpy as np
import pytest

from canonport.backtest import BacktestConfig
from canonport.data import ReturnPanel
from canonport.moments import ShrinkageConfig


def trading_dates(n_days: int, start="1990-01-01") -> list[str]:
    d0 = datetime.date.fromisoformat(start)
    out = []
    d = d0
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += datetime.timedelta(days=1)
    return out


def synthetic_panel(n_assets=4, n_days=400, seed=0, scale=0.01, missing=()) -> ReturnPanel:
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n_days, n_assets)) * scale
    for day, asset in missing:
        values[day, asset] = np.nan
    return ReturnPanel(trading_dates(n_days), [f"A{i + 1}" for i in range(n_assets)], values)


def french_csv_text(values: np.ndarray, assets: list[str], start="19900101") -> str:
    """French-library shaped CSV: caption, header, YYYYMMDD rows in percent,
    then a decoy equal-weighted block that a correct parser must skip."""
    d = datetime.date(int(start[:4]), int(start[4:6]), int(start[6:]))
    dates = []
    while len(dates) < values.shape[0]:
        if d.weekday() < 5:
            dates.append(d.strftime("%Y%m%d"))
        d += datetime.timedelta(days=1)
    lines = [
        "This file was created from daily returns.",
        "Missing data are indicated by -99.99 or -999.",
        "",
        "  Average Value Weighted Returns -- Daily",
        "," + ",".join(assets),
    ]
    for date, row in zip(dates, values):
        cells = ["-99.99" if np.isnan(v) else f"{v * 100:.6f}" for v in row]
        lines.append(date + "," + ",".join(cells))
    lines.append("")
    lines.append("  Average Equal Weighted Returns -- Daily")
    lines.append("," + ",".join(assets))
    for date, row in zip(dates, values):
        cells = ["-99.99" if np.isnan(v) else f"{(v + 1.0) * 100:.6f}" for v in row]
        lines.append(date + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


@pytest.fixture
def small_config() -> BacktestConfig:
    return BacktestConfig(
        dataset="custom",
        policy="cp",
        k=2,
        lookback_days=(5,),
        buffer_days=1,
        window_blocks=12,
        horizon_days=5,
        shrinkage=ShrinkageConfig(delta_r=0.2, delta_x=0.9),
        history_reserve_days=0,
        sample_start=None,
        seed=7,
    )
