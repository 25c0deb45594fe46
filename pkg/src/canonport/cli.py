"""Command-line front end: backtests, robustness sweeps, decomposition
diagnostics, simulations and data fetching.

Configs are flat ``key = value`` text files; unknown keys are errors. Every
run writes a manifest (config snapshot, dataset checksums, seed, version)
next to its outputs, and rerunning with the same manifest reproduces the
outputs byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .analytics import (
    long_short_legs,
    performance_report,
    static_dynamic_decomp,
    weight_stats,
)
from .backtest import BacktestConfig, BacktestResult, prepare_engine, rebalance_state, run_backtest
from .cca import permutation_null
from .data import (
    BUILTIN_DATASETS,
    BlockCalendar,
    DatasetId,
    ReturnPanel,
    dataset_checksum,
    fetch_dataset,
    load_panel,
    write_matrix_csv,
)
from .errors import CanonportError, ConfigInvalid, DivisionDegenerate, NetworkUnavailable
from .moments import ShrinkageConfig
from .signals import rank_normalize
from .montecarlo import (
    SyntheticMarketSpec,
    insample_bias_experiment,
    verify_prop4,
    wachter_bias_experiment,
)

DEFAULT_CACHE = os.path.join(os.path.expanduser("~"), ".cache", "canonport")

POLICY_ALIASES = {
    "mvo": ("mvo", "approx", None),
    "uni": ("uni", "approx", None),
    "reg": ("reg", "approx", None),
    "fully-invested": ("fi", "approx", None),
    "fi": ("fi", "approx", None),
}

CONFIG_KEYS = {
    "dataset",
    "dataset_source",
    "dataset_columns",
    "policy",
    "policy_mode",
    "k",
    "gamma",
    "lookback_days",
    "buffer_days",
    "window_blocks",
    "horizon_days",
    "delta_r",
    "delta_x",
    "eig_floor_rel",
    "demean_returns",
    "demean_signals",
    "cross_moment",
    "history_reserve_days",
    "sample_start",
    "sample_end",
    "include_final_weight",
    "seed",
}


def read_kv_config(path) -> dict[str, str]:
    """Flat key = value file; '#' starts a comment, blank lines ignored."""
    if not os.path.exists(path):
        raise ConfigInvalid(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in out:
                raise ConfigInvalid(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigInvalid(f"{key}: expected a boolean, got {value!r}")


def parse_policy_name(name: str) -> tuple[str, str, int | None]:
    """Map CLI policy names (cp2, cp-full-2, pp2, mvo, ...) to engine fields."""
    low = name.lower()
    if low in POLICY_ALIASES:
        return POLICY_ALIASES[low]
    for prefix, policy, mode in (("cp-full-", "cp", "full"), ("cp", "cp", "approx"), ("pp", "pp", "approx")):
        if low.startswith(prefix):
            rest = low[len(prefix) :]
            if rest.isdigit() and int(rest) >= 1:
                return policy, mode, int(rest)
            if rest == "":
                return policy, mode, None
    raise ConfigInvalid(f"unknown policy {name!r}")


def build_backtest_config(raw: dict[str, str], overrides: dict | None = None) -> BacktestConfig:
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = str(value)
    kwargs: dict = {}
    try:
        if "policy" in merged:
            policy, mode, k = parse_policy_name(merged["policy"])
            kwargs["policy"] = policy
            kwargs["policy_mode"] = merged.get("policy_mode", mode)
            if k is not None:
                kwargs["k"] = k
        if "policy_mode" in merged:
            kwargs["policy_mode"] = merged["policy_mode"]
        if "k" in merged:
            kwargs["k"] = int(merged["k"])
        if "gamma" in merged:
            kwargs["gamma"] = float(merged["gamma"])
        if "lookback_days" in merged:
            kwargs["lookback_days"] = tuple(
                int(v) for v in merged["lookback_days"].split(",") if v.strip()
            )
        for key in ("buffer_days", "window_blocks", "horizon_days", "history_reserve_days", "seed"):
            if key in merged:
                kwargs[key] = int(merged[key])
        for key in ("demean_returns", "demean_signals", "include_final_weight"):
            if key in merged:
                kwargs[key] = _parse_bool(merged[key], key)
        for key in ("dataset", "cross_moment", "sample_start", "sample_end"):
            if key in merged:
                kwargs[key] = merged[key] or None
        shrink_kwargs: dict = {}
        for key, name in (("delta_r", "delta_r"), ("delta_x", "delta_x")):
            if key in merged:
                value = merged[key]
                shrink_kwargs[name] = value if value == "auto" else float(value)
        if "eig_floor_rel" in merged:
            shrink_kwargs["eig_floor_rel"] = float(merged["eig_floor_rel"])
        if shrink_kwargs:
            kwargs["shrinkage"] = ShrinkageConfig(**shrink_kwargs)
        return BacktestConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(str(exc)) from exc


def dataset_from_config(raw: dict[str, str], config: BacktestConfig) -> DatasetId:
    name = config.dataset or "FF25"
    if name in BUILTIN_DATASETS and "dataset_source" not in raw:
        return DatasetId(name)
    n_columns = int(raw["dataset_columns"]) if "dataset_columns" in raw else None
    return DatasetId(name, source=raw.get("dataset_source"), n_columns=n_columns)


def config_snapshot(config: BacktestConfig) -> dict:
    snap = dataclasses.asdict(config)
    snap["lookback_days"] = list(config.lookback_days)
    return snap


def periods_per_year(horizon_days: int) -> float:
    """12 trading months at the 21-day base horizon; round(252/h) otherwise,
    matching the daily/weekly/fortnightly sweep conventions."""
    return 12.0 if horizon_days == 21 else float(round(252.0 / horizon_days))


def atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_manifest(path, config_dict: dict, checksums: dict, seed: int) -> None:
    manifest = {
        "config": config_dict,
        "dataset_checksums": checksums,
        "seed": seed,
        "tool_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True))


def manifest_config_hash(config_dict: dict) -> str:
    return hashlib.sha256(json.dumps(config_dict, sort_keys=True).encode()).hexdigest()


def align_factor_blocks(
    factors: ReturnPanel, panel: ReturnPanel, day_ranges: list[tuple[int, int]]
) -> np.ndarray | None:
    """Compound factor daily rows over the panel's holding-day ranges.

    Factor rows are matched to panel dates exactly; any missing date makes
    the alignment fail (returns None) rather than silently shifting.
    """
    index = {d: i for i, d in enumerate(factors.dates)}
    out = np.empty((len(day_ranges), factors.n_assets))
    for row, (lo, hi) in enumerate(day_ranges):
        try:
            rows = [index[panel.dates[i]] for i in range(lo, hi)]
        except KeyError:
            return None
        chunk = factors.values[rows]
        if np.isnan(chunk).any():
            return None
        out[row] = np.prod(1.0 + chunk, axis=0) - 1.0
    return out


def _result_csv_rows(result: BacktestResult) -> tuple[list[str], np.ndarray]:
    dates = list(result.decision_dates)
    weights = result.weights
    if result.final_weight is not None:
        dates.append(result.final_decision_date)
        weights = result.all_weights
    return dates, weights


def build_report(
    config: BacktestConfig,
    result: BacktestResult,
    factor_blocks: np.ndarray | None,
    dataset_name: str,
) -> dict:
    ppy = periods_per_year(config.horizon_days)
    perf = performance_report(result.realized_returns, factor_blocks, ppy)
    stats = weight_stats(result.all_weights)
    try:
        static, dynamic, share = static_dynamic_decomp(result.weights, result.asset_block_returns)
    except DivisionDegenerate:
        static = dynamic = 0.0
        share = None
    legs = long_short_legs(result.weights, result.asset_block_returns)
    record = {
        "dataset": dataset_name,
        "policy": config.label,
        "n_returns": result.n_returns,
        "n_weights": result.n_weights,
        "periods_per_year": ppy,
        "mean_ann_pct": perf.mean_ann,
        "sd_ann_pct": perf.sd_ann,
        "sharpe_ann": perf.sharpe_ann,
        "sharpe_t": perf.sharpe_t,
        "alpha_ann_pct": perf.alpha_ann,
        "beta_uni": perf.beta_uni,
        "idio_vol_ann_pct": perf.idio_vol_ann,
        "ir_ann": perf.ir_ann,
        "ir_t": perf.ir_t,
        "turnover": stats.turnover,
        "prop_leverage": stats.prop_leverage,
        "sum_neg": stats.sum_neg,
        "min_w": stats.min_w,
        "max_w": stats.max_w,
        "sd_w": stats.sd_w,
        "static_ann_pct": static * ppy * 100.0,
        "dynamic_ann_pct": dynamic * ppy * 100.0,
        "share_dynamic": share,
        "long_leg_ann_pct": legs.long_mean * ppy * 100.0,
        "short_leg_ann_pct": legs.short_mean * ppy * 100.0,
        "leverage_mean": legs.leverage_mean,
    }
    return record


def _run_configured_backtest(
    raw_cfg: dict[str, str],
    config: BacktestConfig,
    cache_dir: str,
    offline: bool,
) -> tuple[BacktestResult, dict, np.ndarray | None, DatasetId]:
    dataset = dataset_from_config(raw_cfg, config)
    panel = load_panel(dataset, cache_dir, offline=offline)
    result = run_backtest(config, panel)
    checksums = {dataset.name: dataset_checksum(dataset, cache_dir)}

    factor_blocks = None
    if config.policy not in ("uni",):
        try:
            factors = load_panel(DatasetId("FF5_FACTORS"), cache_dir, offline=offline)
            factors = factors.restrict_dates(config.sample_start, config.sample_end)
            work = panel.restrict_dates(config.sample_start, config.sample_end)
            cal = BlockCalendar.regular(work.n_days, config.horizon_days)
            b_first = cal.n_blocks - result.n_returns
            ranges = [cal.blocks[b] for b in range(b_first, cal.n_blocks)]
            ff5 = align_factor_blocks(factors, work, ranges)
            checksums["FF5_FACTORS"] = dataset_checksum(DatasetId("FF5_FACTORS"), cache_dir)
            if ff5 is not None:
                uni_config = dataclasses.replace(config, policy="uni", record_decomp=False)
                uni_result = run_backtest(uni_config, panel)
                if uni_result.n_returns == result.n_returns:
                    # drop the RF column; benchmark = 5 factors + univariate factor
                    five = ff5[:, :5]
                    factor_blocks = np.column_stack([five, uni_result.realized_returns])
        except (NetworkUnavailable, CanonportError):
            factor_blocks = None
    return result, checksums, factor_blocks, dataset


def cmd_backtest(args) -> int:
    raw_cfg = read_kv_config(args.config)
    overrides = {"policy": args.policy, "k": args.k, "gamma": args.gamma, "seed": args.seed}
    if args.policy_mode:
        overrides["policy_mode"] = args.policy_mode
    config = build_backtest_config(raw_cfg, overrides)
    result, checksums, factor_blocks, dataset = _run_configured_backtest(
        raw_cfg, config, args.cache_dir, args.offline
    )
    os.makedirs(args.out, exist_ok=True)
    dates, weights = _result_csv_rows(result)
    with open(os.path.join(args.out, "weights.csv"), "w", newline="") as fh:
        write_matrix_csv(fh, "date", result.assets, dates, weights)
    with open(os.path.join(args.out, "returns.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "holding_end", "return"])
        for d, e, r in zip(result.decision_dates, result.holding_end_dates, result.realized_returns):
            writer.writerow([d, e, repr(float(r))])
    report = build_report(config, result, factor_blocks, dataset.name)
    atomic_write_text(
        os.path.join(args.out, "report.json"), json.dumps(report, indent=2, sort_keys=True)
    )
    with open(os.path.join(args.out, "report.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(report))
        writer.writeheader()
        writer.writerow(report)
    write_manifest(
        os.path.join(args.out, "manifest.json"), config_snapshot(config), checksums, config.seed
    )
    print(f"{config.label} on {dataset.name}: {result.n_returns} returns, "
          f"{result.n_weights} weight rows -> {args.out}")
    return 0


def _parse_axes(axes: list[str]) -> list[tuple[str, list[str]]]:
    out = []
    for ax in axes:
        if "=" not in ax:
            raise ConfigInvalid(f"--axis expects key=v1,v2,..., got {ax!r}")
        key, values = ax.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigInvalid(f"unknown sweep axis {key!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigInvalid(f"axis {key!r} has no values")
        out.append((key, vals))
    return out


def _sweep_cell(args, raw_cfg, i, cell) -> dict:
    merged = dict(raw_cfg)
    merged.update(cell)
    config = build_backtest_config(merged)
    tag = "base" if not cell else "_".join(f"{k}-{v.replace(',', '+')}" for k, v in cell.items())
    cell_dir = os.path.join(args.out, f"cell_{i:03d}_{tag}")
    os.makedirs(cell_dir, exist_ok=True)
    manifest_path = os.path.join(cell_dir, "manifest.json")
    report_path = os.path.join(cell_dir, "report.json")
    snap = config_snapshot(config)
    if args.resume and os.path.exists(manifest_path) and os.path.exists(report_path):
        with open(manifest_path) as fh:
            previous = json.load(fh)
        if manifest_config_hash(previous.get("config", {})) == manifest_config_hash(snap):
            with open(report_path) as fh:
                return json.load(fh)
    result, checksums, factor_blocks, dataset = _run_configured_backtest(
        merged, config, args.cache_dir, args.offline
    )
    report = build_report(config, result, factor_blocks, dataset.name)
    for key, value in cell.items():
        report[f"axis_{key}"] = value
    atomic_write_text(report_path, json.dumps(report, indent=2, sort_keys=True))
    write_manifest(manifest_path, snap, checksums, config.seed)
    return report


def cmd_sweep(args) -> int:
    raw_cfg = read_kv_config(args.config)
    axes = _parse_axes(args.axis or [])
    cells: list[dict[str, str]] = [{}]
    for key, values in axes:
        cells = [dict(cell, **{key: v}) for cell in cells for v in values]
    os.makedirs(args.out, exist_ok=True)
    # configs are validated up front so a bad axis value fails before any work
    for cell in cells:
        build_backtest_config({**raw_cfg, **cell})
    jobs = max(1, args.jobs or 1)
    if jobs == 1:
        rows = [_sweep_cell(args, raw_cfg, i, cell) for i, cell in enumerate(cells)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(lambda ic: _sweep_cell(args, raw_cfg, *ic), enumerate(cells))
            )
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(os.path.join(args.out, "report.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep: {len(rows)} cells -> {args.out}")
    return 0


def cmd_cca_analyze(args) -> int:
    raw_cfg = read_kv_config(args.config)
    config = build_backtest_config(raw_cfg, {"policy": "cp", "seed": args.seed})
    config = dataclasses.replace(config, record_decomp=True)
    dataset = dataset_from_config(raw_cfg, config)
    panel = load_panel(dataset, args.cache_dir, offline=args.offline)
    result = run_backtest(config, panel)
    os.makedirs(args.out, exist_ok=True)
    snaps = result.snapshots or []
    k_max = max((snap.s2.shape[0] for snap in snaps), default=0)
    s2 = np.full((len(snaps), k_max), np.nan)
    for i, snap in enumerate(snaps):
        s2[i, : snap.s2.shape[0]] = snap.s2
    with open(os.path.join(args.out, "s2.csv"), "w", newline="") as fh:
        write_matrix_csv(
            fh, "date", [f"c{i + 1}" for i in range(k_max)], result.decision_dates[: len(snaps)], s2
        )
    top = np.zeros((len(snaps), panel.n_assets))
    for i, snap in enumerate(snaps):
        top[i, snap.assets] = snap.decomp.q_r[:, 0]
    with open(os.path.join(args.out, "top_direction.csv"), "w", newline="") as fh:
        write_matrix_csv(fh, "date", result.assets, result.decision_dates[: len(snaps)], top)

    if args.perms > 0 and snaps:
        ctx = prepare_engine(config, panel)
        b_last = ctx.cal.n_blocks - 1
        state = rebalance_state(ctx, config, b_last)
        if state.moments is not None:
            window = config.window_blocks
            sig = np.asarray(
                [
                    np.concatenate(
                        [rank_normalize(table[j][state.asset_idx]) for table in ctx.raw_tables]
                    )
                    for j in range(b_last - window + 1, b_last)
                ]
            )
            rets = ctx.block_returns.values[b_last - window + 1 : b_last][:, state.asset_idx]
            null = permutation_null(
                rets,
                sig,
                n_perms=args.perms,
                seed=config.seed,
                shrinkage=config.shrinkage,
                demean_returns=config.demean_returns,
                demean_signals=config.demean_signals,
                cross_moment=config.cross_moment,
            )
            qs = [0.05, 0.25, 0.5, 0.75, 0.95]
            quant = np.quantile(null, qs, axis=0)
            with open(os.path.join(args.out, "null_quantiles.csv"), "w", newline="") as fh:
                write_matrix_csv(
                    fh,
                    "quantile",
                    [f"c{i + 1}" for i in range(null.shape[1])],
                    [str(q) for q in qs],
                    quant,
                )
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        config_snapshot(config),
        {dataset.name: dataset_checksum(dataset, args.cache_dir)},
        config.seed,
    )
    print(f"cca-analyze: {len(snaps)} dates -> {args.out}")
    return 0


SIM_KEYS = {
    "n_assets",
    "n_signals",
    "n_periods",
    "target_s",
    "mu_r",
    "mu_x",
    "seed",
    "draws",
    "reps",
    "gamma",
    "t",
    "ratios",
}


def _sim_spec(raw: dict[str, str]) -> dict:
    unknown = set(raw) - SIM_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown simulation keys: {', '.join(sorted(unknown))}")
    out: dict = {}
    try:
        for key in ("n_assets", "n_signals", "n_periods", "seed", "draws", "reps", "t"):
            if key in raw:
                out[key] = int(raw[key])
        if "gamma" in raw:
            out["gamma"] = float(raw["gamma"])
        if "target_s" in raw:
            out["target_s"] = tuple(float(v) for v in raw["target_s"].split(",") if v.strip())
        for key in ("mu_r", "mu_x"):
            if key in raw:
                out[key] = np.array([float(v) for v in raw[key].split(",") if v.strip()])
        if "ratios" in raw:
            pairs = []
            for tok in raw["ratios"].split(","):
                tok = tok.strip()
                if not tok:
                    continue
                a, b = tok.split(":")
                pairs.append((float(a), float(b)))
            out["ratios"] = pairs
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    return out


def cmd_simulate(args) -> int:
    raw = read_kv_config(args.spec) if args.spec else {}
    params = _sim_spec(raw)
    if args.seed is not None:
        params["seed"] = args.seed
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"{args.experiment}.csv")
    if args.experiment == "prop4":
        spec = SyntheticMarketSpec(
            n_assets=params.get("n_assets", 3),
            n_signals=params.get("n_signals", 1),
            n_periods=params.get("n_periods", 1),
            target_s=params.get("target_s", (0.5,)),
            mu_r=params.get("mu_r"),
            mu_x=params.get("mu_x"),
            seed=params.get("seed", 0),
        )
        report = verify_prop4(spec, params.get("draws", 100_000), params.get("gamma", 1.0))
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["component", "s", "predicted_mean", "empirical_mean", "se_mean",
                 "predicted_var", "empirical_var", "se_var"]
            )
            for i in range(report.s.shape[0]):
                writer.writerow(
                    [i + 1, report.s[i], report.pred_mean[i], report.emp_mean[i],
                     report.se_mean[i], report.pred_var[i], report.emp_var[i], report.se_var[i]]
                )
            writer.writerow(
                ["portfolio", "", report.portfolio_pred_mean, report.portfolio_emp_mean,
                 report.portfolio_se_mean, report.portfolio_pred_var,
                 report.portfolio_emp_var, ""]
            )
    elif args.experiment == "wachter":
        cells = wachter_bias_experiment(
            params.get("ratios", [(0.03, 0.06), (0.1, 0.2), (0.3, 0.6)]),
            params.get("t", 100),
            params.get("reps", 100),
            params.get("seed", 0),
        )
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["n_over_t", "m_over_t", "n", "m", "t", "reps", "mean_s", "se_mean_s",
                 "mean_max_s", "se_mean_max_s", "q05", "q50", "q95"]
            )
            for c in cells:
                writer.writerow(
                    [c.n_over_t, c.m_over_t, c.n, c.m, c.t, c.reps, c.mean_s, c.se_mean_s,
                     c.mean_max_s, c.se_mean_max_s,
                     c.quantiles[0.05], c.quantiles[0.5], c.quantiles[0.95]]
                )
    elif args.experiment == "bias":
        spec = SyntheticMarketSpec(
            n_assets=params.get("n_assets", 5),
            n_signals=params.get("n_signals", 1),
            n_periods=params.get("n_periods", 60),
            target_s=params.get("target_s", (0.3, 0.3, 0.3, 0.3, 0.3)),
            seed=params.get("seed", 0),
        )
        report = insample_bias_experiment(spec, params.get("reps", 200))
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["mean_insample", "se_insample", "mean_outsample", "se_outsample", "reps"]
            )
            writer.writerow(
                [report.mean_insample, report.se_insample, report.mean_outsample,
                 report.se_outsample, report.reps]
            )
    else:
        raise ConfigInvalid(f"unknown experiment {args.experiment!r}")
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        {"experiment": args.experiment, **{k: str(v) for k, v in raw.items()}},
        {},
        params.get("seed", 0),
    )
    print(f"simulate {args.experiment} -> {out_path}")
    return 0


def cmd_dump_moments(args) -> int:
    raw_cfg = read_kv_config(args.config)
    config = build_backtest_config(raw_cfg, {"seed": args.seed})
    dataset = dataset_from_config(raw_cfg, config)
    panel = load_panel(dataset, args.cache_dir, offline=args.offline)
    ctx = prepare_engine(config, panel)
    b = args.block if args.block is not None else ctx.cal.n_blocks - 1
    state = rebalance_state(ctx, config, b)
    if state.moments is None:
        print("no eligible universe at that boundary", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    names = [ctx.panel.assets[i] for i in state.asset_idx]
    sig_cols = [f"s{i + 1}" for i in range(state.moments.n_signal_cols)]
    for fname, matrix, cols in (
        ("sigma_r.csv", state.moments.sigma_r, names),
        ("sigma_x.csv", state.moments.sigma_x, sig_cols),
        ("sigma_rx.csv", state.moments.sigma_rx, sig_cols),
    ):
        with open(os.path.join(args.out, fname), "w", newline="") as fh:
            rows = names if fname != "sigma_x.csv" else sig_cols
            write_matrix_csv(fh, "row", cols, rows, matrix)
    with open(os.path.join(args.out, "means.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "name", "value"])
        for name, value in zip(names, state.moments.mu_r):
            writer.writerow(["mu_r", name, repr(float(value))])
        for name, value in zip(sig_cols, state.moments.mu_x):
            writer.writerow(["mu_x", name, repr(float(value))])
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        {**config_snapshot(config), "dump_block": b},
        {dataset.name: dataset_checksum(dataset, args.cache_dir)},
        config.seed,
    )
    print(f"dump-moments at block {b} ({state.decision_date}) -> {args.out}")
    return 0


def cmd_fetch(args) -> int:
    names = list(BUILTIN_DATASETS) if args.all else [args.dataset]
    for name in names:
        dataset = DatasetId(name)
        blob = fetch_dataset(dataset, args.cache_dir, offline=args.offline)
        print(f"{name}: {len(blob)} bytes cached")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="canonport", description=__doc__)
    parser.add_argument(
        "--cache-dir", default=os.environ.get("CANONPORT_CACHE", DEFAULT_CACHE)
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--offline", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backtest", help="run one walk-forward backtest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--policy", default=None)
    p.add_argument("--policy-mode", dest="policy_mode", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("sweep", help="run a grid of backtests")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="sweep")
    p.add_argument("--axis", action="append", default=[])
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cca-analyze", help="per-date canonical correlations and nulls")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="cca")
    p.add_argument("--perms", type=int, default=200)
    p.set_defaults(func=cmd_cca_analyze)

    p = sub.add_parser("simulate", help="synthetic-market estimator diagnostics")
    p.add_argument("--experiment", required=True, choices=["prop4", "wachter", "bias"])
    p.add_argument("--spec", default=None)
    p.add_argument("--out", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dump-moments", help="write one rebalance's moment matrices")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="moments")
    p.add_argument("--block", type=int, default=None)
    p.set_defaults(func=cmd_dump_moments)

    p = sub.add_parser("fetch", help="download datasets into the cache")
    p.add_argument("--dataset", default="FF25", choices=list(BUILTIN_DATASETS))
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except CanonportError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
