import csv
import json

import numpy as np
import pytest

from canonport.cli import main, parse_policy_name, periods_per_year, read_kv_config
from canonport.errors import ConfigInvalid

from conftest import french_csv_text


@pytest.fixture
def workspace(tmp_path):
    """Synthetic French-format dataset plus a matching config file."""
    rng = np.random.default_rng(42)
    n_days, n_assets = 420, 4
    values = rng.standard_normal((n_days, n_assets)) * 0.01
    raw = tmp_path / "custom.csv"
    raw.write_text(french_csv_text(values, [f"P{i + 1}" for i in range(n_assets)]))
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "\n".join(
            [
                "dataset = synthetic",
                f"dataset_source = {raw}",
                f"dataset_columns = {n_assets}",
                "policy = cp2",
                "lookback_days = 5",
                "window_blocks = 12",
                "horizon_days = 5",
                "delta_r = 0.2",
                "delta_x = 0.9",
                "history_reserve_days = 0",
                "sample_start =",
                "seed = 3",
            ]
        )
        + "\n"
    )
    return tmp_path, cfg


def run_cli(tmp_path, *argv):
    return main(["--cache-dir", str(tmp_path / "cache"), *argv])


def test_parse_policy_names():
    assert parse_policy_name("cp2") == ("cp", "approx", 2)
    assert parse_policy_name("cp-full-2") == ("cp", "full", 2)
    assert parse_policy_name("pp3") == ("pp", "approx", 3)
    assert parse_policy_name("mvo") == ("mvo", "approx", None)
    assert parse_policy_name("fully-invested") == ("fi", "approx", None)
    with pytest.raises(ConfigInvalid):
        parse_policy_name("nope")


def test_periods_per_year_sweep_values():
    assert periods_per_year(21) == 12.0
    assert periods_per_year(1) == 252.0
    assert periods_per_year(5) == 50.0
    assert periods_per_year(10) == 25.0


def test_read_kv_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("a = 1\n# comment\nb = two  # trailing\n")
    assert read_kv_config(path) == {"a": "1", "b": "two"}
    path.write_text("a = 1\na = 2\n")
    with pytest.raises(ConfigInvalid):
        read_kv_config(path)


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n")
    code = run_cli(tmp_path, "backtest", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "no_such_key" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    code = run_cli(tmp_path, "backtest", "--config", str(tmp_path / "absent.cfg"))
    assert code == 2


def test_backtest_end_to_end(workspace, capsys):
    tmp_path, cfg = workspace
    out = tmp_path / "out"
    code = run_cli(tmp_path, "backtest", "--config", str(cfg), "--out", str(out))
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["policy"] == "CP2"
    assert report["n_weights"] == report["n_returns"] + 1
    with open(out / "returns.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["date", "holding_end", "return"]
    assert len(rows) - 1 == report["n_returns"]
    with open(out / "weights.csv") as fh:
        wrows = list(csv.reader(fh))
    assert len(wrows) - 1 == report["n_weights"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["policy"] == "cp"
    assert manifest["seed"] == 3
    with open(out / "report.csv") as fh:
        flat = list(csv.DictReader(fh))
    assert len(flat) == 1 and flat[0]["policy"] == "CP2"

    # rerun reproduces outputs byte for byte
    first = {name: (out / name).read_bytes() for name in ("weights.csv", "returns.csv", "report.json")}
    assert run_cli(tmp_path, "backtest", "--config", str(cfg), "--out", str(out)) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob


def test_backtest_full_mode_label(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "full"
    code = run_cli(
        tmp_path, "backtest", "--config", str(cfg),
        "--policy", "cp2", "--policy-mode", "full", "--out", str(out),
    )
    assert code == 0
    assert json.loads((out / "report.json").read_text())["policy"] == "CP2 (Full)"


def test_sweep_horizon_axis(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "sweep"
    code = run_cli(
        tmp_path, "sweep", "--config", str(cfg), "--out", str(out),
        "--axis", "horizon_days=5,7", "--axis", "policy=cp2,uni",
    )
    assert code == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    ppys = {float(r["periods_per_year"]) for r in rows}
    assert ppys == {50.0, 36.0}
    # resumable: rerunning with --resume reuses finished cells
    assert run_cli(
        tmp_path, "sweep", "--config", str(cfg), "--out", str(out),
        "--axis", "horizon_days=5,7", "--axis", "policy=cp2,uni", "--resume",
    ) == 0


def test_sweep_parallel_jobs_match_serial(workspace):
    tmp_path, cfg = workspace
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    for out, jobs in ((serial, []), (parallel, ["--jobs", "3"])):
        code = main(
            ["--cache-dir", str(tmp_path / "cache"), *jobs, "sweep",
             "--config", str(cfg), "--out", str(out), "--axis", "policy=cp2,pp2,uni"]
        )
        assert code == 0
    assert (serial / "report.csv").read_bytes() == (parallel / "report.csv").read_bytes()


def test_sweep_no_axes_is_single_base_run(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "base"
    assert run_cli(tmp_path, "sweep", "--config", str(cfg), "--out", str(out)) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["policy"] == "CP2"


def test_sweep_shrinkage_axis(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "shrink"
    code = run_cli(
        tmp_path, "sweep", "--config", str(cfg), "--out", str(out),
        "--axis", "delta_x=0,0.5,1",
    )
    assert code == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["axis_delta_x"] for r in rows] == ["0", "0.5", "1"]


def test_sweep_rejects_unknown_axis(workspace):
    tmp_path, cfg = workspace
    code = run_cli(
        tmp_path, "sweep", "--config", str(cfg), "--out", str(tmp_path / "s"),
        "--axis", "bogus=1,2",
    )
    assert code == 2


def test_simulate_prop4_csv(tmp_path):
    spec = tmp_path / "sim.cfg"
    spec.write_text("n_assets = 2\ntarget_s = 0.5\ndraws = 20000\nseed = 1\n")
    out = tmp_path / "sim"
    code = run_cli(tmp_path, "simulate", "--experiment", "prop4", "--spec", str(spec), "--out", str(out))
    assert code == 0
    with open(out / "prop4.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["predicted_mean"] == "0.25"
    assert rows[0]["predicted_var"] == "0.3125"


def test_simulate_rejects_unknown_keys(tmp_path):
    spec = tmp_path / "sim.cfg"
    spec.write_text("bogus = 1\n")
    code = run_cli(tmp_path, "simulate", "--experiment", "prop4", "--spec", str(spec))
    assert code == 2


def test_simulate_wachter_and_bias(tmp_path):
    spec = tmp_path / "w.cfg"
    spec.write_text("ratios = 0.05:0.1\nt = 60\nreps = 5\n")
    out = tmp_path / "sim"
    assert run_cli(tmp_path, "simulate", "--experiment", "wachter", "--spec", str(spec), "--out", str(out)) == 0
    assert (out / "wachter.csv").exists()
    spec2 = tmp_path / "b.cfg"
    spec2.write_text("n_assets = 3\nn_periods = 40\ntarget_s = 0.3,0.3\nreps = 10\n")
    assert run_cli(tmp_path, "simulate", "--experiment", "bias", "--spec", str(spec2), "--out", str(out)) == 0
    assert (out / "bias.csv").exists()


def test_dump_moments(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "moments"
    assert run_cli(tmp_path, "dump-moments", "--config", str(cfg), "--out", str(out)) == 0
    for name in ("sigma_r.csv", "sigma_x.csv", "sigma_rx.csv", "means.csv"):
        assert (out / name).exists()
    with open(out / "sigma_r.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 5  # header + 4 assets


def test_cca_analyze(workspace):
    tmp_path, cfg = workspace
    out = tmp_path / "cca"
    assert run_cli(tmp_path, "cca-analyze", "--config", str(cfg), "--out", str(out), "--perms", "8") == 0
    with open(out / "s2.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) > 10
    assert (out / "top_direction.csv").exists()
    assert (out / "null_quantiles.csv").exists()


def test_fetch_offline_cold_cache_fails(tmp_path):
    code = main(["--cache-dir", str(tmp_path / "cache"), "--offline", "fetch", "--dataset", "FF25"])
    assert code == 1


def _french_library_fixture(tmp_path, n_assets=25, start="19600104", n_days=6500):
    """Portfolio file + factor file shaped like the real library downloads:
    pre-sample history, sentinel gaps, trailing blocks and a footer."""
    import datetime

    rng = np.random.default_rng(7)
    values = rng.standard_normal((n_days, n_assets)) * 0.01 + 0.0003
    values[:200, 3] = np.nan  # a late-starting portfolio, pre-1963
    values[2600:2605, 7] = np.nan  # a sentinel gap inside the sample
    d = datetime.date(int(start[:4]), int(start[4:6]), int(start[6:]))
    dates = []
    while len(dates) < n_days:
        if d.weekday() < 5:
            dates.append(d.strftime("%Y%m%d"))
        d += datetime.timedelta(days=1)
    assets = [f"ME{i // 5 + 1} BM{i % 5 + 1}" for i in range(n_assets)]

    def block(title, vals):
        lines = ["", f"  {title}", "," + ",".join(assets)]
        for date, row in zip(dates, vals):
            cells = ["-99.99" if np.isnan(v) else f"{v * 100:.4f}" for v in row]
            lines.append(date + "," + ",".join(cells))
        return lines

    lines = ["This file was created from daily returns.", ""]
    lines += block("Average Value Weighted Returns -- Daily", values)
    lines += block("Average Equal Weighted Returns -- Daily", values + 0.5)
    lines += ["", "Copyright"]
    portfolio_path = tmp_path / "ff25_like.csv"
    portfolio_path.write_text("\n".join(lines) + "\n")

    factors = rng.standard_normal((n_days, 6)) * 0.008
    flines = ["Factor file", "", ",Mkt-RF,SMB,HML,RMW,CMA,RF"]
    for date, row in zip(dates, factors):
        flines.append(date + "," + ",".join(f"{v * 100:.4f}" for v in row))
    factor_path = tmp_path / "factors.csv"
    factor_path.write_text("\n".join(flines) + "\n")
    return portfolio_path, factor_path, dates


def test_default_config_pipeline_on_library_shaped_files(tmp_path):
    import zipfile

    from canonport.backtest import first_rebalance_block
    from canonport.data import BlockCalendar

    portfolio_path, factor_path, dates = _french_library_fixture(tmp_path)
    cache = tmp_path / "cache"
    cache.mkdir()
    # pre-seed the cache under the built-in names, zipped like the real files
    for name, src in (("FF25", portfolio_path), ("FF5_FACTORS", factor_path)):
        with zipfile.ZipFile(cache / f"{name}.bin", "w") as zf:
            zf.write(src, arcname=src.name)
    cfg = tmp_path / "default.cfg"
    cfg.write_text("dataset = FF25\npolicy = cp2\n")  # every other key at its default
    out = tmp_path / "out"
    code = main(
        ["--cache-dir", str(cache), "--offline", "backtest", "--config", str(cfg), "--out", str(out)]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    # the sample opens at the default 1963-07-01 cut, not the file start
    sample_days = sum(1 for d in dates if f"{d[:4]}-{d[4:6]}-{d[6:]}" >= "1963-07-01")
    cal = BlockCalendar.regular(sample_days, 21)
    from canonport.backtest import BacktestConfig

    expected = cal.n_blocks - first_rebalance_block(BacktestConfig())
    assert report["n_returns"] == expected
    assert report["n_weights"] == expected + 1
    # the factor file aligned, so the six-factor regression block is filled
    assert report["alpha_ann_pct"] is not None
    assert report["beta_uni"] is not None
    assert report["ir_t"] is not None
    assert abs(report["sharpe_ann"]) < 3.0
