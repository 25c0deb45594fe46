"""Daily return panels: Kenneth French file ingestion, trading-day blocks,
and asset-eligibility rules for the walk-forward universe.

Dates are ISO-8601 strings; all alignment is by integer trading-day index.
Missing observations are NaN.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import re
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass, field

import numpy as np
from filelock import FileLock

from .errors import (
    ChecksumMismatch,
    ColumnCountMismatch,
    IncompleteBlock,
    MalformedHeader,
    NetworkUnavailable,
)

FRENCH_BASE = "https://mba.tuck.dartmouth.edu/pages/faculty/ken.french/ftp/"

# name -> (zip file on the French library, expected asset columns)
BUILTIN_DATASETS = {
    "FF25": ("25_Portfolios_5x5_Daily_CSV.zip", 25),
    "FF100": ("100_Portfolios_10x10_Daily_CSV.zip", 100),
    "ME_OP25": ("25_Portfolios_ME_OP_5x5_Daily_CSV.zip", 25),
    "ME_OP100": ("100_Portfolios_ME_OP_10x10_Daily_CSV.zip", 100),
    "ME_INV25": ("25_Portfolios_ME_INV_5x5_Daily_CSV.zip", 25),
    "ME_INV100": ("100_Portfolios_ME_INV_10x10_Daily_CSV.zip", 100),
    "FF5_FACTORS": ("F-F_Research_Data_5_Factors_2x3_daily_CSV.zip", 6),
}

MISSING_SENTINELS = (-99.99, -999.0)

_DATA_ROW = re.compile(r"^\s*(\d{8})\s*,")


@dataclass
class DatasetId:
    """A named dataset plus where its raw file comes from.

    Built-in names resolve to the French data library; custom names must
    carry a source URL or local path and an expected column count.
    """

    name: str
    source: str | None = None
    n_columns: int | None = None

    def __post_init__(self):
        if self.name in BUILTIN_DATASETS:
            filename, cols = BUILTIN_DATASETS[self.name]
            if self.source is None:
                self.source = FRENCH_BASE + filename
            if self.n_columns is None:
                self.n_columns = cols
        elif self.n_columns is None:
            raise ValueError(f"custom dataset {self.name!r} needs an explicit column count")

    @property
    def cache_key(self) -> str:
        return re.sub(r"[^A-Za-z0-9_.-]", "_", self.name)


@dataclass
class ReturnPanel:
    """Dated T x N matrix of simple returns in decimal units."""

    dates: list[str]
    assets: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        t, n = self.values.shape
        if len(self.dates) != t or len(self.assets) != n:
            raise ValueError(
                f"panel shape {self.values.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        finite = self.values[~np.isnan(self.values)]
        if finite.size and (not np.all(np.isfinite(finite)) or finite.min() <= -1.0):
            raise ValueError("non-missing returns must be finite and > -1")
        self.values.flags.writeable = False

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def restrict_dates(self, start: str | None = None, end: str | None = None) -> "ReturnPanel":
        lo = 0
        hi = self.n_days
        if start is not None:
            lo = int(np.searchsorted(np.array(self.dates), start, side="left"))
        if end is not None:
            hi = int(np.searchsorted(np.array(self.dates), end, side="right"))
        return ReturnPanel(self.dates[lo:hi], list(self.assets), self.values[lo:hi].copy())

    def index_of(self, date: str) -> int:
        i = int(np.searchsorted(np.array(self.dates), date, side="left"))
        if i >= self.n_days or self.dates[i] != date:
            raise KeyError(f"date {date} not in panel")
        return i

    # -- serialization (CSV and JSON round-trip non-missing values bit-exact) --

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_matrix_csv(fh, "date", self.assets, self.dates, self.values)

    @classmethod
    def read_csv(cls, path) -> "ReturnPanel":
        with open(path, newline="") as fh:
            label, assets, dates, values = read_matrix_csv(fh)
        if label != "date":
            raise MalformedHeader(f"expected 'date' header, got {label!r}")
        return cls(dates, assets, values)

    def write_json(self, path) -> None:
        payload = {
            "dates": self.dates,
            "assets": self.assets,
            "values": [[None if np.isnan(v) else v for v in row] for row in self.values],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def read_json(cls, path) -> "ReturnPanel":
        with open(path) as fh:
            payload = json.load(fh)
        values = np.array(
            [[np.nan if v is None else v for v in row] for row in payload["values"]], dtype=float
        )
        return cls(payload["dates"], payload["assets"], values)


def write_matrix_csv(fh, index_label: str, columns: list[str], index: list[str], values) -> None:
    """CSV writer shared by panels and debug dumps; floats use repr for
    bit-exact round trips, NaN becomes an empty cell."""
    import csv

    writer = csv.writer(fh)
    writer.writerow([index_label, *columns])
    for key, row in zip(index, np.asarray(values, dtype=float)):
        writer.writerow([key] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def read_matrix_csv(fh):
    import csv

    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeader("empty CSV") from None
    label, columns = header[0], header[1:]
    index: list[str] = []
    rows: list[list[float]] = []
    for row in reader:
        if not row:
            continue
        index.append(row[0])
        rows.append([np.nan if cell == "" else float(cell) for cell in row[1:]])
    return label, columns, index, np.array(rows, dtype=float)


@dataclass
class BlockCalendar:
    """Contiguous trading-day blocks of fixed length.

    ``blocks`` holds (start, stop) day-index ranges, stop exclusive.
    Trailing days that do not fill a complete block are discarded.
    """

    block_len: int
    blocks: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.block_len < 1:
            raise ValueError("block_len must be positive")
        prev_stop = None
        for start, stop in self.blocks:
            if stop - start != self.block_len:
                raise ValueError(f"block ({start}, {stop}) is not {self.block_len} days")
            if prev_stop is not None and start != prev_stop:
                raise ValueError("blocks must be contiguous and disjoint")
            prev_stop = stop

    @classmethod
    def regular(cls, n_days: int, block_len: int, offset: int = 0) -> "BlockCalendar":
        n_blocks = (n_days - offset) // block_len
        blocks = [
            (offset + j * block_len, offset + (j + 1) * block_len) for j in range(max(n_blocks, 0))
        ]
        return cls(block_len=block_len, blocks=blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def boundary(self, block_index: int) -> int:
        """Day index of the start of ``block_index`` (== stop of the previous
        block); ``block_index == n_blocks`` addresses the end of the calendar."""
        if block_index == self.n_blocks:
            return self.blocks[-1][1]
        return self.blocks[block_index][0]


def fetch_dataset(dataset: DatasetId, cache_dir, offline: bool = False, timeout: float = 60.0) -> bytes:
    """Return the dataset's raw bytes, caching by name with a sha256 sidecar.

    A warm cache is served without touching the network; corrupt cache
    entries raise ChecksumMismatch. A per-entry advisory lock prevents
    duplicate concurrent downloads.
    """
    cache_dir = os.fspath(cache_dir)
    os.makedirs(cache_dir, exist_ok=True)
    blob_path = os.path.join(cache_dir, dataset.cache_key + ".bin")
    sum_path = blob_path + ".sha256"
    with FileLock(blob_path + ".lock"):
        if os.path.exists(blob_path):
            with open(blob_path, "rb") as fh:
                blob = fh.read()
            digest = hashlib.sha256(blob).hexdigest()
            if os.path.exists(sum_path):
                with open(sum_path) as fh:
                    expected = fh.read().strip()
                if expected and expected != digest:
                    raise ChecksumMismatch(f"cache entry for {dataset.name} is corrupt")
            return blob
        if offline:
            raise NetworkUnavailable(f"{dataset.name}: cold cache and offline mode")
        source = dataset.source
        if source and os.path.exists(source):
            with open(source, "rb") as fh:
                blob = fh.read()
        elif source:
            try:
                with urllib.request.urlopen(source, timeout=timeout) as resp:
                    blob = resp.read()
            except (urllib.error.URLError, OSError) as exc:
                raise NetworkUnavailable(f"{dataset.name}: download failed: {exc}") from exc
        else:
            raise NetworkUnavailable(f"{dataset.name}: no source configured")
        tmp = blob_path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, blob_path)
        with open(sum_path, "w") as fh:
            fh.write(hashlib.sha256(blob).hexdigest())
        return blob


def dataset_checksum(dataset: DatasetId, cache_dir) -> str | None:
    sum_path = os.path.join(os.fspath(cache_dir), dataset.cache_key + ".bin.sha256")
    if os.path.exists(sum_path):
        with open(sum_path) as fh:
            return fh.read().strip()
    return None


def _zip_to_text(blob: bytes) -> str:
    if blob[:4] == b"PK\x03\x04":
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            names = [n for n in zf.namelist() if n.lower().endswith(".csv")] or zf.namelist()
            with zf.open(names[0]) as fh:
                return fh.read().decode("latin-1")
    return blob.decode("latin-1")


def parse_french_daily(text: str, dataset: DatasetId) -> ReturnPanel:
    """Parse the daily average value-weighted block of a French-library CSV.

    Rows are keyed by YYYYMMDD dates with percent-unit returns; the
    sentinels -99.99 and -999 mark missing observations. Only the first
    value-weighted daily block is retained (equal-weighted and firm-count
    blocks follow it in the raw files).
    """
    lines = text.splitlines()
    start = 0
    for i, line in enumerate(lines):
        if "average value weighted returns" in line.lower() and "daily" in line.lower():
            start = i
            break
    first_data = None
    for i in range(start, len(lines)):
        if _DATA_ROW.match(lines[i]):
            first_data = i
            break
    if first_data is None:
        raise MalformedHeader(f"{dataset.name}: no daily data rows found")
    header_line = lines[first_data - 1] if first_data > 0 else ""
    columns = [c.strip() for c in header_line.split(",")]
    if columns and columns[0] == "":
        columns = columns[1:]
    dates: list[str] = []
    rows: list[list[float]] = []
    for line in lines[first_data:]:
        m = _DATA_ROW.match(line)
        if not m:
            break  # blank line or the caption of the next block
        raw = m.group(1)
        cells = line.split(",")[1:]
        row = []
        for cell in cells:
            cell = cell.strip()
            if not cell:
                row.append(np.nan)
                continue
            v = float(cell)
            row.append(np.nan if v in MISSING_SENTINELS else v / 100.0)
        dates.append(f"{raw[:4]}-{raw[4:6]}-{raw[6:]}")
        rows.append(row)
    n_cols = len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise MalformedHeader(f"{dataset.name}: ragged rows in daily block")
    if dataset.n_columns is not None and n_cols != dataset.n_columns:
        raise ColumnCountMismatch(
            f"{dataset.name}: expected {dataset.n_columns} columns, found {n_cols}"
        )
    if len(columns) != n_cols or any(not c for c in columns):
        columns = [f"A{i + 1}" for i in range(n_cols)]
    return ReturnPanel(dates, columns, np.array(rows, dtype=float))


def load_panel(dataset: DatasetId, cache_dir, offline: bool = False) -> ReturnPanel:
    """Fetch (cache-aware), unzip and parse a dataset in one step."""
    blob = fetch_dataset(dataset, cache_dir, offline=offline)
    return parse_french_daily(_zip_to_text(blob), dataset)


def aggregate_to_blocks(panel: ReturnPanel, cal: BlockCalendar) -> ReturnPanel:
    """Compound daily returns into one row per block.

    The block return per asset is prod(1 + daily) - 1; any missing day
    makes the block missing. Rows are dated by the final day of the block.
    """
    if cal.n_blocks == 0:
        raise IncompleteBlock("calendar has no complete blocks")
    if cal.blocks[-1][1] > panel.n_days or cal.blocks[0][0] < 0:
        raise IncompleteBlock("calendar extends beyond the panel")
    out = np.empty((cal.n_blocks, panel.n_assets))
    dates = []
    for j, (lo, hi) in enumerate(cal.blocks):
        chunk = panel.values[lo:hi]
        out[j] = np.prod(1.0 + chunk, axis=0) - 1.0  # NaN propagates
        dates.append(panel.dates[hi - 1])
    return ReturnPanel(dates, list(panel.assets), out)


def complete_day_mask(panel: ReturnPanel, lo: int, hi: int) -> np.ndarray:
    """Boolean mask of assets with no missing value on days [lo, hi)."""
    lo = max(lo, 0)
    hi = min(hi, panel.n_days)
    if hi <= lo:
        return np.ones(panel.n_assets, dtype=bool)
    return ~np.isnan(panel.values[lo:hi]).any(axis=0)


def eligibility_mask(
    panel: ReturnPanel,
    cal: BlockCalendar,
    rebalance_date: str,
    lookback_blocks: int,
    lookahead_blocks: int,
    prefix_days: int = 0,
) -> np.ndarray:
    """Assets with complete data over the lookback window and lookahead block(s).

    ``rebalance_date`` must be a block boundary (the first day of a block).
    ``prefix_days`` extends the checked range before the lookback window,
    covering signal history that reaches past the window start.
    """
    idx = panel.index_of(rebalance_date)
    starts = {cal.boundary(j): j for j in range(cal.n_blocks)}
    if idx not in starts:
        raise ValueError(f"{rebalance_date} is not a block boundary")
    b = starts[idx]
    if b - lookback_blocks < 0 or b + lookahead_blocks > cal.n_blocks:
        raise IncompleteBlock("lookback/lookahead range exceeds the calendar")
    lo = cal.boundary(b - lookback_blocks) - prefix_days
    hi = cal.boundary(b + lookahead_blocks)
    return complete_day_mask(panel, lo, hi)
