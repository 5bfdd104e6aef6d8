"""Price/factor ingestion, lagged feature construction, and data splits.

All indexing is 0-based day indices into the shared ascending date axis.
Feature day t holds the moving averages and rolling exposures computed
from data up to and including day t; the lag block feeding a prediction
for day t uses feature days t-S .. t-1 only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linalg import SingularDesignError, solve_least_squares_multi

MA_WINDOWS = (1, 5, 10, 20, 30)
EXPOSURE_WINDOW = 126  # half a trading year


class DataLoadError(ValueError):
    pass


@dataclass(frozen=True)
class PricePanel:
    tickers: tuple
    dates: tuple
    returns: np.ndarray  # (N, T) one-day simple returns
    dropped: tuple = ()

    @property
    def n_stocks(self):
        return len(self.tickers)

    @property
    def n_days(self):
        return len(self.dates)


@dataclass(frozen=True)
class FactorPanel:
    names: tuple
    dates: tuple
    values: np.ndarray      # (B, T)
    risk_free: np.ndarray   # (T,)

    @property
    def n_factors(self):
        return len(self.names)


@dataclass(frozen=True)
class SplitSpec:
    train_end: int
    valid_end: int
    test_end: int

    def validate(self, n_days):
        if not (0 < self.train_end < self.valid_end < self.test_end <= n_days):
            raise DataLoadError(
                f"invalid split {self.train_end}/{self.valid_end}/{self.test_end} for T={n_days}")


@dataclass
class FeatureSeries:
    """Per-day feature values for all N+B entities (stocks then factors).

    Rows 0..4 are the moving averages over MA_WINDOWS of stock returns or
    factor values; rows 5..9 are the factor exposures (rolling OLS slopes
    for stocks, the fixed self-exposure indicator for factors).
    """
    values: np.ndarray       # (N+B, P, T), normalized when stats present
    first_valid: int         # earliest day index where every feature is defined
    n_stocks: int
    n_factors: int
    stat_min: np.ndarray | None = None
    stat_max: np.ndarray | None = None
    zero_range_rows: list = field(default_factory=list)

    @property
    def n_features(self):
        return self.values.shape[1]

    @property
    def n_days(self):
        return self.values.shape[2]

    def earliest_target(self, lag_count):
        return self.first_valid + lag_count

    def lag_block(self, t, lag_count):
        """Feature slice (N+B, P, S) for predicting day t (strictly causal)."""
        if t - lag_count < self.first_valid:
            raise DataLoadError(
                f"insufficient history for target day {t}; earliest usable day is "
                f"{self.earliest_target(lag_count)}")
        if t > self.n_days:
            raise DataLoadError(f"target day {t} beyond panel end {self.n_days}")
        return self.values[:, :, t - lag_count : t]

    def lag_blocks(self, days, lag_count):
        """Stacked (len(days), N+B, P, S) blocks for a batch of target days."""
        return np.stack([self.lag_block(t, lag_count) for t in days])


def _read_rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]


def load_prices(path) -> PricePanel:
    """Load `date,ticker,return` or `date,ticker,close` into a dense panel.

    Rows must be sorted by date; duplicates error; stocks missing any day
    in the panel's date range are dropped (recorded in `dropped`).
    """
    rows = _read_rows(path)
    if not rows:
        raise DataLoadError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["date", "ticker"] or header[2] not in ("return", "close"):
        raise DataLoadError(f"{path}: expected header date,ticker,return|close, got {rows[0]}")
    is_close = header[2] == "close"
    seen = {}
    prev_date = ""
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 3:
            raise DataLoadError(f"{path}:{lineno}: malformed row {row}")
        date, ticker, value = row[0].strip(), row[1].strip(), float(row[2])
        if date < prev_date:
            raise DataLoadError(f"{path}:{lineno}: non-monotone date {date} after {prev_date}")
        prev_date = date
        key = (date, ticker)
        if key in seen:
            raise DataLoadError(f"{path}:{lineno}: duplicate (date,ticker) {key}")
        seen[key] = value
    dates = sorted({d for d, _ in seen})
    tickers = sorted({t for _, t in seen})
    full, dropped = [], []
    for t in tickers:
        if all((d, t) in seen for d in dates):
            full.append(t)
        else:
            dropped.append(t)
    if not full:
        raise DataLoadError(f"{path}: no stock covers the full date range")
    panel = np.array([[seen[(d, t)] for d in dates] for t in full])
    if is_close:
        if panel.shape[1] < 2:
            raise DataLoadError(f"{path}: need at least 2 days of closes")
        if np.any(panel <= 0):
            raise DataLoadError(f"{path}: non-positive close price")
        panel = panel[:, 1:] / panel[:, :-1] - 1.0
        dates = dates[1:]
    if not np.all(np.isfinite(panel)):
        raise DataLoadError(f"{path}: non-finite return values")
    return PricePanel(tickers=tuple(full), dates=tuple(dates),
                      returns=panel, dropped=tuple(dropped))


def load_factors(path, factor_cols=("mkt_rf", "smb", "hml", "rmw", "cma"),
                 rf_col="rf") -> FactorPanel:
    rows = _read_rows(path)
    if not rows:
        raise DataLoadError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    try:
        date_ix = header.index("date")
        cols = [header.index(c) for c in factor_cols]
        rf_ix = header.index(rf_col)
    except ValueError as e:
        raise DataLoadError(f"{path}: missing column ({e}); header was {header}") from None
    dates, vals, rf = [], [], []
    prev = ""
    for lineno, row in enumerate(rows[1:], start=2):
        d = row[date_ix].strip()
        if d < prev:
            raise DataLoadError(f"{path}:{lineno}: non-monotone date {d}")
        if dates and d == dates[-1]:
            raise DataLoadError(f"{path}:{lineno}: duplicate date {d}")
        prev = d
        dates.append(d)
        vals.append([float(row[c]) for c in cols])
        rf.append(float(row[rf_ix]))
    values = np.array(vals).T
    if not np.all(np.isfinite(values)):
        raise DataLoadError(f"{path}: non-finite factor values")
    return FactorPanel(names=tuple(factor_cols), dates=tuple(dates),
                       values=values, risk_free=np.array(rf))


def align_panels(prices: PricePanel, factors: FactorPanel):
    if prices.dates != factors.dates:
        raise DataLoadError(
            f"price and factor date axes differ: {len(prices.dates)} vs {len(factors.dates)} days")


def moving_average(returns, k, i, t):
    """Mean of the k values of row i ending at day t (inclusive, 0-based)."""
    if t < k - 1:
        raise DataLoadError(f"insufficient history: day {t} < window {k}")
    return float(np.mean(returns[i, t - k + 1 : t + 1]))


def _moving_average_series(series, k):
    """(R, T) rolling means; entries before day k-1 are NaN."""
    r, t = series.shape
    out = np.full((r, t), np.nan)
    csum = np.cumsum(series, axis=1)
    out[:, k - 1 :] = (csum[:, k - 1 :] - np.concatenate(
        [np.zeros((r, 1)), csum[:, : t - k]], axis=1)) / k
    return out


def rolling_factor_exposures(prices: PricePanel, factors: FactorPanel, i, t,
                             window=EXPOSURE_WINDOW):
    """OLS slopes of stock i's returns on the factor values over the window
    ending at day t (intercept fitted, then discarded)."""
    if t < window - 1:
        raise DataLoadError(f"insufficient history: day {t} < window {window}")
    fwin = factors.values[:, t - window + 1 : t + 1].T
    design = np.concatenate([np.ones((window, 1)), fwin], axis=1)
    resp = prices.returns[i, t - window + 1 : t + 1]
    coef = solve_least_squares_multi(design, resp)
    return coef[1:]


def _exposure_series(prices: PricePanel, factors: FactorPanel, window):
    """(N, B, T) rolling exposures; NaN before the window fills, and a
    singular window reuses the previous valid day's exposures."""
    n, t_days = prices.returns.shape
    b = factors.n_factors
    out = np.full((n, b, t_days), np.nan)
    prev = None
    for t in range(window - 1, t_days):
        fwin = factors.values[:, t - window + 1 : t + 1].T
        design = np.concatenate([np.ones((window, 1)), fwin], axis=1)
        resp = prices.returns[:, t - window + 1 : t + 1].T
        try:
            coef = solve_least_squares_multi(design, resp)[1:]  # (B, N)
            prev = coef.T
        except SingularDesignError:
            if prev is None:
                continue
        out[:, :, t] = prev
    return out


def build_feature_series(prices: PricePanel, factors: FactorPanel,
                         window=EXPOSURE_WINDOW) -> FeatureSeries:
    """Raw (un-normalized) per-day features for all stock and factor entities."""
    align_panels(prices, factors)
    n, t_days = prices.returns.shape
    b = factors.n_factors
    p = 2 * len(MA_WINDOWS)
    if b != len(MA_WINDOWS):
        raise DataLoadError(f"feature layout expects {len(MA_WINDOWS)} factors, got {b}")
    values = np.full((n + b, p, t_days), np.nan)
    for row, k in enumerate(MA_WINDOWS):
        values[:n, row, :] = _moving_average_series(prices.returns, k)
        values[n:, row, :] = _moving_average_series(factors.values, k)
    values[:n, len(MA_WINDOWS):, :] = _exposure_series(prices, factors, window)
    for fac in range(b):
        values[n + fac, len(MA_WINDOWS):, :] = 0.0
        values[n + fac, len(MA_WINDOWS) + fac, :] = 1.0
    valid = np.all(np.isfinite(values), axis=(0, 1))
    if not valid.any():
        raise DataLoadError("no day has a complete feature set; need more history")
    first_valid = int(np.argmax(valid))
    return FeatureSeries(values=values, first_valid=first_valid,
                         n_stocks=n, n_factors=b)


def normalize_features(series: FeatureSeries, train_end: int) -> FeatureSeries:
    """Min-max normalize each (entity, feature row) by its training-span range.

    Rows with zero training range are set identically to 0 and recorded.
    Values outside [0,1] on later spans pass through unclipped.
    """
    if train_end <= series.first_valid:
        raise DataLoadError(
            f"training span ends at {train_end} but features start at {series.first_valid}")
    raw = series.values
    span = raw[:, :, series.first_valid : train_end]
    lo = span.min(axis=2)
    hi = span.max(axis=2)
    rng = hi - lo
    flat = rng <= 0
    safe = np.where(flat, 1.0, rng)
    normed = (raw - lo[:, :, None]) / safe[:, :, None]
    zero_rows = [(int(e), int(r)) for e, r in zip(*np.nonzero(flat))]
    for e, r in zero_rows:
        normed[e, r, :] = 0.0
    return FeatureSeries(values=normed, first_valid=series.first_valid,
                         n_stocks=series.n_stocks, n_factors=series.n_factors,
                         stat_min=lo, stat_max=hi, zero_range_rows=zero_rows)
