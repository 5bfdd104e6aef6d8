"""Decile long-short backtesting under moment-based performance measures.

Rankings are formed each day from the moment panel (whose entries only
use information up to the previous day), realized on that day's returns,
re-balanced daily with equal weights inside each leg, and charged a flat
cost rate per unit of traded weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRADING_DAYS = 252
MEASURE_KINDS = ("M", "MV", "MVSK", "SR", "SRSK")


class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class MeasureSpec:
    kind: str
    lam1: float = 0.0
    lam2: float = 0.0
    lam3: float = 0.0

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise BacktestError(f"unknown measure kind {self.kind!r}")
        if min(self.lam1, self.lam2, self.lam3) < 0:
            raise BacktestError("measure penalties must be nonnegative")


def compute_measure(spec: MeasureSpec, mu, h, s, k):
    """Measure values; cells where the formula is undefined become NaN."""
    mu, h, s, k = (np.asarray(a, dtype=float) for a in (mu, h, s, k))
    if spec.kind == "M":
        return mu.copy()
    if spec.kind == "MV":
        return mu - spec.lam1 * h
    if spec.kind == "MVSK":
        return mu - spec.lam1 * h + spec.lam2 * s - spec.lam3 * k
    with np.errstate(invalid="ignore", divide="ignore"):
        sr = np.where(h > 0, mu / np.sqrt(np.where(h > 0, h, 1.0)), np.nan)
    if spec.kind == "SR":
        return sr
    return sr + spec.lam2 * s - spec.lam3 * k


@dataclass(frozen=True)
class DecileAssignment:
    order: np.ndarray     # stock positions sorted ascending by measure
    decile: np.ndarray    # 1..10 per stock (position-aligned with input)


def decile_sort(values, tickers=None) -> DecileAssignment:
    """Ascending stable decile split; ties broken by ticker order.

    Stocks come pre-sorted by ticker, so a stable sort on the values alone
    realizes the lexicographic tie-break.
    """
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    pool = int(finite.sum())
    if pool < 10:
        raise BacktestError(f"need at least 10 rankable stocks, got {pool}")
    keys = np.where(finite, values, np.inf)
    order = np.argsort(keys, kind="stable")
    decile = np.zeros(len(values), dtype=int)
    ranked = order[:pool]
    decile[ranked] = (10 * np.arange(pool)) // pool + 1
    return DecileAssignment(order=ranked, decile=decile)


@dataclass
class PortfolioSeries:
    days: np.ndarray
    gross: np.ndarray
    turnover: np.ndarray
    net: np.ndarray
    cost_rate: float
    long_weights: np.ndarray    # (N, D)
    short_weights: np.ndarray   # (N, D)


def _leg_weights(values):
    """Equal-weight long (decile 10) and short (decile 1) legs per day.

    values: (N, D) measure panel with NaN marking excluded cells.
    Returns (long_w, short_w), each (N, D) summing to 1 per day.
    """
    v = np.asarray(values, dtype=float)
    n, d = v.shape
    valid = np.isfinite(v)
    pool = valid.sum(axis=0)
    if np.any(pool < 10):
        bad = int(np.argmax(pool < 10))
        raise BacktestError(f"day column {bad}: only {pool[bad]} rankable stocks")
    keys = np.where(valid, v, np.inf)
    order = np.argsort(keys, axis=0, kind="stable")
    ranks = np.empty((n, d), dtype=int)
    np.put_along_axis(ranks, order, np.arange(n)[:, None].repeat(d, axis=1), axis=0)
    short_count = np.ceil(pool / 10).astype(int)
    long_count = pool - np.ceil(9 * pool / 10).astype(int)
    long_mask = (ranks >= pool - long_count) & (ranks < pool)
    short_mask = ranks < short_count
    return long_mask / long_count, short_mask / short_count


def longshort_returns(measure_values, realized_returns, days, cost_rate) -> PortfolioSeries:
    """Daily long-short accounting from a measure panel.

    measure_values, realized_returns: (N, D) aligned on the same days;
    the ranking for a day uses only that day's (previously predicted)
    measure entries. Day one is charged full establishment turnover.
    """
    r = np.asarray(realized_returns, dtype=float)
    long_w, short_w = _leg_weights(measure_values)
    if r.shape != long_w.shape:
        raise BacktestError(f"returns shape {r.shape} misaligned with measures {long_w.shape}")
    gross = (long_w * r).sum(axis=0) - (short_w * r).sum(axis=0)
    signed = long_w - short_w
    prev = np.concatenate([np.zeros((signed.shape[0], 1)), signed[:, :-1]], axis=1)
    turnover = np.abs(signed - prev).sum(axis=0)
    net = gross - cost_rate * turnover
    return PortfolioSeries(days=np.asarray(days), gross=gross, turnover=turnover,
                           net=net, cost_rate=cost_rate,
                           long_weights=long_w, short_weights=short_w)


@dataclass(frozen=True)
class BacktestReport:
    ann_return_pct: float
    ann_risk_pct: float
    sharpe: float


def annualize(net_returns, risk_free) -> BacktestReport:
    """Annualized excess return, risk, and their ratio."""
    net = np.asarray(net_returns, dtype=float)
    rf = np.asarray(risk_free, dtype=float)
    if len(net) < 30:
        raise BacktestError(f"need at least 30 daily observations, got {len(net)}")
    if rf.shape != net.shape:
        raise BacktestError("risk-free series misaligned")
    excess = net - rf
    ann_ret = TRADING_DAYS * excess.mean()
    ann_risk = np.sqrt(TRADING_DAYS) * excess.std(ddof=1)
    if ann_risk == 0:
        raise BacktestError("zero risk: Sharpe ratio undefined")
    return BacktestReport(ann_return_pct=100 * ann_ret, ann_risk_pct=100 * ann_risk,
                          sharpe=ann_ret / ann_risk)


def lambda_grid_variance():
    """45 penalty values a*10^-b, a=1..9, b=-1..3 (ascending)."""
    return sorted(a * 10.0 ** (-b) for a in range(1, 10) for b in range(-1, 4))


def lambda_grid_shape():
    """45 penalty values a*10^-b, a=1..9, b=2..6 (ascending)."""
    return sorted(a * 10.0 ** (-b) for a in range(1, 10) for b in range(2, 7))


def _candidate_grid(kind):
    if kind == "MV":
        return [(l1, 0.0, 0.0) for l1 in lambda_grid_variance()]
    if kind == "SRSK":
        return [(0.0, l2, l3) for l2 in lambda_grid_shape() for l3 in lambda_grid_shape()]
    if kind == "MVSK":
        return [(l1, l2, l3)
                for l1 in lambda_grid_variance()
                for l2 in lambda_grid_shape()
                for l3 in lambda_grid_shape()]
    return [(0.0, 0.0, 0.0)]


def grid_search_lambdas(kind, mu, h, s, k, realized_returns, risk_free, days,
                        cost_rate) -> tuple:
    """Exhaustive in-sample search maximizing the net portfolio Sharpe.

    Ties take the lexicographically smallest (lam1, lam2, lam3);
    candidates whose portfolio is degenerate are skipped.
    """
    candidates = _candidate_grid(kind)
    best, best_sr = None, -np.inf
    for lams in candidates:
        spec = MeasureSpec(kind, *lams)
        values = compute_measure(spec, mu, h, s, k)
        try:
            series = longshort_returns(values, realized_returns, days, cost_rate)
            sr = annualize(series.net, risk_free).sharpe
        except BacktestError:
            continue
        if sr > best_sr:
            best, best_sr = lams, sr
    if best is None:
        raise BacktestError(f"every candidate portfolio for {kind} was degenerate")
    return best
