"""Validity machinery: coverage tests, valid-level sets, moment t-tests.

A violation at level tau on day t is the event r_t < Q_t(tau) (strict).
Both likelihood-ratio statistics use the 0*log0 = 0 convention so
boundary counts are legal, and asymptotic chi-square p-values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stats import chi2_sf, t_pvalue_two_sided

MIN_COVERAGE_OBS = 30


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class CoverageTestResult:
    statistic: float
    df: int
    p_value: float

    def accepts(self, alpha) -> bool:
        # alpha = 0 accepts everything, so the valid set is the full grid
        return self.p_value >= alpha


def _xlogp(n, p):
    return n * np.log(p) if n > 0 and p > 0 else 0.0


def _binom_ll(n_hit, n_miss, p):
    return _xlogp(n_hit, p) + _xlogp(n_miss, 1.0 - p)


def violation_series(returns, quantile_track):
    """Binary violations 1{r_t < q_t} for aligned series."""
    r = np.asarray(returns, dtype=float)
    q = np.asarray(quantile_track, dtype=float)
    if r.shape != q.shape:
        raise CoverageError(f"misaligned series: {r.shape} vs {q.shape}")
    return (r < q).astype(np.int8)


def lr_uc(violations, tau) -> CoverageTestResult:
    """Unconditional coverage likelihood ratio against frequency tau."""
    v = np.asarray(violations)
    t_len = len(v)
    if t_len < MIN_COVERAGE_OBS:
        raise CoverageError(f"need at least {MIN_COVERAGE_OBS} observations, got {t_len}")
    n = int(v.sum())
    p_hat = n / t_len
    stat = -2.0 * (_binom_ll(n, t_len - n, tau) - _binom_ll(n, t_len - n, p_hat))
    stat = max(stat, 0.0)
    return CoverageTestResult(statistic=stat, df=1, p_value=chi2_sf(stat, 1))


def lr_independence(violations) -> float:
    """First-order Markov independence LR from transition counts."""
    v = np.asarray(violations)
    prev, curr = v[:-1], v[1:]
    n00 = int(np.sum((prev == 0) & (curr == 0)))
    n01 = int(np.sum((prev == 0) & (curr == 1)))
    n10 = int(np.sum((prev == 1) & (curr == 0)))
    n11 = int(np.sum((prev == 1) & (curr == 1)))
    p01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    p11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pooled = (n01 + n11) / max(n00 + n01 + n10 + n11, 1)
    ll1 = _binom_ll(n01, n00, p01) + _binom_ll(n11, n10, p11)
    ll0 = _binom_ll(n01 + n11, n00 + n10, pooled)
    return max(-2.0 * (ll0 - ll1), 0.0)


def lr_cc(violations, tau) -> CoverageTestResult:
    """Conditional coverage: LR_uc plus the independence component."""
    uc = lr_uc(violations, tau)
    stat = uc.statistic + lr_independence(violations)
    return CoverageTestResult(statistic=stat, df=2, p_value=chi2_sf(stat, 2))


@dataclass
class OmegaSet:
    """Per-stock accepted quantile-level indices (into the K-level grid)."""
    levels: np.ndarray
    accepted: dict = field(default_factory=dict)   # stock -> np.ndarray of level indices

    def size(self, stock) -> int:
        return len(self.accepted.get(stock, ()))


def build_omega(quantile_values, returns_by_day, levels, alpha) -> OmegaSet:
    """Accepted levels per stock over the in-sample span.

    quantile_values: (N, D, K) in-sample quantile estimates;
    returns_by_day: (N, D) realized returns on the same days.
    """
    q = np.asarray(quantile_values, dtype=float)
    r = np.asarray(returns_by_day, dtype=float)
    n, d, k = q.shape
    if r.shape != (n, d):
        raise CoverageError(f"returns shape {r.shape} does not match panel ({n},{d})")
    omega = OmegaSet(levels=np.asarray(levels, dtype=float))
    for i in range(n):
        keep = []
        for kk in range(k):
            v = violation_series(r[i], q[i, :, kk])
            if lr_uc(v, levels[kk]).accepts(alpha) and lr_cc(v, levels[kk]).accepts(alpha):
                keep.append(kk)
        omega.accepted[i] = np.asarray(keep, dtype=int)
    return omega


def filter_stocks(omega: OmegaSet, tolerance) -> np.ndarray:
    """Stocks whose valid-level set has at least `tolerance` levels."""
    if tolerance < 4:
        raise CoverageError("tolerance below 4 cannot support the moment fit")
    survivors = np.array(sorted(i for i in omega.accepted if omega.size(i) >= tolerance),
                         dtype=int)
    if len(survivors) == 0:
        sizes = {i: omega.size(i) for i in omega.accepted}
        raise CoverageError(f"no stock passes the level tolerance {tolerance}; sizes: {sizes}")
    return survivors


@dataclass(frozen=True)
class TTestResult:
    stock: int
    moment: str
    mean_residual: float
    statistic: float
    p_value: float


def moment_ttests(returns_by_day, moments, span_cols) -> list:
    """Student-t tests of zero-mean moment residuals per stock.

    returns_by_day: (N, D) aligned with the moment panel's day axis;
    span_cols: columns of that axis to test over (at least 30).
    """
    r = np.asarray(returns_by_day, dtype=float)[:, span_cols]
    mu = moments.mu[:, span_cols]
    h = moments.variance[:, span_cols]
    s = moments.skewness[:, span_cols]
    k = moments.kurtosis[:, span_cols]
    n, t_len = r.shape
    if t_len < MIN_COVERAGE_OBS:
        raise CoverageError(f"need at least {MIN_COVERAGE_OBS} observations, got {t_len}")
    results = []
    for i in range(n):
        centered = r[i] - mu[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            std = centered / np.sqrt(h[i])
        residuals = {
            "mu": centered,
            "h": centered**2 - h[i],
            "s": std**3 - s[i],
            "k": std**4 - k[i],
        }
        for name, e in residuals.items():
            e = e[np.isfinite(e)]
            if len(e) < MIN_COVERAGE_OBS:
                results.append(TTestResult(i, name, np.nan, np.nan, np.nan))
                continue
            sd = e.std(ddof=1)
            if sd == 0.0:
                stat = 0.0 if abs(e.mean()) == 0 else np.inf
                pv = 1.0 if stat == 0.0 else 0.0
            else:
                stat = e.mean() / (sd / np.sqrt(len(e)))
                pv = t_pvalue_two_sided(stat, len(e) - 1)
            results.append(TTestResult(i, name, float(e.mean()), float(stat), float(pv)))
    return results


def acceptance_rates(results, alphas=(0.01, 0.05, 0.10)) -> dict:
    """Percentage of stocks accepted per moment at each significance level."""
    out = {}
    for moment in ("mu", "h", "s", "k"):
        rows = [t for t in results if t.moment == moment and np.isfinite(t.p_value)]
        out[moment] = {
            a: 100.0 * np.mean([t.p_value >= a for t in rows]) if rows else np.nan
            for a in alphas
        }
    return out
