"""Synthetic market generator with analytically known conditional moments.

Returns follow r[i,t] = mu[i,t] + loadings[i]'F[t] + sqrt(h[i,t])*eta[i,t]
with GARCH(1,1) idiosyncratic variance and i.i.d. standardized
innovations (normal or a two-component normal mixture). The recorded
truth panel carries the idiosyncratic conditional law: mu as generated,
h from the recursion, and the constant skewness/kurtosis of the
innovation law. With zero factor loadings this is the exact conditional
law of the returns, which is what the oracle tests use.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .data import FactorPanel, PricePanel
from .io import write_csv
from .stats import normal_cdf, normal_quantile


class DgpError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    """Two-component (or longer) normal mixture, standardized internally."""
    weights: tuple
    means: tuple
    scales: tuple

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.scales)):
            raise DgpError("mixture component lists must share a length")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) <= 0:
            raise DgpError("mixture weights must be positive and sum to 1")
        if min(self.scales) <= 0:
            raise DgpError("mixture scales must be positive")


def mixture_moments(weights, means, scales):
    """(skewness, kurtosis) of the standardized normal mixture."""
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    s = np.asarray(scales, dtype=float)
    mean = np.sum(w * m)
    var = np.sum(w * (s**2 + m**2)) - mean**2
    if var <= 0:
        raise DgpError("degenerate mixture variance")
    dm = m - mean
    m3 = np.sum(w * (dm**3 + 3 * dm * s**2))
    m4 = np.sum(w * (dm**4 + 6 * dm**2 * s**2 + 3 * s**4))
    return float(m3 / var**1.5), float(m4 / var**2)


def _mixture_standardized(spec: MixtureSpec):
    w = np.asarray(spec.weights, dtype=float)
    m = np.asarray(spec.means, dtype=float)
    s = np.asarray(spec.scales, dtype=float)
    mean = np.sum(w * m)
    sd = np.sqrt(np.sum(w * (s**2 + m**2)) - mean**2)
    return w, (m - mean) / sd, s / sd


def mixture_cdf(spec: MixtureSpec, x):
    w, m, s = _mixture_standardized(spec)
    return float(sum(wi * normal_cdf((x - mi) / si) for wi, mi, si in zip(w, m, s)))


def mixture_quantile(spec: MixtureSpec, tau, tol=1e-10):
    """Quantile of the standardized mixture by bisection on its cdf."""
    if not 0.0 < tau < 1.0:
        raise DgpError(f"quantile level must be in (0,1), got {tau}")
    lo, hi = -50.0, 50.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mixture_cdf(spec, mid) < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class StockSpec:
    mean_shift: float
    garch_omega: float
    garch_a: float
    garch_b: float
    innovation: MixtureSpec | None = None   # None = standard normal
    signal_scale: float = 1.0               # multiplier on the dynamic mean components

    def __post_init__(self):
        if self.garch_omega <= 0:
            raise DgpError("garch omega must be positive")
        if self.garch_a < 0 or self.garch_b < 0 or self.garch_a + self.garch_b >= 1:
            raise DgpError("need a,b >= 0 and a+b < 1 for stationarity")

    def innovation_moments(self):
        if self.innovation is None:
            return 0.0, 3.0
        return mixture_moments(self.innovation.weights, self.innovation.means,
                               self.innovation.scales)

    def innovation_quantile(self, tau):
        if self.innovation is None:
            return normal_quantile(tau)
        return mixture_quantile(self.innovation, tau)


@dataclass(frozen=True)
class DgpSpec:
    stocks: tuple                       # tuple[StockSpec]
    loadings: np.ndarray                # (N, B)
    n_days: int
    seed: int
    factor_scale: float = 0.003
    daily_risk_free: float = 0.0
    relations: tuple = ()               # (i, j, relation_id) triples
    n_relations: int = 0
    relation_names: tuple = ()
    momentum_amp: float = 0.0           # sd of the linear conditional-mean component
    momentum_window: int = 20           # lag window of shocks driving it
    nonlinear_amp: float = 0.0          # even (nonlinear) component on a 5-day window
    start_date: str = "2013-01-02"

    @property
    def n_stocks(self):
        return len(self.stocks)

    @property
    def n_factors(self):
        return self.loadings.shape[1]


@dataclass
class SyntheticDataset:
    spec: DgpSpec
    prices: PricePanel
    factors: FactorPanel
    true_mu: np.ndarray         # (N, T)
    true_variance: np.ndarray   # (N, T)
    true_skewness: np.ndarray   # (N, T)
    true_kurtosis: np.ndarray   # (N, T)

    def true_quantile(self, i, t, tau):
        """mu + sqrt(h) * (innovation quantile); exact conditional quantile
        of the return when the stock's factor loadings are zero."""
        q_eta = self.spec.stocks[i].innovation_quantile(tau)
        return float(self.true_mu[i, t] + np.sqrt(self.true_variance[i, t]) * q_eta)

    def true_quantile_panel(self, levels, days=None):
        """(N, D, K) exact quantile panel (vectorized over days)."""
        days = np.arange(self.spec.n_days) if days is None else np.asarray(days)
        q_eta = np.array([[self.spec.stocks[i].innovation_quantile(tau)
                           for tau in levels] for i in range(self.spec.n_stocks)])
        sig = np.sqrt(self.true_variance[:, days])
        return self.true_mu[:, days, None] + sig[:, :, None] * q_eta[:, None, :]


def trading_dates(n_days, start="2013-01-02"):
    """Deterministic weekday sequence in ISO format."""
    out = []
    day = _dt.date.fromisoformat(start)
    while len(out) < n_days:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += _dt.timedelta(days=1)
    return tuple(out)


def garch_path(omega, a, b, eta):
    """Variance path and shocks for one innovation sequence.

    h starts at the stationary level omega/(1-a-b); thereafter
    h[t] = omega + a*eps[t-1]^2 + b*h[t-1].
    """
    t_len = len(eta)
    h = np.empty(t_len)
    eps = np.empty(t_len)
    h[0] = omega / (1.0 - a - b)
    for t in range(t_len):
        eps[t] = np.sqrt(h[t]) * eta[t]
        if t + 1 < t_len:
            h[t + 1] = omega + a * eps[t] ** 2 + b * h[t]
    return h, eps


def _window_z(eta, win):
    """Unit-variance rolling shock averages: mean(eta[t-win:t]) * sqrt(win),
    one value per t in [win, len(eta))."""
    csum = np.cumsum(eta)
    sums = csum[win - 1 : -1] - np.concatenate([[0.0], csum[: -win - 1]])
    return sums / np.sqrt(win)


def _draw_standardized(rng, spec: MixtureSpec | None, size):
    if spec is None:
        return rng.standard_normal(size)
    w, m, s = _mixture_standardized(spec)
    comp = rng.choice(len(w), p=w, size=size)
    return m[comp] + s[comp] * rng.standard_normal(size)


def generate(spec: DgpSpec) -> SyntheticDataset:
    n, b, t_len = spec.n_stocks, spec.n_factors, spec.n_days
    if spec.loadings.shape != (n, b):
        raise DgpError(f"loadings shape {spec.loadings.shape} != ({n},{b})")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2718281828]))
    factor_vals = rng.normal(scale=spec.factor_scale, size=(b, t_len))
    returns = np.empty((n, t_len))
    true_mu = np.empty((n, t_len))
    true_h = np.empty((n, t_len))
    true_s = np.empty((n, t_len))
    true_k = np.empty((n, t_len))
    for i, stock in enumerate(spec.stocks):
        eta = _draw_standardized(rng, stock.innovation, t_len)
        h, eps = garch_path(stock.garch_omega, stock.garch_a, stock.garch_b, eta)
        s_i, k_i = stock.innovation_moments()
        mu = np.full(t_len, stock.mean_shift)
        if spec.momentum_amp or spec.nonlinear_amp:
            # conditional mean responds to lagged standardized shocks, so the
            # response amplitude is common across stocks and the process has
            # no feedback loop: a linear piece on a slow shock window (which
            # the slow return-MA features proxy) plus an even (nonlinear)
            # piece on a 5-day window that has zero projection on any linear
            # function of the return features
            win = spec.momentum_window
            if spec.momentum_amp:
                mu[win:] += stock.signal_scale * spec.momentum_amp * _window_z(eta, win)
            if spec.nonlinear_amp:
                z5 = _window_z(eta, 5)
                mu[5:] += stock.signal_scale * spec.nonlinear_amp * (np.abs(np.tanh(z5)) - 0.5)
        returns[i] = mu + spec.loadings[i] @ factor_vals + eps
        true_mu[i] = mu
        true_h[i] = h
        true_s[i] = s_i
        true_k[i] = k_i
    dates = trading_dates(t_len, spec.start_date)
    tickers = tuple(f"S{i:04d}" for i in range(n))
    prices = PricePanel(tickers=tickers, dates=dates, returns=returns)
    factors = FactorPanel(names=("mkt_rf", "smb", "hml", "rmw", "cma")[:b],
                          dates=dates, values=factor_vals,
                          risk_free=np.full(t_len, spec.daily_risk_free))
    return SyntheticDataset(spec=spec, prices=prices, factors=factors,
                            true_mu=true_mu, true_variance=true_h,
                            true_skewness=true_s, true_kurtosis=true_k)


def emit_csv_tree(ds: SyntheticDataset, outdir, provenance=None):
    """Write the CSV files the ingestion stages consume."""
    import os

    os.makedirs(outdir, exist_ok=True)
    spec = ds.spec
    rows = [(d, tick, ds.prices.returns[i, t])
            for t, d in enumerate(ds.prices.dates)
            for i, tick in enumerate(ds.prices.tickers)]
    write_csv(os.path.join(outdir, "prices.csv"), ["date", "ticker", "return"],
              rows, provenance)
    frows = [(d, *ds.factors.values[:, t], ds.factors.risk_free[t])
             for t, d in enumerate(ds.factors.dates)]
    write_csv(os.path.join(outdir, "factors.csv"),
              ["date", *ds.factors.names, "rf"], frows, provenance)
    write_csv(os.path.join(outdir, "relations.csv"), ["i", "j", "relation_id"],
              [(str(i), str(j), str(m)) for i, j, m in spec.relations], provenance)
    names = spec.relation_names or tuple(f"relation_{m}" for m in range(spec.n_relations))
    write_csv(os.path.join(outdir, "relations_meta.csv"), ["relation_id", "name"],
              [(str(m), names[m]) for m in range(spec.n_relations)], provenance)
    trows = [(d, tick, ds.true_mu[i, t], ds.true_variance[i, t],
              ds.true_skewness[i, t], ds.true_kurtosis[i, t])
             for t, d in enumerate(ds.prices.dates)
             for i, tick in enumerate(ds.prices.tickers)]
    write_csv(os.path.join(outdir, "truth_moments.csv"),
              ["date", "ticker", "mu", "h", "s", "k"], trows, provenance)


def demo_market_spec(n_stocks=20, n_days=900, seed=0, group_gap=3e-4,
                     momentum_amp=5e-4, nonlinear_amp=0.0,
                     base_vols=(0.002, 0.0035), persistence=(0.06, 0.55)) -> DgpSpec:
    """A small two-group market: the second half of the stocks carries a
    higher conditional mean; vols alternate within each group; every even
    stock has normal innovations and every odd one a right-skewed mixture.

    Relations form four cliques, one per (mean group, vol class) cell.
    Feature normalization strips per-stock scale, so the graph is the
    channel through which the network can tell risk classes apart; tying
    cliques to the classes mirrors how sector relations correlate with
    risk characteristics in real panels."""
    if n_stocks % 4:
        raise DgpError("demo market needs a stock count divisible by 4")
    a, b = persistence
    half = n_stocks // 2
    mix = MixtureSpec(weights=(0.85, 0.15), means=(-0.1, 0.566666666667), scales=(0.7, 1.6))
    stocks = []
    for i in range(n_stocks):
        vol = base_vols[i % 2]
        stocks.append(StockSpec(
            mean_shift=(-group_gap / 2) if i < half else (group_gap / 2),
            garch_omega=vol**2 * (1 - a - b), garch_a=a, garch_b=b,
            innovation=None if i % 2 == 0 else mix,
            signal_scale=1.0 if i % 2 == 0 else 0.25))
    loadings = np.tile(np.array([1.0, 0.5, 0.3, 0.2, 0.1]) * 0.25, (n_stocks, 1))
    clique = {i: 2 * (i >= half) + i % 2 for i in range(n_stocks)}
    relations = tuple((i, j, clique[i]) for i in range(n_stocks)
                      for j in range(i + 1, n_stocks) if clique[i] == clique[j])
    return DgpSpec(stocks=tuple(stocks), loadings=loadings, n_days=n_days,
                   seed=seed, relations=relations, n_relations=4,
                   relation_names=("low_calm", "low_wild", "high_calm", "high_wild"),
                   momentum_amp=momentum_amp, nonlinear_amp=nonlinear_amp)
