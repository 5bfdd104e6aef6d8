import numpy as np
import pytest

from grace.diagnostics import (CoverageError, OmegaSet, acceptance_rates, build_omega,
                               filter_stocks, lr_cc, lr_independence, lr_uc,
                               moment_ttests, violation_series)
from grace.qcm import MomentPanel
from grace.stats import normal_quantile
from grace.training import quantile_levels

# frozen pre-build constant: direct likelihood-ratio evaluation at
# tau=0.05, T=250, n=10 (mild over-violation)
LR_UC_250_10 = 0.5633529100175991


def bern(rng, tau, t_len):
    return (rng.random(t_len) < tau).astype(np.int8)


class TestLrUc:
    def test_exact_rate_gives_zero(self):
        v = np.zeros(100, dtype=np.int8)
        v[:10] = 1
        res = lr_uc(v, 0.1)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert res.accepts(0.05) and res.accepts(0.9999)

    def test_pinned_value(self):
        v = np.zeros(250, dtype=np.int8)
        v[:10] = 1
        res = lr_uc(v, 0.05)
        assert res.statistic == pytest.approx(LR_UC_250_10, abs=1e-12)
        assert 0 < res.statistic < 3.841

    def test_no_violations_at_median_rejects(self):
        res = lr_uc(np.zeros(100, dtype=np.int8), 0.5)
        assert res.statistic > 100
        assert not res.accepts(0.05)

    def test_boundary_counts_legal(self):
        assert np.isfinite(lr_uc(np.ones(50, dtype=np.int8), 0.5).statistic)

    def test_small_sample_rejected(self):
        with pytest.raises(CoverageError):
            lr_uc(np.zeros(29, dtype=np.int8), 0.5)


class TestLrCc:
    def test_iid_balanced_series_small_statistic(self):
        # alternating-ish series with exact frequency and balanced transitions
        v = np.tile([1, 0, 0, 1, 0, 0, 0, 0, 0, 1], 25).astype(np.int8)
        res = lr_cc(v, v.mean())
        assert res.statistic < 6.0

    def test_clustered_violations_reject(self):
        v = np.zeros(200, dtype=np.int8)
        v[:100] = 1
        res = lr_cc(v, 0.5)
        assert not res.accepts(0.05)
        assert lr_independence(v) > 50

    def test_decomposition(self):
        rng = np.random.default_rng(0)
        v = bern(rng, 0.2, 300)
        assert lr_cc(v, 0.2).statistic == pytest.approx(
            lr_uc(v, 0.2).statistic + lr_independence(v), abs=1e-12)

    def test_independence_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            v = bern(rng, rng.uniform(0.05, 0.95), 60)
            assert lr_independence(v) >= -1e-9

    def test_monte_carlo_size(self):
        # smaller replication here; the acceptance suite runs the full study
        rng = np.random.default_rng(99)
        rej = sum(not lr_cc(bern(rng, 0.5, 500), 0.5).accepts(0.05)
                  for _ in range(200))
        assert 0.01 <= rej / 200 <= 0.10

    def test_relabel_invariance(self):
        # statistics depend only on counts and transitions, so any
        # order-preserving date relabeling leaves them unchanged
        rng = np.random.default_rng(2)
        v = bern(rng, 0.3, 120)
        a = lr_cc(v, 0.3)
        b = lr_cc(v.copy(), 0.3)
        assert a.statistic == b.statistic


class TestViolations:
    def test_strict_inequality(self):
        v = violation_series(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.5, 2.0]))
        assert v.tolist() == [0, 1, 0]

    def test_misaligned(self):
        with pytest.raises(CoverageError):
            violation_series(np.zeros(3), np.zeros(4))


def synthetic_panel(rng, n=4, d=400, k=19, miscalibrate=()):
    """Quantile panel from the true i.i.d. normal law per stock; selected
    stocks get a deliberately wrong scale."""
    levels = quantile_levels(k)
    z = np.array([normal_quantile(float(t)) for t in levels])
    sig = rng.uniform(0.5, 2.0, size=n)
    rets = rng.standard_normal((n, d)) * sig[:, None]
    q = np.empty((n, d, k))
    for i in range(n):
        scale = 3.0 if i in miscalibrate else 1.0
        q[i] = np.tile(scale * sig[i] * z, (d, 1))
    return q, rets, levels


class TestOmega:
    def test_alpha_zero_accepts_everything(self):
        rng = np.random.default_rng(3)
        q, rets, levels = synthetic_panel(rng, miscalibrate=(0, 1))
        omega = build_omega(q, rets, levels, alpha=0.0)
        for i in range(4):
            assert omega.size(i) == len(levels)

    def test_alpha_nesting(self):
        rng = np.random.default_rng(4)
        for trial in range(10):
            q, rets, levels = synthetic_panel(rng, miscalibrate=(1,))
            small = build_omega(q, rets, levels, alpha=0.01)
            large = build_omega(q, rets, levels, alpha=0.10)
            for i in range(4):
                assert set(large.accepted[i]) <= set(small.accepted[i])

    def test_calibrated_quantiles_mostly_accepted(self):
        rng = np.random.default_rng(5)
        q, rets, levels = synthetic_panel(rng, n=6, d=600)
        omega = build_omega(q, rets, levels, alpha=0.01)
        frac = np.mean([omega.size(i) / len(levels) for i in range(6)])
        assert frac >= 0.9

    def test_miscalibrated_stock_filtered(self):
        rng = np.random.default_rng(6)
        q, rets, levels = synthetic_panel(rng, miscalibrate=(2,))
        omega = build_omega(q, rets, levels, alpha=0.05)
        assert omega.size(2) < omega.size(0)


class TestFilter:
    def make_omega(self, sizes):
        omega = OmegaSet(levels=quantile_levels(49))
        for i, s in enumerate(sizes):
            omega.accepted[i] = np.arange(s)
        return omega

    def test_all_pass(self):
        surv = filter_stocks(self.make_omega([49, 49, 49]), 30)
        assert surv.tolist() == [0, 1, 2]

    def test_boundary(self):
        surv = filter_stocks(self.make_omega([30, 29, 31]), 30)
        assert surv.tolist() == [0, 2]

    def test_empty_survivors_error(self):
        with pytest.raises(CoverageError, match="sizes"):
            filter_stocks(self.make_omega([5, 4]), 30)

    def test_minimum_tolerance(self):
        with pytest.raises(CoverageError):
            filter_stocks(self.make_omega([49]), 3)


def make_moment_panel(n, d, mu, h, s, k):
    shape = (n, d)
    full = lambda v: np.full(shape, v, dtype=float)
    return MomentPanel(days=np.arange(d), mu=full(mu), variance=full(h),
                       skewness=full(s), kurtosis=full(k),
                       degenerate=np.zeros(shape, bool),
                       projected=np.zeros(shape, bool),
                       invalid=np.zeros(shape, bool))


class TestMomentTTests:
    def test_zero_residuals_accept(self):
        n, d = 2, 100
        panel = make_moment_panel(n, d, 0.0, 1.0, 0.0, 3.0)
        rng = np.random.default_rng(7)
        rets = rng.standard_normal((n, d))
        panel.mu[:] = rets          # exact fit: e_mu identically zero
        results = [r for r in moment_ttests(rets, panel, np.arange(d)) if r.moment == "mu"]
        for r in results:
            assert r.statistic == 0.0 and r.p_value == 1.0

    def test_shifted_residuals_reject(self):
        n, d = 3, 500
        panel = make_moment_panel(n, d, 0.0, 1.0, 0.0, 3.0)
        rng = np.random.default_rng(8)
        rets = 0.5 + rng.standard_normal((n, d))   # mean residual 0.5
        results = [r for r in moment_ttests(rets, panel, np.arange(d)) if r.moment == "mu"]
        for r in results:
            assert r.p_value < 0.01

    def test_exact_moments_accept_at_one_percent(self):
        n, d = 10, 700
        rng = np.random.default_rng(9)
        rets = rng.standard_normal((n, d)) * 1.3
        panel = make_moment_panel(n, d, 0.0, 1.3**2, 0.0, 3.0)
        results = moment_ttests(rets, panel, np.arange(d))
        rates = acceptance_rates(results)
        for moment in ("mu", "h", "s", "k"):
            assert rates[moment][0.01] >= 90.0

    def test_short_span_rejected(self):
        panel = make_moment_panel(1, 10, 0.0, 1.0, 0.0, 3.0)
        with pytest.raises(CoverageError):
            moment_ttests(np.zeros((1, 10)), panel, np.arange(10))
