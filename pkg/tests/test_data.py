import numpy as np
import pytest

from grace.data import (DataLoadError, FactorPanel, PricePanel, SplitSpec,
                        build_feature_series, load_factors, load_prices,
                        moving_average, normalize_features, rolling_factor_exposures,
                        MA_WINDOWS)

FACTOR_NAMES = ("mkt_rf", "smb", "hml", "rmw", "cma")


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def make_panels(n=3, t=400, seed=0, factor_scale=0.003):
    rng = np.random.default_rng(seed)
    rets = rng.normal(scale=0.01, size=(n, t))
    facs = rng.normal(scale=factor_scale, size=(5, t))
    dates = tuple(f"d{i:05d}" for i in range(t))
    prices = PricePanel(tickers=tuple(f"S{i}" for i in range(n)), dates=dates, returns=rets)
    factors = FactorPanel(names=FACTOR_NAMES, dates=dates, values=facs,
                          risk_free=np.zeros(t))
    return prices, factors


class TestLoadPrices:
    def test_close_to_returns(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "date,ticker,close\n"
                     "2020-01-01,AAA,1\n2020-01-02,AAA,1.1\n2020-01-03,AAA,1.21\n")
        panel = load_prices(path)
        assert panel.dates == ("2020-01-02", "2020-01-03")
        assert np.allclose(panel.returns, [[0.10, 0.10]], atol=1e-12)

    def test_returns_pass_through(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "date,ticker,return\n"
                     "2020-01-01,AAA,0.01\n2020-01-01,BBB,-0.02\n"
                     "2020-01-02,AAA,0.005\n2020-01-02,BBB,0.0\n")
        panel = load_prices(path)
        assert panel.tickers == ("AAA", "BBB")
        assert np.array_equal(panel.returns, [[0.01, 0.005], [-0.02, 0.0]])

    def test_duplicate_row_errors(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "date,ticker,return\n2020-01-01,AAA,0.01\n2020-01-01,AAA,0.02\n")
        with pytest.raises(DataLoadError, match="duplicate"):
            load_prices(path)

    def test_non_monotone_dates_error(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "date,ticker,return\n2020-01-02,AAA,0.01\n2020-01-01,AAA,0.02\n")
        with pytest.raises(DataLoadError, match="non-monotone"):
            load_prices(path)

    def test_incomplete_stock_dropped(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "date,ticker,return\n2020-01-01,AAA,0.01\n2020-01-01,BBB,0.02\n"
                     "2020-01-02,AAA,0.01\n")
        panel = load_prices(path)
        assert panel.tickers == ("AAA",)
        assert panel.dropped == ("BBB",)

    def test_comment_lines_skipped(self, tmp_path):
        path = write(tmp_path, "p.csv",
                     "# config=abc seed=1\ndate,ticker,return\n2020-01-01,AAA,0.01\n")
        assert load_prices(path).n_days == 1


class TestMovingAverage:
    def test_constant_returns(self):
        rets = np.full((1, 50), 0.01)
        for k in MA_WINDOWS:
            assert moving_average(rets, k, 0, 49) == pytest.approx(0.01)

    def test_arithmetic(self):
        rets = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        assert moving_average(rets, 5, 0, 4) == pytest.approx(3.0)

    def test_k1_is_raw_return(self):
        rng = np.random.default_rng(0)
        rets = rng.normal(size=(2, 40))
        for t in range(40):
            assert moving_average(rets, 1, 1, t) == pytest.approx(rets[1, t])

    def test_insufficient_history(self):
        with pytest.raises(DataLoadError):
            moving_average(np.ones((1, 10)), 5, 0, 3)


class TestExposures:
    def test_exact_single_factor(self):
        prices, factors = make_panels(t=300, seed=1)
        prices.returns[0] = factors.values[0]      # stock 0 is factor 1 exactly
        lam = rolling_factor_exposures(prices, factors, 0, 299, window=126)
        assert np.allclose(lam, [1, 0, 0, 0, 0], atol=1e-8)

    def test_constant_stock_zero_slopes(self):
        prices, factors = make_panels(t=300, seed=2)
        prices.returns[1] = 0.004
        lam = rolling_factor_exposures(prices, factors, 1, 299, window=126)
        assert np.allclose(lam, 0.0, atol=1e-10)

    def test_generate_and_refit(self):
        prices, factors = make_panels(t=400, seed=3)
        rng = np.random.default_rng(4)
        prices.returns[2] = (0.5 * factors.values[0] + 2.0 * factors.values[2]
                             + rng.normal(scale=1e-4, size=400))
        lam = rolling_factor_exposures(prices, factors, 2, 399, window=126)
        assert np.allclose(lam, [0.5, 0, 2.0, 0, 0], atol=1e-2)

    def test_insufficient_history(self):
        prices, factors = make_panels()
        with pytest.raises(DataLoadError):
            rolling_factor_exposures(prices, factors, 0, 100, window=126)


class TestFeatureSeries:
    def test_layout_against_manual_oracle(self):
        prices, factors = make_panels(n=1, t=300, seed=5)
        feats = build_feature_series(prices, factors)
        t = 280
        # stock rows: the five moving averages, then the five exposures
        for row, k in enumerate(MA_WINDOWS):
            expect = np.mean(prices.returns[0, t - k + 1 : t + 1])
            assert feats.values[0, row, t] == pytest.approx(expect, abs=1e-12)
        lam = rolling_factor_exposures(prices, factors, 0, t)
        assert np.allclose(feats.values[0, 5:, t], lam, atol=1e-12)
        # factor entity: value moving averages, then the self-exposure pattern
        for fac in range(5):
            for row, k in enumerate(MA_WINDOWS):
                expect = np.mean(factors.values[fac, t - k + 1 : t + 1])
                assert feats.values[1 + fac, row, t] == pytest.approx(expect, abs=1e-12)
            assert np.array_equal(feats.values[1 + fac, 5:, t],
                                  np.eye(5)[fac])

    def test_factor_exposure_unit_vector_across_lags(self):
        prices, factors = make_panels(n=2, t=300, seed=6)
        feats = build_feature_series(prices, factors)
        block = feats.lag_block(200, 8)
        for fac in range(5):
            rows = block[2 + fac, 5:, :]
            assert np.array_equal(rows, np.tile(np.eye(5)[fac][:, None], (1, 8)))

    def test_constant_market_constant_ma_rows(self):
        prices, factors = make_panels(n=2, t=300, seed=7)
        prices.returns[:] = 0.002
        feats = build_feature_series(prices, factors)
        span = feats.values[:2, :5, feats.first_valid:]
        assert np.allclose(span, 0.002, atol=1e-15)

    def test_strict_causality(self):
        prices, factors = make_panels(n=2, t=320, seed=8)
        feats = build_feature_series(prices, factors)
        block = feats.lag_block(300, 8).copy()
        prices.returns[0, 300] += 5.0     # perturb the target day itself
        feats2 = build_feature_series(prices, factors)
        assert np.array_equal(block, feats2.lag_block(300, 8))

    def test_insufficient_history_error(self):
        prices, factors = make_panels(n=2, t=300, seed=9)
        feats = build_feature_series(prices, factors)
        with pytest.raises(DataLoadError, match="earliest usable"):
            feats.lag_block(feats.first_valid + 3, 8)

    def test_deterministic_rebuild(self):
        prices, factors = make_panels(n=3, t=300, seed=10)
        a = build_feature_series(prices, factors).values
        b = build_feature_series(prices, factors).values
        assert a.tobytes() == b.tobytes()


class TestNormalize:
    def test_range_formula_and_boundaries(self):
        prices, factors = make_panels(n=2, t=320, seed=11)
        raw = build_feature_series(prices, factors)
        normed = normalize_features(raw, train_end=250)
        lo, hi = normed.stat_min[0, 0], normed.stat_max[0, 0]
        t = np.argmax(raw.values[0, 0, raw.first_valid : 250]) + raw.first_valid
        assert normed.values[0, 0, t] == pytest.approx(1.0)
        t = np.argmin(raw.values[0, 0, raw.first_valid : 250]) + raw.first_valid
        assert normed.values[0, 0, t] == pytest.approx(0.0)
        mid = 0.5 * (lo + hi)
        v = (mid - lo) / (hi - lo)
        assert v == pytest.approx(0.5)

    def test_no_clipping_out_of_sample(self):
        prices, factors = make_panels(n=2, t=320, seed=12)
        prices.returns[0, 300] = 0.5      # extreme value in the test span
        raw = build_feature_series(prices, factors)
        normed = normalize_features(raw, train_end=250)
        assert normed.values[0, 0, 300] > 1.0

    def test_zero_range_rows_zeroed_and_recorded(self):
        prices, factors = make_panels(n=2, t=320, seed=13)
        raw = build_feature_series(prices, factors)
        normed = normalize_features(raw, train_end=250)
        # factor self-exposure rows are constants, so they are flattened to 0
        assert len(normed.zero_range_rows) == 25
        for e, r in normed.zero_range_rows:
            assert np.all(normed.values[e, r, :] == 0.0)

    def test_stats_ignore_test_span(self):
        prices, factors = make_panels(n=2, t=320, seed=14)
        raw = build_feature_series(prices, factors)
        a = normalize_features(raw, train_end=250)
        prices.returns[1, 310] += 3.0
        b = normalize_features(build_feature_series(prices, factors), train_end=250)
        assert np.array_equal(a.stat_min, b.stat_min)
        assert np.array_equal(a.stat_max, b.stat_max)


def test_split_validation():
    SplitSpec(10, 20, 30).validate(30)
    with pytest.raises(DataLoadError):
        SplitSpec(20, 10, 30).validate(30)
    with pytest.raises(DataLoadError):
        SplitSpec(10, 20, 31).validate(30)


def test_load_factors(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("date,mkt_rf,smb,hml,rmw,cma,rf\n"
                    "2020-01-01,0.001,0.002,0.003,0.004,0.005,0.0001\n")
    panel = load_factors(str(path))
    assert panel.values[:, 0] == pytest.approx([0.001, 0.002, 0.003, 0.004, 0.005])
    assert panel.risk_free[0] == pytest.approx(0.0001)
