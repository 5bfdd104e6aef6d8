"""Command-line pipeline: synth -> featurize -> train -> predict ->
validate -> qcm -> backtest -> report, plus run-all chaining them.

Stage boundaries are files under the configured output directory so the
expensive training stage is restartable. Every emitted file carries the
config hash and seed; re-running a stage with unchanged inputs rewrites
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import multiprocessing
import os
import sys

import numpy as np

from .backtest import (BacktestError, MeasureSpec, annualize, compute_measure,
                       grid_search_lambdas, longshort_returns)
from .baselines import fit_linear, load_linear, predict_linear, save_linear
from .config import ConfigError, RunConfig, load_config
from .data import (DataLoadError, FeatureSeries, SplitSpec, build_feature_series,
                   load_factors, load_prices, normalize_features)
from .diagnostics import CoverageError, acceptance_rates, build_omega, filter_stocks, moment_ttests
from .graph import GraphLoadError, build_hypergraph, load_relation_edges, load_relation_names
from .io import load_arrays, save_arrays, write_csv
from .model import load_checkpoint, save_checkpoint
from .qcm import QcmError, qcm_panel
from .synth import DgpError, demo_market_spec, emit_csv_tree, generate
from .training import (QuantilePanel, TrainConfig, TrainData, TrainingError,
                       predict_panel, quantile_levels, train_model)

STAGE_ERRORS = (ConfigError, DataLoadError, GraphLoadError, TrainingError,
                QcmError, CoverageError, BacktestError, DgpError,
                FileNotFoundError, ValueError)


class Paths:
    def __init__(self, cfg: RunConfig):
        self.out = cfg.outdir
        self.models = os.path.join(self.out, "models")
        self.logs = os.path.join(self.out, "logs")
        self.panels = os.path.join(self.out, "panels")
        self.reports = os.path.join(self.out, "reports")
        self.features = os.path.join(self.out, "features.bin")
        self.quantiles = os.path.join(self.out, "panels", "quantiles.bin")
        self.omega = os.path.join(self.out, "panels", "omega.bin")
        self.omega_csv = os.path.join(self.out, "panels", "omega.csv")
        self.moments = os.path.join(self.out, "panels", "moments.bin")
        self.moments_csv = os.path.join(self.out, "panels", "moments.csv")
        self.report_csv = os.path.join(self.out, "reports", "report.csv")
        self.lambdas_csv = os.path.join(self.out, "reports", "lambdas.csv")
        self.config_echo = os.path.join(self.out, "config_echo.txt")

    def ensure(self):
        for d in (self.out, self.models, self.logs, self.panels, self.reports):
            os.makedirs(d, exist_ok=True)

    def checkpoint(self, cfg, kind, tau=None):
        prefix = "linear" if cfg.method == "grace2" else "model"
        name = f"{prefix}_mean.ckpt" if kind == "mean" else f"{prefix}_tau_{tau:.6f}.ckpt"
        return os.path.join(self.models, name)

    def train_log(self, kind, tau=None):
        name = "train_mean.csv" if kind == "mean" else f"train_tau_{tau:.6f}.csv"
        return os.path.join(self.logs, name)


def echo_config(cfg: RunConfig):
    paths = Paths(cfg)
    paths.ensure()
    with open(paths.config_echo, "w") as fh:
        fh.write(f"# {cfg.provenance()}\n")
        fh.write(cfg.canonical_text())


def stage_synth(cfg: RunConfig):
    data_dir = os.path.dirname(cfg.prices) or "."
    expected = {"prices.csv": cfg.prices, "factors.csv": cfg.factors,
                "relations.csv": cfg.relations}
    for base, path in expected.items():
        if os.path.basename(path) != base:
            raise ConfigError(
                f"synth writes canonical file names; {path!r} should end in {base!r}")
    spec = demo_market_spec(n_stocks=cfg.synth_stocks, n_days=cfg.synth_days,
                            seed=cfg.seed, group_gap=cfg.synth_group_gap,
                            momentum_amp=cfg.synth_momentum,
                            nonlinear_amp=cfg.synth_nonlinear)
    ds = generate(spec)
    emit_csv_tree(ds, data_dir, provenance=cfg.provenance())
    return ds


def stage_featurize(cfg: RunConfig):
    paths = Paths(cfg)
    paths.ensure()
    echo_config(cfg)
    prices = load_prices(cfg.prices)
    factors = load_factors(cfg.factors)
    split = SplitSpec(cfg.train_end, cfg.valid_end, cfg.test_end)
    split.validate(prices.n_days)
    feats = normalize_features(build_feature_series(prices, factors), cfg.train_end)
    arrays = {"values": feats.values, "stat_min": feats.stat_min,
              "stat_max": feats.stat_max, "returns": prices.returns,
              "factor_values": factors.values, "risk_free": factors.risk_free}
    meta = {"provenance": cfg.provenance(), "tickers": list(prices.tickers),
            "dates": list(prices.dates), "first_valid": feats.first_valid,
            "n_stocks": feats.n_stocks, "n_factors": feats.n_factors,
            "split": [cfg.train_end, cfg.valid_end, cfg.test_end],
            "zero_range_rows": [list(zr) for zr in feats.zero_range_rows]}
    save_arrays(paths.features, arrays, meta)
    return paths.features


def load_features_bundle(cfg: RunConfig):
    paths = Paths(cfg)
    arrays, meta = load_arrays(paths.features)
    feats = FeatureSeries(values=arrays["values"], first_valid=int(meta["first_valid"]),
                          n_stocks=int(meta["n_stocks"]), n_factors=int(meta["n_factors"]),
                          stat_min=arrays["stat_min"], stat_max=arrays["stat_max"],
                          zero_range_rows=[tuple(zr) for zr in meta["zero_range_rows"]])
    split = SplitSpec(*meta["split"])
    data = TrainData(features=feats, returns=arrays["returns"], split=split)
    extras = {"tickers": meta["tickers"], "dates": meta["dates"],
              "factor_values": arrays["factor_values"], "risk_free": arrays["risk_free"]}
    return data, extras


def build_graph_for(cfg: RunConfig, n_stocks, n_factors):
    edges = load_relation_edges(cfg.relations)
    n_relations = None
    if os.path.exists(cfg.relations_meta):
        names = load_relation_names(cfg.relations_meta)
        n_relations = (max(names) + 1) if names else 0
    return build_hypergraph(edges, n_stocks, n_factors, n_relations=n_relations,
                            include_factors=(cfg.method != "grace1"))


def _train_cfg(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.learning_rate, order_penalty=cfg.order_penalty,
                       lag_count=cfg.lag, hidden=cfg.hidden, max_epochs=cfg.max_epochs,
                       patience=cfg.patience, seed=cfg.seed)


def _train_one_network(cfg: RunConfig, kind, tau, level_index):
    data, _ = load_features_bundle(cfg)
    graph = build_graph_for(cfg, data.features.n_stocks, data.features.n_factors)
    result = train_model(kind, tau, data, graph, _train_cfg(cfg), level_index=level_index)
    paths = Paths(cfg)
    meta = {"provenance": cfg.provenance(), "method": cfg.method, "model": kind,
            "tau": tau, "level_index": level_index, "seed": cfg.seed,
            "best_epoch": result.best_epoch, "best_valid": result.best_valid}
    save_checkpoint(paths.checkpoint(cfg, kind, tau), result.params, meta)
    write_csv(paths.train_log(kind, tau), ["epoch", "train_loss", "valid_loss"],
              result.log, provenance=cfg.provenance())
    return result.best_valid


def _worker(job):
    cfg_values, kind, tau, level_index = job
    cfg = RunConfig(**cfg_values)
    _train_one_network(cfg, kind, tau, level_index)
    return (kind, tau)


def stage_train(cfg: RunConfig):
    from dataclasses import asdict

    paths = Paths(cfg)
    paths.ensure()
    echo_config(cfg)
    levels = quantile_levels(cfg.n_levels)
    if cfg.method == "grace2":
        return _train_linear_family(cfg, levels)
    jobs = [(asdict(cfg), "quantile", float(tau), k + 1) for k, tau in enumerate(levels)]
    jobs.append((asdict(cfg), "mean", None, 0))
    if cfg.jobs > 1:
        with multiprocessing.Pool(cfg.jobs) as pool:
            pool.map(_worker, jobs)
    else:
        for job in jobs:
            _worker(job)
    return len(jobs)


def _train_linear_family(cfg: RunConfig, levels):
    data, extras = load_features_bundle(cfg)
    graph = build_graph_for(cfg, data.features.n_stocks, data.features.n_factors)
    collapsed = graph.collapse()
    paths = Paths(cfg)
    for k, tau in enumerate(levels):
        fit = fit_linear("quantile", float(tau), data, collapsed, extras["factor_values"])
        meta = {"provenance": cfg.provenance(), "method": cfg.method, "model": "quantile",
                "tau": float(tau), "level_index": k + 1, "seed": cfg.seed,
                "iterations": fit.iterations, "dead_columns": fit.dead_columns}
        save_linear(paths.checkpoint(cfg, "quantile", float(tau)), fit.params, meta)
    fit = fit_linear("mean", None, data, collapsed, extras["factor_values"])
    save_linear(paths.checkpoint(cfg, "mean"), fit.params,
                {"provenance": cfg.provenance(), "method": cfg.method, "model": "mean",
                 "tau": None, "level_index": 0, "seed": cfg.seed,
                 "iterations": fit.iterations, "dead_columns": fit.dead_columns})
    return len(levels) + 1


def stage_predict(cfg: RunConfig):
    paths = Paths(cfg)
    data, extras = load_features_bundle(cfg)
    graph = build_graph_for(cfg, data.features.n_stocks, data.features.n_factors)
    levels = quantile_levels(cfg.n_levels)
    if cfg.method == "grace2":
        days = data.days("all", 1)
        days = days[days >= data.features.first_valid + 1]
        collapsed = graph.collapse()
        values = np.empty((data.returns.shape[0], len(days), len(levels)))
        missing = []
        for k, tau in enumerate(levels):
            path = paths.checkpoint(cfg, "quantile", float(tau))
            if not os.path.exists(path):
                missing.append(float(tau))
                continue
            params, _ = load_linear(path)
            values[:, :, k] = predict_linear(params, data, collapsed,
                                             extras["factor_values"], days).T
        if missing:
            raise TrainingError(f"missing trained parameters for levels: {missing}")
        mean_params, _ = load_linear(paths.checkpoint(cfg, "mean"))
        mean = predict_linear(mean_params, data, collapsed, extras["factor_values"], days).T
    else:
        days = data.days("all", cfg.lag)
        by_level, missing = {}, []
        for tau in levels:
            path = paths.checkpoint(cfg, "quantile", float(tau))
            if not os.path.exists(path):
                missing.append(float(tau))
                continue
            by_level[float(tau)], _ = load_checkpoint(path)
        if missing:
            raise TrainingError(f"missing trained parameters for levels: {missing}")
        mean_params, _ = load_checkpoint(paths.checkpoint(cfg, "mean"))
        panel, mean_series = predict_panel(by_level, mean_params, data, graph, days)
        values, mean = panel.values, mean_series.T
    save_arrays(paths.quantiles,
                {"values": values, "mean": mean,
                 "days": np.asarray(days, dtype=float), "levels": levels},
                {"provenance": cfg.provenance(), "method": cfg.method})
    return paths.quantiles


def stage_validate(cfg: RunConfig):
    paths = Paths(cfg)
    data, extras = load_features_bundle(cfg)
    arrays, meta = load_arrays(paths.quantiles)
    days = arrays["days"].astype(int)
    levels = arrays["levels"]
    insample = days < cfg.valid_end
    omega = build_omega(arrays["values"][:, insample, :],
                        data.returns[:, days[insample]], levels, cfg.alpha)
    n, k = arrays["values"].shape[0], len(levels)
    accept = np.zeros((n, k))
    for i, idx in omega.accepted.items():
        accept[i, idx] = 1.0
    survivors = filter_stocks(omega, cfg.tolerance)
    surv_mask = np.zeros(n)
    surv_mask[survivors] = 1.0
    save_arrays(paths.omega, {"accept": accept, "survivors": surv_mask},
                {"provenance": cfg.provenance(), "alpha": cfg.alpha,
                 "tolerance": cfg.tolerance})
    tickers = extras["tickers"]
    write_csv(paths.omega_csv, ["ticker", "omega_size", "survived"],
              [(tickers[i], str(omega.size(i)), str(int(surv_mask[i])))
               for i in range(n)], provenance=cfg.provenance())
    return len(survivors)


def stage_qcm(cfg: RunConfig):
    paths = Paths(cfg)
    data, extras = load_features_bundle(cfg)
    q_arrays, _ = load_arrays(paths.quantiles)
    o_arrays, _ = load_arrays(paths.omega)
    days = q_arrays["days"].astype(int)
    levels = q_arrays["levels"]
    survivors = np.nonzero(o_arrays["survivors"] > 0)[0]
    omega_idx = {pos: np.nonzero(o_arrays["accept"][stock] > 0)[0]
                 for pos, stock in enumerate(survivors)}
    moments = qcm_panel(q_arrays["values"][survivors], days,
                        omega_indices=omega_idx, levels=levels,
                        mu=q_arrays["mean"][survivors])
    save_arrays(paths.moments,
                {"mu": moments.mu, "variance": moments.variance,
                 "skewness": moments.skewness, "kurtosis": moments.kurtosis,
                 "degenerate": moments.degenerate.astype(float),
                 "projected": moments.projected.astype(float),
                 "invalid": moments.invalid.astype(float),
                 "days": q_arrays["days"], "survivors": survivors.astype(float)},
                {"provenance": cfg.provenance()})
    tickers = extras["tickers"]
    dates = extras["dates"]
    rows = []
    for pos, stock in enumerate(survivors):
        for col, day in enumerate(days):
            rows.append((dates[day], tickers[stock], moments.mu[pos, col],
                         moments.variance[pos, col], moments.skewness[pos, col],
                         moments.kurtosis[pos, col],
                         str(int(moments.degenerate[pos, col])),
                         str(int(moments.projected[pos, col]))))
    write_csv(paths.moments_csv,
              ["date", "ticker", "mu", "h", "s", "k", "degenerate", "projected"],
              rows, provenance=cfg.provenance())
    return len(survivors)


def _load_moments(cfg: RunConfig):
    paths = Paths(cfg)
    arrays, _ = load_arrays(paths.moments)
    return arrays


def stage_backtest(cfg: RunConfig):
    paths = Paths(cfg)
    data, extras = load_features_bundle(cfg)
    m = _load_moments(cfg)
    days = m["days"].astype(int)
    survivors = m["survivors"].astype(int)
    rets = data.returns[survivors][:, days]
    rf = extras["risk_free"][days]
    insample = days < cfg.valid_end
    test = days >= cfg.valid_end
    cost = cfg.cost_bps / 1e4
    dates = extras["dates"]
    report_rows, lambda_rows = [], []
    for kind in cfg.measure_list():
        lams = (0.0, 0.0, 0.0)
        if kind in ("MV", "MVSK", "SRSK"):
            lams = grid_search_lambdas(
                kind, m["mu"][:, insample], m["variance"][:, insample],
                m["skewness"][:, insample], m["kurtosis"][:, insample],
                rets[:, insample], rf[insample], days[insample], cost)
        spec = MeasureSpec(kind, *lams)
        values = compute_measure(spec, m["mu"][:, test], m["variance"][:, test],
                                 m["skewness"][:, test], m["kurtosis"][:, test])
        series = longshort_returns(values, rets[:, test], days[test], cost)
        rep = annualize(series.net, rf[test])
        report_rows.append((cfg.method, kind, rep.ann_return_pct, rep.ann_risk_pct,
                            rep.sharpe))
        lambda_rows.append((kind, *lams))
        write_csv(os.path.join(paths.reports, f"series_{kind}.csv"),
                  ["date", "gross", "turnover", "net"],
                  [(dates[d], g, t, nt) for d, g, t, nt in
                   zip(days[test], series.gross, series.turnover, series.net)],
                  provenance=cfg.provenance())
    write_csv(paths.report_csv, ["method", "measure", "return_pct", "risk_pct", "sharpe"],
              report_rows, provenance=cfg.provenance())
    write_csv(paths.lambdas_csv, ["measure", "lam1", "lam2", "lam3"],
              lambda_rows, provenance=cfg.provenance())
    return report_rows


def stage_report(cfg: RunConfig):
    from .qcm import MomentPanel

    paths = Paths(cfg)
    data, extras = load_features_bundle(cfg)
    m = _load_moments(cfg)
    days = m["days"].astype(int)
    survivors = m["survivors"].astype(int)
    rets = data.returns[survivors][:, days]
    panel = MomentPanel(days=days, mu=m["mu"], variance=m["variance"],
                        skewness=m["skewness"], kurtosis=m["kurtosis"],
                        degenerate=m["degenerate"] > 0, projected=m["projected"] > 0,
                        invalid=m["invalid"] > 0)
    tickers = extras["tickers"]
    dates = extras["dates"]
    for span, cols in (("insample", np.nonzero(days < cfg.valid_end)[0]),
                       ("test", np.nonzero(days >= cfg.valid_end)[0])):
        results = moment_ttests(rets, panel, cols)
        write_csv(os.path.join(paths.reports, f"ttests_{span}.csv"),
                  ["ticker", "moment", "tstat", "pvalue"],
                  [(tickers[survivors[r.stock]], r.moment, r.statistic, r.p_value)
                   for r in results], provenance=cfg.provenance())
        rates = acceptance_rates(results)
        write_csv(os.path.join(paths.reports, f"ttest_rates_{span}.csv"),
                  ["moment", "pct_accept_1", "pct_accept_5", "pct_accept_10"],
                  [(mo, *[rates[mo][a] for a in (0.01, 0.05, 0.10)])
                   for mo in ("mu", "h", "s", "k")], provenance=cfg.provenance())
    rows = []
    for pos, stock in enumerate(survivors):
        for col, day in enumerate(days):
            rows.append((dates[day], tickers[stock], rets[pos, col],
                         panel.mu[pos, col], panel.variance[pos, col],
                         panel.skewness[pos, col], panel.kurtosis[pos, col]))
    write_csv(os.path.join(paths.reports, "comovement.csv"),
              ["date", "ticker", "r", "mu", "h", "s", "k"], rows,
              provenance=cfg.provenance())
    return paths.reports


STAGES = {
    "synth": stage_synth,
    "featurize": stage_featurize,
    "train": stage_train,
    "predict": stage_predict,
    "validate": stage_validate,
    "qcm": stage_qcm,
    "backtest": stage_backtest,
    "report": stage_report,
}
RUN_ALL_ORDER = ("synth", "featurize", "train", "predict", "validate",
                 "qcm", "backtest", "report")


def run_all(cfg: RunConfig):
    for name in RUN_ALL_ORDER:
        STAGES[name](cfg)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="grace",
        description="conditional quantile/moment learning and decile backtests")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in (*STAGES, "run-all"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--outdir", default=None)
        p.add_argument("--method", default=None, choices=["grace", "grace1", "grace2"])
        p.add_argument("--measures", default=None)
        p.add_argument("--seed", default=None)
        p.add_argument("--alpha", default=None)
        p.add_argument("--K", dest="n_levels", default=None)
        p.add_argument("--K0", dest="tolerance", default=None)
        p.add_argument("--cost-bps", dest="cost_bps", default=None)
        p.add_argument("--jobs", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("stage", "config")}
    stage = args.stage
    try:
        cfg = load_config(args.config, overrides)
        if stage == "run-all":
            run_all(cfg)
        else:
            STAGES[stage](cfg)
    except STAGE_ERRORS as exc:
        print(f"error stage={stage} type={type(exc).__name__} msg={exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
