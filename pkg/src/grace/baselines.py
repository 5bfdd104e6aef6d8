"""Linear network-autoregressive baselines on the collapsed adjacency.

Per stock: prediction = intercept + gamma * (row-normalized neighbor
average of lag-1 returns) + coefficients on the stock's own lag-1
feature vector + coefficients on the lag-1 factor values. Quantile
models minimize pinball loss, the mean model squared loss, both with
full-batch Adam on the combined training+validation span (convex
objectives; no early stopping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .io import load_arrays, save_arrays
from .optim import AdamState, adam_step
from .training import TrainData, TrainingError


@dataclass
class LinearParams:
    intercept: float
    network: float
    features: np.ndarray   # (P,)
    factors: np.ndarray    # (B,)

    def as_arrays(self):
        return {"intercept": np.array([self.intercept]),
                "network": np.array([self.network]),
                "features": self.features, "factors": self.factors}


def linear_forward(params: LinearParams, collapsed_w, lag_returns, lag_features,
                   lag_factors):
    """Predictions (N,) from lag-1 inputs.

    collapsed_w: (N, N) row-normalized adjacency; lag_returns: (N,);
    lag_features: (N, P); lag_factors: (B,).
    """
    w = np.asarray(collapsed_w, dtype=float)
    r = np.asarray(lag_returns, dtype=float)
    x = np.asarray(lag_features, dtype=float)
    f = np.asarray(lag_factors, dtype=float)
    if w.shape[0] != w.shape[1] or w.shape[0] != len(r) or x.shape[0] != len(r):
        raise TrainingError("inconsistent shapes in linear_forward")
    if x.shape[1] != len(params.features) or len(f) != len(params.factors):
        raise TrainingError("coefficient lengths do not match inputs")
    return (params.intercept + params.network * (w @ r)
            + x @ params.features + f @ params.factors)


def _design(data: TrainData, collapsed_w, days):
    """Lag-1 design blocks for target days: network term (D, N), stock
    features (D, N, P), factor values (D, B), targets (D, N)."""
    feats = data.features
    n = feats.n_stocks
    days = np.asarray(days)
    lag = days - 1
    net = (collapsed_w @ data.returns[:, lag]).T
    x_last = np.moveaxis(feats.values[:n, :, lag], 2, 0)   # (D, N, P)
    return net, x_last, data.returns[:, days].T


@dataclass
class LinearFitResult:
    params: LinearParams
    iterations: int
    final_grad_norm: float
    dead_columns: list    # feature columns with zero in-sample variance


def fit_linear(kind, tau, data: TrainData, collapsed_w, factor_values,
               max_iters=500, learning_rate=1e-3, grad_tol=1e-6,
               days=None) -> LinearFitResult:
    """Fit one linear model on the combined training+validation span."""
    if kind not in ("quantile", "mean"):
        raise TrainingError(f"unknown linear model kind {kind!r}")
    if kind == "quantile" and not 0.0 < tau < 1.0:
        raise TrainingError(f"quantile level must be in (0,1), got {tau}")
    feats = data.features
    if days is None:
        days = data.days("insample", 1)
        days = days[days >= feats.first_valid + 1]
    net, x_last, targets = _design(data, collapsed_w, days)
    f_lag = factor_values[:, np.asarray(days) - 1].T       # (D, B)
    d_days, n = targets.shape
    p = feats.n_features
    b = f_lag.shape[1]
    dead = [int(c) for c in range(p)
            if np.ptp(x_last[:, :, c].reshape(d_days * n, order="C"), axis=0) == 0]

    x_flat = np.ascontiguousarray(x_last.reshape(d_days * n, p))
    alpha = ad.parameter(np.zeros(1), "intercept")
    gamma = ad.parameter(np.zeros(1), "network")
    zeta = ad.parameter(np.zeros((p, 1)), "features")
    varsig = ad.parameter(np.zeros((b, 1)), "factors")
    tensors = {"intercept": alpha, "network": gamma, "features": zeta, "factors": varsig}
    states = {k: AdamState(t.data.shape) for k, t in tensors.items()}

    iters, gnorm = 0, np.inf
    for iters in range(1, max_iters + 1):
        with ad.Tape() as tape:
            feat_term = ad.reshape(ad.matmul(x_flat, zeta), (d_days, n))
            fac_term = ad.matmul(f_lag, varsig)            # (D, 1) broadcast
            pred = ad.add(ad.add(ad.add(ad.mul(gamma, net), feat_term), fac_term), alpha)
            err = ad.sub(targets, pred)
            if kind == "mean":
                loss = ad.tmean(ad.mul(err, err))
            else:
                weight = tau - (err.data < 0.0)
                loss = ad.tmean(ad.mul(err, weight))
        if not np.isfinite(float(loss.data)):
            raise TrainingError(f"linear {kind} fit diverged at iteration {iters}")
        grads = tape.backward(loss)
        gnorm = max(float(np.abs(g).max()) for g in grads.values())
        if gnorm < grad_tol:
            break
        for name, t in tensors.items():
            g = grads.get(t)
            if g is not None:
                t.data = t.data + adam_step(states[name], g, learning_rate)
    params = LinearParams(intercept=float(alpha.data[0]), network=float(gamma.data[0]),
                          features=zeta.data[:, 0].copy(), factors=varsig.data[:, 0].copy())
    return LinearFitResult(params=params, iterations=iters,
                           final_grad_norm=gnorm, dead_columns=dead)


def predict_linear(params: LinearParams, data: TrainData, collapsed_w,
                   factor_values, days):
    """(D, N) predictions over target days."""
    net, x_last, _ = _design(data, collapsed_w, days)
    f_lag = factor_values[:, np.asarray(days) - 1].T
    return (params.intercept + params.network * net
            + x_last @ params.features + f_lag @ params.factors)


LINEAR_KIND = "grace2-linear"


def save_linear(path, params: LinearParams, meta: dict):
    header = dict(meta)
    header["kind"] = LINEAR_KIND
    save_arrays(path, params.as_arrays(), header)


def load_linear(path):
    arrays, meta = load_arrays(path)
    if meta.get("kind") != LINEAR_KIND:
        raise TrainingError(f"{path}: not a linear-model checkpoint")
    params = LinearParams(intercept=float(arrays["intercept"][0]),
                          network=float(arrays["network"][0]),
                          features=arrays["features"], factors=arrays["factors"])
    return params, meta
