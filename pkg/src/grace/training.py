"""Objectives and optimization loops for the quantile and mean models.

A minibatch is one randomly drawn time index with the full cross-section
of stocks; an epoch is one shuffled pass over the training time indices.
Validation error is evaluated after every epoch and the parameter
snapshot with the smallest validation error is returned (early stopping
with a patience counter).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import FeatureSeries, SplitSpec
from .graph import Hypergraph
from .model import GraphConstants, ModelDims, ModelParams, forward_batch, forward_tape, init_params
from .optim import AdamState, adam_step


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    order_penalty: float = 0.1   # weight of the cross-sectional order penalty
    lag_count: int = 16
    hidden: int = 64
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.order_penalty < 0 or self.patience < 1:
            raise ValueError("need learning_rate > 0, order_penalty >= 0, patience >= 1")


def quantile_loss(returns, preds, tau):
    """Average pinball loss (1/N) sum rho_tau(r - pred).

    Works on plain arrays (returns a float) or on a tape Tensor `preds`
    (returns a scalar Tensor). The loss weight at a zero residual is tau.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must be in (0,1), got {tau}")
    if isinstance(preds, ad.Tensor):
        err = ad.sub(returns, preds)
        weight = tau - (err.data < 0.0)
        return ad.tmean(ad.mul(err, weight))
    err = np.asarray(returns, dtype=float) - np.asarray(preds, dtype=float)
    return float(np.mean(err * (tau - (err < 0.0))))


def pls_loss(returns, preds, penalty):
    """Mean squared error plus the pairwise order-violation penalty.

    penalty term: (penalty/N^2) * sum_ij max(0, -(pred_i - pred_j)(r_i - r_j)).
    """
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    if isinstance(preds, ad.Tensor):
        n = preds.data.shape[-1]
        err = ad.sub(returns, preds)
        loss = ad.tmean(ad.mul(err, err))
        if penalty > 0:
            r = np.asarray(returns, dtype=float)
            dp = ad.sub(ad.reshape(preds, (n, 1)), ad.reshape(preds, (1, n)))
            dr = r[:, None] - r[None, :]
            pen = ad.tsum(ad.maximum0(ad.mul(dp, -dr)))
            loss = ad.add(loss, ad.mul(pen, penalty / n**2))
        return loss
    r = np.asarray(returns, dtype=float)
    p = np.asarray(preds, dtype=float)
    n = r.shape[-1]
    mse = np.mean((r - p) ** 2, axis=-1)
    dp = p[..., :, None] - p[..., None, :]
    dr = r[..., :, None] - r[..., None, :]
    pen = np.maximum(0.0, -dp * dr).sum(axis=(-2, -1))
    return float(np.mean(mse + penalty / n**2 * pen))


@dataclass
class TrainData:
    """Feature series + aligned returns and the chronological split."""
    features: FeatureSeries
    returns: np.ndarray          # (N, T)
    split: SplitSpec

    def __post_init__(self):
        self.split.validate(self.returns.shape[1])
        if self.features.n_days != self.returns.shape[1]:
            raise TrainingError("feature and return day axes differ")
        if self.features.n_stocks != self.returns.shape[0]:
            raise TrainingError("feature and return stock axes differ")

    def days(self, span, lag_count):
        lo = self.features.earliest_target(lag_count)
        spans = {"train": (lo, self.split.train_end),
                 "valid": (self.split.train_end, self.split.valid_end),
                 "test": (self.split.valid_end, self.split.test_end),
                 "insample": (lo, self.split.valid_end),
                 "all": (lo, self.split.test_end)}
        a, b = spans[span]
        a = max(a, lo)
        if a >= b:
            raise TrainingError(f"span '{span}' is empty: features start at day {lo}")
        return np.arange(a, b)


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)   # (epoch, train_loss, valid_loss)
    best_epoch: int = -1
    best_valid: float = np.inf


def _seed_for(master_seed, kind, level_index, purpose):
    tags = {"init": 1, "shuffle": 2}
    kind_tag = 0 if kind == "mean" else 1
    return np.random.SeedSequence([int(master_seed), kind_tag, int(level_index), tags[purpose]])


def _epoch_valid_loss(kind, tau, penalty, params, gc, blocks, returns):
    preds = forward_batch(blocks, gc, params)
    if kind == "mean":
        return pls_loss(returns, preds, penalty)
    return quantile_loss(returns, preds, tau)


def train_model(kind, tau, data: TrainData, graph: Hypergraph, cfg: TrainConfig,
                level_index=0) -> TrainResult:
    """Fit one model ('quantile' at level tau, or 'mean') with Adam.

    Deterministic in (cfg.seed, kind, level_index, data): initialization
    and epoch shuffles derive their seeds from those alone.
    """
    if kind not in ("quantile", "mean"):
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == "quantile" and not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must be in (0,1), got {tau}")
    feats = data.features
    dims = ModelDims(n_stocks=feats.n_stocks, n_factors=feats.n_factors,
                     n_relations=graph.n_relations, n_features=feats.n_features,
                     lag_count=cfg.lag_count, hidden=cfg.hidden)
    gc = GraphConstants.from_graph(graph)
    params = init_params(dims, _seed_for(cfg.seed, kind, level_index, "init"))
    shuffle_rng = np.random.default_rng(_seed_for(cfg.seed, kind, level_index, "shuffle"))
    states = {name: AdamState(t.data.shape) for name, t in params.tensors().items()}

    train_days = data.days("train", cfg.lag_count)
    valid_days = data.days("valid", cfg.lag_count)
    step_blocks = {
        int(t): np.ascontiguousarray(
            np.moveaxis(feats.lag_block(t, cfg.lag_count), -1, 0))
        for t in train_days
    }
    valid_blocks = feats.lag_blocks(valid_days, cfg.lag_count)
    valid_returns = data.returns[:, valid_days].T
    penalty = cfg.order_penalty if kind == "mean" else 0.0

    result = TrainResult(params=params)
    best_values = params.copy_values()
    stalled = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(train_days)
        running = 0.0
        for t in order:
            r_t = data.returns[:, t]
            with ad.Tape() as tape:
                preds = forward_tape(None, gc, params, steps=step_blocks[int(t)])
                loss = pls_loss(r_t, preds, penalty) if kind == "mean" \
                    else quantile_loss(r_t, preds, tau)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, day {t}; consider lowering the "
                    f"learning rate (currently {cfg.learning_rate:g})")
            running += lv
            grads = tape.backward(loss)
            for name, tensor in params.tensors().items():
                g = grads.get(tensor)
                if g is None:
                    g = np.zeros_like(tensor.data)
                tensor.data = tensor.data + adam_step(states[name], g, cfg.learning_rate)
        train_loss = running / len(order)
        valid_loss = _epoch_valid_loss(kind, tau, penalty, params, gc,
                                       valid_blocks, valid_returns)
        result.log.append((epoch, train_loss, valid_loss))
        if valid_loss < result.best_valid:
            result.best_valid = valid_loss
            result.best_epoch = epoch
            best_values = params.copy_values()
            stalled = 0
        else:
            stalled += 1
            if stalled >= cfg.patience:
                break
    params.set_values(best_values)
    return result


def quantile_levels(k: int) -> np.ndarray:
    """The level grid tau_k = k/(K+1), k = 1..K."""
    if k < 1:
        raise ValueError("need at least one quantile level")
    return np.arange(1, k + 1) / (k + 1)


@dataclass
class QuantilePanel:
    """Estimated conditional quantiles over stocks x days x levels."""
    levels: np.ndarray     # (K,)
    days: np.ndarray       # (D,) day indices into the panel date axis
    values: np.ndarray     # (N, D, K)

    def level_index(self, tau):
        ix = np.nonzero(np.isclose(self.levels, tau, atol=1e-12))[0]
        if not len(ix):
            raise KeyError(f"level {tau} not in panel")
        return int(ix[0])


def predict_panel(params_by_level: dict, mean_params, data: TrainData,
                  graph: Hypergraph, days) -> tuple:
    """Quantile panel and mean series over `days` via the batched forward.

    `params_by_level` maps tau -> ModelParams; missing levels raise with
    the absent levels listed. Returns (QuantilePanel, mean (D, N)).
    """
    days = np.asarray(days)
    levels = np.array(sorted(params_by_level))
    missing = [float(t) for t in levels if params_by_level[t] is None]
    if missing:
        raise TrainingError(f"missing trained parameters for levels: {missing}")
    gc = GraphConstants.from_graph(graph)
    any_params = mean_params if mean_params is not None else next(iter(params_by_level.values()))
    blocks = data.features.lag_blocks(days, any_params.dims.lag_count)
    values = np.empty((data.returns.shape[0], len(days), len(levels)))
    for k, tau in enumerate(levels):
        values[:, :, k] = forward_batch(blocks, gc, params_by_level[tau]).T
    mean_series = forward_batch(blocks, gc, mean_params) if mean_params is not None else None
    return QuantilePanel(levels=levels, days=days, values=values), mean_series
