"""The graph-augmented forward model shared by the quantile and mean heads.

Three stages per target stock: an LSTM over its lagged features (temporal
embedding), an attention-weighted aggregation of the other vertices'
embeddings guided by the relation graph, and an affine output head on the
concatenated own/aggregated embedding.

Two forward implementations are kept deliberately: `forward_tape` builds
the autodiff graph for training; `forward_batch` is a plain-numpy
vectorized evaluation over many days at once for prediction. Tests pin
them to each other.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .graph import Hypergraph
from .io import load_arrays, save_arrays


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    n_stocks: int
    n_factors: int
    n_relations: int
    n_features: int
    lag_count: int
    hidden: int

    @property
    def relation_width(self):
        return self.n_relations + self.n_factors


GATE_NAMES = ("cell", "input", "forget", "output")


class ModelParams:
    """All trainable tensors for one target (a quantile level or the mean).

    LSTM gate weights are stored stacked along the gate axis, wx: (P, 4d),
    wh: (d, 4d), bias: (4d,) in GATE_NAMES order, with the conventional
    per-gate (d, P) / (d, d) views available via `gate`.
    """

    def __init__(self, dims: ModelDims, wx, wh, bias, attn_w, attn_b, out_w, out_b):
        self.dims = dims
        d, p = dims.hidden, dims.n_features
        if wx.shape != (p, 4 * d) or wh.shape != (d, 4 * d) or bias.shape != (4 * d,):
            raise ShapeError("lstm parameter shapes inconsistent with dims")
        if attn_w.shape != (1, dims.relation_width + 2 * d):
            raise ShapeError(f"attention weight must be 1x{dims.relation_width + 2 * d}")
        if out_w.shape != (1, 2 * d):
            raise ShapeError(f"output weight must be 1x{2 * d}")
        self.wx = ad.parameter(wx, "wx")
        self.wh = ad.parameter(wh, "wh")
        self.bias = ad.parameter(bias, "bias")
        self.attn_w = ad.parameter(attn_w, "attn_w")
        self.attn_b = ad.parameter(np.reshape(attn_b, (1,)), "attn_b")
        self.out_w = ad.parameter(out_w, "out_w")
        self.out_b = ad.parameter(np.reshape(out_b, (1,)), "out_b")

    def tensors(self):
        return {"wx": self.wx, "wh": self.wh, "bias": self.bias,
                "attn_w": self.attn_w, "attn_b": self.attn_b,
                "out_w": self.out_w, "out_b": self.out_b}

    def gate(self, name, kind="x"):
        """Per-gate weight view: (d, P) for kind 'x', (d, d) for 'h',
        (d,) for 'b'."""
        g = GATE_NAMES.index(name)
        d = self.dims.hidden
        sl = slice(g * d, (g + 1) * d)
        if kind == "x":
            return self.wx.data[:, sl].T
        if kind == "h":
            return self.wh.data[:, sl].T
        return self.bias.data[sl]

    def copy_values(self):
        return {k: t.data.copy() for k, t in self.tensors().items()}

    def set_values(self, values):
        for k, t in self.tensors().items():
            if t.data.shape != values[k].shape:
                raise ShapeError(f"checkpoint shape mismatch for {k}")
            t.data = np.asarray(values[k], dtype=np.float64)


HEAD_INIT_SCALE = 0.01


def init_params(dims: ModelDims, seed) -> ModelParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights per block, zero biases.

    The output head is drawn 100x smaller: returns live at the 1e-2 scale,
    and a full-scale head makes the first training epochs spend their
    entire budget walking the output magnitude down instead of fitting.
    """
    rng = np.random.default_rng(seed)
    d, p = dims.hidden, dims.n_features

    def glorot(fan_in, fan_out, shape, scale=1.0):
        bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    wx = np.concatenate([glorot(p, d, (p, d)) for _ in GATE_NAMES], axis=1)
    wh = np.concatenate([glorot(d, d, (d, d)) for _ in GATE_NAMES], axis=1)
    bias = np.zeros(4 * d)
    attn_w = glorot(dims.relation_width + 2 * d, 1, (1, dims.relation_width + 2 * d))
    out_w = glorot(2 * d, 1, (1, 2 * d), scale=HEAD_INIT_SCALE)
    return ModelParams(dims, wx, wh, bias, attn_w, np.zeros(1), out_w, np.zeros(1))


@dataclass(frozen=True)
class GraphConstants:
    """Graph-derived constants of the forward pass (precompute once)."""
    rel_flat: np.ndarray     # (M+B, N*C) relation stack, flattened
    inv_scale: np.ndarray    # (C,) aggregation divisors
    self_mask: np.ndarray    # (N, C) additive, -1e30 on j == i
    n_contributors: int

    @classmethod
    def from_graph(cls, g: Hypergraph):
        stack = g.attention_relation_stack()
        c = g.n_contributors
        return cls(rel_flat=np.ascontiguousarray(stack.reshape(stack.shape[0], -1)),
                   inv_scale=g.contributor_scale(),
                   self_mask=g.self_mask(),
                   n_contributors=c)


def _check_inputs(x_block, dims: ModelDims, gc: GraphConstants):
    nb = dims.n_stocks + dims.n_factors
    if x_block.shape[-3:] != (nb, dims.n_features, dims.lag_count):
        raise ShapeError(
            f"feature block shape {x_block.shape} != (..., {nb}, {dims.n_features}, {dims.lag_count})")
    if gc.n_contributors not in (dims.n_stocks, nb):
        raise ShapeError("graph constants inconsistent with dims")


def lstm_embed_tape(x_block, params: ModelParams, steps=None):
    """Temporal embeddings (N+B, d) from the gate recursion (h0 = c0 = 0).

    `steps` may carry the same data pre-transposed to (S, N+B, P); the
    training loop precomputes it once per day.
    """
    if steps is None:
        steps = np.ascontiguousarray(np.moveaxis(x_block, -1, 0))
    h, c = None, 0.0
    for s in range(steps.shape[0]):
        pre = ad.matmul(steps[s], params.wx)
        if h is not None:
            pre = ad.add(pre, ad.matmul(h, params.wh))
        pre = ad.add(pre, params.bias)
        h, c = ad.lstm_gates(pre, c)
    return h


def forward_tape(x_block, gc: GraphConstants, params: ModelParams,
                 return_weights=False, steps=None):
    """Differentiable outputs (N,) for one day's feature block."""
    dims = params.dims
    if steps is None:
        _check_inputs(x_block, dims, gc)
    else:
        nb = dims.n_stocks + dims.n_factors
        if steps.shape != (dims.lag_count, nb, dims.n_features):
            raise ShapeError(f"steps shape {steps.shape} inconsistent with dims")
    n, d = dims.n_stocks, dims.hidden
    c = gc.n_contributors
    xl = lstm_embed_tape(x_block, params, steps=steps)
    xl_stock = ad.narrow(xl, 0, 0, n)
    xl_contrib = xl if c == xl.shape[0] else ad.narrow(xl, 0, 0, c)

    w_self = ad.transpose(ad.narrow(params.attn_w, 1, 0, d))
    w_peer = ad.transpose(ad.narrow(params.attn_w, 1, d, d))
    w_rel = ad.narrow(params.attn_w, 1, 2 * d, dims.relation_width)
    u = ad.matmul(xl_stock, w_self)                       # (N, 1)
    v = ad.transpose(ad.matmul(xl_contrib, w_peer))       # (1, C)
    rel = ad.reshape(ad.matmul(w_rel, gc.rel_flat), (n, c))
    scores = ad.add(ad.add(ad.add(u, v), rel), params.attn_b)
    weights = ad.softmax(ad.add(scores, gc.self_mask), axis=1)
    agg = ad.matmul(ad.mul(weights, gc.inv_scale), xl_contrib)  # (N, d)

    w_out_self = ad.transpose(ad.narrow(params.out_w, 1, 0, d))
    w_out_peer = ad.transpose(ad.narrow(params.out_w, 1, d, d))
    out = ad.add(ad.add(ad.matmul(xl_stock, w_out_self),
                        ad.matmul(agg, w_out_peer)), params.out_b)
    out = ad.reshape(out, (n,))
    if return_weights:
        return out, weights
    return out


def _lstm_embed_np(x_blocks, wx, wh, bias):
    """(D*(N+B), d) embeddings for stacked blocks (D, N+B, P, S)."""
    d4 = wx.shape[1]
    d = d4 // 4
    flat = x_blocks.reshape(-1, x_blocks.shape[-2], x_blocks.shape[-1])
    steps = np.ascontiguousarray(np.moveaxis(flat, -1, 0))
    rows = flat.shape[0]
    h = np.zeros((rows, d))
    c = np.zeros((rows, d))
    for s in range(steps.shape[0]):
        pre = steps[s] @ wx + h @ wh + bias
        z = np.tanh(pre[:, :d])
        i = 1.0 / (1.0 + np.exp(-pre[:, d : 2 * d]))
        f = 1.0 / (1.0 + np.exp(-pre[:, 2 * d : 3 * d]))
        o = 1.0 / (1.0 + np.exp(-pre[:, 3 * d :]))
        c = f * c + i * z
        h = o * np.tanh(c)
    return h


@dataclass(frozen=True)
class EmbeddingSet:
    temporal: np.ndarray      # (N+B, d)
    aggregated: np.ndarray    # (N, d)

    @property
    def combined(self):
        """(N, 2d) concatenation feeding the output head."""
        n = self.aggregated.shape[0]
        return np.concatenate([self.temporal[:n], self.aggregated], axis=1)


def forward_batch(x_blocks, gc: GraphConstants, params: ModelParams,
                  return_embeddings=False):
    """Plain-numpy outputs (D, N) over stacked day blocks (D, N+B, P, S)."""
    dims = params.dims
    _check_inputs(x_blocks, dims, gc)
    squeeze = x_blocks.ndim == 3
    if squeeze:
        x_blocks = x_blocks[None]
    n, d = dims.n_stocks, dims.hidden
    nb = dims.n_stocks + dims.n_factors
    c = gc.n_contributors
    days = x_blocks.shape[0]
    wxd, whd, bd = params.wx.data, params.wh.data, params.bias.data
    aw, ab = params.attn_w.data[0], float(params.attn_b.data[0])
    ow, ob = params.out_w.data[0], float(params.out_b.data[0])

    xl = _lstm_embed_np(x_blocks, wxd, whd, bd).reshape(days, nb, d)
    xl_contrib = xl[:, :c, :]
    u = xl[:, :n, :] @ aw[:d]                               # (D, N)
    v = xl_contrib @ aw[d : 2 * d]                          # (D, C)
    rel = (aw[2 * d :] @ gc.rel_flat).reshape(n, c)
    scores = u[:, :, None] + v[:, None, :] + rel[None] + ab + gc.self_mask[None]
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=2, keepdims=True)
    agg = (weights * gc.inv_scale) @ xl_contrib             # (D, N, d)
    out = xl[:, :n, :] @ ow[:d] + agg @ ow[d:] + ob
    if return_embeddings:
        emb = EmbeddingSet(temporal=xl[0], aggregated=agg[0]) if squeeze else \
            [EmbeddingSet(temporal=xl[k], aggregated=agg[k]) for k in range(days)]
        return (out[0], emb) if squeeze else (out, emb)
    return out[0] if squeeze else out


CHECKPOINT_KIND = "grace-model"


def save_checkpoint(path, params: ModelParams, meta: dict):
    header = dict(meta)
    header["kind"] = CHECKPOINT_KIND
    header["dims"] = asdict(params.dims)
    save_arrays(path, {k: t.data for k, t in params.tensors().items()}, header)


def load_checkpoint(path):
    arrays, meta = load_arrays(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ShapeError(f"{path}: not a model checkpoint")
    dims = ModelDims(**meta["dims"])
    params = ModelParams(dims, arrays["wx"], arrays["wh"], arrays["bias"],
                         arrays["attn_w"], arrays["attn_b"],
                         arrays["out_w"], arrays["out_b"])
    return params, meta
