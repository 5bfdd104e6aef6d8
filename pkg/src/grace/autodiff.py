"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor doubles as a tape node: it stores the forward value, the parent
nodes, a backward closure and the adjoint accumulator. Nodes are appended
to the active Tape in creation order, so iterating the tape in reverse is
a valid reverse-topological traversal that visits each node exactly once.

Constants (plain numpy arrays or python scalars) may be mixed freely into
ops; they are never recorded and receive no adjoints. Only ops whose
inputs include a tracked Tensor while a Tape is active are recorded, so
running model code outside a `with Tape()` block is plain evaluation.
"""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE: "Tape | None" = None


class GradError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "_backward", "requires_grad", "is_param", "name")

    def __init__(self, data, requires_grad=False, is_param=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if is_param and not np.all(np.isfinite(arr)):
            raise GradError("non-finite values in parameter tensor")
        self.data = arr
        self.grad = None
        self._backward = None
        self.requires_grad = requires_grad
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def parameter(data, name=None):
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, is_param=True, name=name)


class Tape:
    """Single-owner recording of one computation graph (not thread-safe)."""

    def __init__(self):
        self.nodes = []
        self.params = set()

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise GradError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, root):
        """Adjoints of a scalar `root` w.r.t. every parameter on the tape.

        Returns a dict mapping parameter Tensor -> gradient ndarray.
        """
        if not isinstance(root, Tensor):
            raise GradError("backward root must be a Tensor")
        if root.data.size != 1:
            raise GradError(f"backward root must be scalar, got shape {root.data.shape}")
        try:
            idx = len(self.nodes) - 1 - self.nodes[::-1].index(root)
        except ValueError:
            if not root.requires_grad:
                return {}          # constant root: nothing on its path
            raise GradError("root is not on this tape") from None
        for n in self.nodes:
            n.grad = None
        for p in self.params:
            p.grad = None
        root.grad = np.ones_like(root.data)
        for i in range(idx, -1, -1):
            node = self.nodes[i]
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        return {p: p.grad for p in self.params if p.grad is not None}


def _track(a):
    return isinstance(a, Tensor) and a.requires_grad


def _val(a):
    return a.data if isinstance(a, Tensor) else a


def _record(out_data, backward_fn):
    out = Tensor(out_data, requires_grad=True)
    out._backward = backward_fn
    _ACTIVE_TAPE.nodes.append(out)
    return out


def _recording(*args):
    tape = _ACTIVE_TAPE
    if tape is None:
        return False
    rec = False
    for a in args:
        if isinstance(a, Tensor) and a.requires_grad:
            rec = True
            if a.is_param:
                tape.params.add(a)
    return rec


def _accum(t, g):
    # grad arrays are never mutated in place, so aliasing the first
    # contribution is safe
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    if not _recording(a, b):
        return Tensor(out)
    ta, tb = _track(a), _track(b)
    sa = ta and np.shape(av) == out.shape
    sb = tb and np.shape(bv) == out.shape

    def backward(g):
        if ta:
            _accum(a, g if sa else _unbroadcast(g, np.shape(av)))
        if tb:
            _accum(b, g if sb else _unbroadcast(g, np.shape(bv)))

    return _record(out, backward)


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    if not _recording(a, b):
        return Tensor(out)
    ta, tb = _track(a), _track(b)
    sa = ta and np.shape(av) == out.shape
    sb = tb and np.shape(bv) == out.shape

    def backward(g):
        if ta:
            _accum(a, g if sa else _unbroadcast(g, np.shape(av)))
        if tb:
            _accum(b, -g if sb else _unbroadcast(-g, np.shape(bv)))

    return _record(out, backward)


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not _recording(a, b):
        return Tensor(out)
    ta, tb = _track(a), _track(b)

    def backward(g):
        if ta:
            _accum(a, _unbroadcast(g * bv, np.shape(av)))
        if tb:
            _accum(b, _unbroadcast(g * av, np.shape(bv)))

    return _record(out, backward)


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    if not _recording(a, b):
        return Tensor(out)
    ta, tb = _track(a), _track(b)

    def backward(g):
        if ta:
            _accum(a, _unbroadcast(g / bv, np.shape(av)))
        if tb:
            _accum(b, _unbroadcast(-g * av / (bv * bv), np.shape(bv)))

    return _record(out, backward)


def matmul(a, b):
    """Matrix product; operands may be 2-d, or batched 3-d on the left op."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise GradError("matmul operands must be at least 2-d")
    if av.shape[-1] != bv.shape[-2]:
        raise GradError(f"matmul inner dims disagree: {av.shape} x {bv.shape}")
    out = av @ bv
    if not _recording(a, b):
        return Tensor(out)
    ta, tb = _track(a), _track(b)

    def backward(g):
        if ta:
            _accum(a, _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape))
        if tb:
            _accum(b, _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape))

    return _record(out, backward)


def transpose(a):
    av = _val(a)
    out = av.T
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        _accum(a, g.T)

    return _record(out, backward)


def reshape(a, shape):
    av = _val(a)
    out = av.reshape(shape)
    if not _recording(a):
        return Tensor(out)
    orig = av.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _record(out, backward)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    av = _val(a)
    idx = tuple(slice(None) if d != axis else slice(start, start + length) for d in range(av.ndim))
    out = av[idx]
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        full = np.zeros_like(av)
        full[idx] = g
        _accum(a, full)

    return _record(out, backward)


def concat(parts, axis=0):
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _recording(*parts):
        return Tensor(out)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if _track(p):
                idx = tuple(
                    slice(None) if d != axis else slice(lo, hi) for d in range(g.ndim)
                )
                _accum(p, g[idx])

    return _record(out, backward)


def tsum(a, axis=None, keepdims=False):
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _recording(a):
        return Tensor(out)
    shape = av.shape

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, shape).copy() if np.shape(gg) != shape else gg)

    return _record(out, backward)


def tmean(a, axis=None, keepdims=False):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tanh(a):
    av = _val(a)
    out = np.tanh(av)
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return _record(out, backward)


def sigmoid(a):
    av = _val(a)
    out = 1.0 / (1.0 + np.exp(-av))
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _record(out, backward)


def exp(a):
    av = _val(a)
    out = np.exp(av)
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        _accum(a, g * out)

    return _record(out, backward)


def log(a):
    av = _val(a)
    out = np.log(av)
    if not _recording(a):
        return Tensor(out)

    def backward(g):
        _accum(a, g / av)

    return _record(out, backward)


def maximum0(a):
    """max(0, x) elementwise; subgradient 0 at the kink."""
    av = _val(a)
    out = np.maximum(av, 0.0)
    if not _recording(a):
        return Tensor(out)
    mask = av > 0.0

    def backward(g):
        _accum(a, g * mask)

    return _record(out, backward)


def softmax(a, axis=-1):
    """Shift-invariant softmax composed from primitive ops (exact gradient)."""
    av = _val(a)
    shifted = sub(a, av.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def lstm_gates(pre, c_prev):
    """One fused LSTM cell given stacked pre-activations.

    `pre` has width 4d laid out as [candidate | input | forget | output];
    returns (h, c). Fused to keep the tape small: the cell is the hot loop
    of every training step.
    """
    pv, cv = _val(pre), _val(c_prev)
    d = pv.shape[-1] // 4
    z = np.tanh(pv[..., :d])
    i = 1.0 / (1.0 + np.exp(-pv[..., d : 2 * d]))
    f = 1.0 / (1.0 + np.exp(-pv[..., 2 * d : 3 * d]))
    o = 1.0 / (1.0 + np.exp(-pv[..., 3 * d :]))
    c_val = f * cv + i * z
    tc = np.tanh(c_val)
    h_val = o * tc

    if not _recording(pre, c_prev):
        return Tensor(h_val), Tensor(c_val)

    tp, tc_prev = _track(pre), _track(c_prev)

    def backward_c(gc):
        # gc already includes contributions routed through h below
        if tp:
            gpre = np.empty_like(pv)
            gz = gc * i
            gi = gc * z
            gf = gc * cv
            gpre[..., :d] = gz * (1.0 - z * z)
            gpre[..., d : 2 * d] = gi * i * (1.0 - i)
            gpre[..., 2 * d : 3 * d] = gf * f * (1.0 - f)
            gpre[..., 3 * d :] = 0.0
            _accum(pre, gpre)
        if tc_prev:
            _accum(c_prev, gc * f)

    c = _record(c_val, backward_c)

    def backward_h(gh):
        _accum(c, gh * o * (1.0 - tc * tc))
        if tp:
            gpre = np.zeros_like(pv)
            gpre[..., 3 * d :] = gh * tc * o * (1.0 - o)
            _accum(pre, gpre)

    h = _record(h_val, backward_h)
    return h, c
