import numpy as np
import pytest
from hypothesis import given, strategies as st

from grace import autodiff as ad
from util import finite_difference, max_rel_err, triple_loop_matmul


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(ad.Tensor(np.eye(2)), a)
    assert np.array_equal(out.data, a)


def test_matmul_unit_selector():
    out = ad.matmul(ad.Tensor(np.array([[1.0, 0.0]])), np.array([[5.0], [7.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == pytest.approx(5.0)


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    out = ad.matmul(ad.Tensor(a), ad.Tensor(b))
    assert np.allclose(out.data, triple_loop_matmul(a, b), atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ad.GradError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), np.ones((2, 3)))


def test_activation_fixed_points():
    assert ad.tanh(ad.Tensor(0.0)).data == 0.0
    assert ad.sigmoid(ad.Tensor(0.0)).data == 0.5


def test_softmax_uniform_and_simplex():
    out = ad.softmax(ad.Tensor(np.zeros(3)), axis=0)
    assert np.allclose(out.data, 1 / 3)
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.normal(size=(4, 6)))
    w = ad.softmax(x, axis=1).data
    assert np.all(w > 0) and np.all(w < 1)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_backward_square():
    theta = ad.parameter(np.array(3.0))
    with ad.Tape() as tape:
        loss = ad.mul(theta, theta)
    grads = tape.backward(loss)
    assert grads[theta] == pytest.approx(6.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    w = ad.parameter(rng.normal(size=(4, 3)))
    x = rng.normal(size=(3, 2))
    with ad.Tape() as tape:
        loss = ad.tsum(ad.tanh(ad.matmul(w, x)))
    grads = tape.backward(loss)
    (fd,) = finite_difference(lambda: np.tanh(w.data @ x).sum(), [w.data])
    assert max_rel_err(grads[w], fd) < 1e-6


def test_backward_constant_root_yields_no_grads():
    p = ad.parameter(np.ones(3))
    with ad.Tape() as tape:
        _ = ad.tanh(p)                       # on the tape but off the loss path
        loss = ad.tsum(ad.mul(ad.Tensor(np.ones(2)), 2.0))
    assert tape.backward(loss) == {}


def test_backward_rejects_non_scalar():
    p = ad.parameter(np.ones(3))
    with ad.Tape() as tape:
        y = ad.mul(p, 2.0)
        with pytest.raises(ad.GradError):
            tape.backward(y)


def test_nested_tapes_rejected():
    with ad.Tape():
        with pytest.raises(ad.GradError):
            with ad.Tape():
                pass


_OPS = {
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x))),
    "exp": (ad.exp, np.exp),
    "maximum0": (ad.maximum0, lambda x: np.maximum(x, 0.0)),
}


@pytest.mark.parametrize("name", sorted(_OPS))
def test_elementwise_gradients(name):
    fwd, ref = _OPS[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    p = ad.parameter(rng.normal(size=(5, 4)) + 0.05)   # keep away from the relu kink
    with ad.Tape() as tape:
        loss = ad.tsum(fwd(p))
    grads = tape.backward(loss)
    (fd,) = finite_difference(lambda: ref(p.data).sum(), [p.data])
    assert max_rel_err(grads[p], fd) < 1e-4


def test_broadcast_gradients():
    rng = np.random.default_rng(5)
    a = ad.parameter(rng.normal(size=(4, 3)))
    b = ad.parameter(rng.normal(size=(3,)))
    c = ad.parameter(rng.normal(size=(4, 1)))
    with ad.Tape() as tape:
        loss = ad.tsum(ad.mul(ad.add(a, b), c))
    grads = tape.backward(loss)
    ref = lambda: ((a.data + b.data) * c.data).sum()
    fds = finite_difference(ref, [a.data, b.data, c.data])
    for t, fd in zip((a, b, c), fds):
        assert max_rel_err(grads[t], fd) < 1e-6


def test_narrow_concat_reshape_gradients():
    rng = np.random.default_rng(6)
    p = ad.parameter(rng.normal(size=(3, 8)))
    with ad.Tape() as tape:
        left = ad.narrow(p, 1, 0, 4)
        right = ad.narrow(p, 1, 4, 4)
        joined = ad.concat([ad.tanh(left), right], axis=1)
        loss = ad.tsum(ad.mul(ad.reshape(joined, (24,)), np.arange(24.0)))
    grads = tape.backward(loss)

    def ref():
        j = np.concatenate([np.tanh(p.data[:, :4]), p.data[:, 4:]], axis=1)
        return (j.reshape(24) * np.arange(24.0)).sum()

    (fd,) = finite_difference(ref, [p.data])
    assert max_rel_err(grads[p], fd) < 1e-6


def test_softmax_gradient():
    rng = np.random.default_rng(7)
    p = ad.parameter(rng.normal(size=(3, 5)))
    coef = rng.normal(size=(3, 5))
    with ad.Tape() as tape:
        loss = ad.tsum(ad.mul(ad.softmax(p, axis=1), coef))
    grads = tape.backward(loss)

    def ref():
        e = np.exp(p.data - p.data.max(axis=1, keepdims=True))
        return (e / e.sum(axis=1, keepdims=True) * coef).sum()

    (fd,) = finite_difference(ref, [p.data])
    assert max_rel_err(grads[p], fd) < 1e-5


def test_lstm_gates_gradients():
    rng = np.random.default_rng(8)
    d = 4
    pre = ad.parameter(rng.normal(size=(3, 4 * d)))
    c_prev = ad.parameter(rng.normal(size=(3, d)))
    with ad.Tape() as tape:
        h, c = ad.lstm_gates(pre, c_prev)
        loss = ad.add(ad.tsum(ad.mul(h, 1.5)), ad.tsum(c))
    grads = tape.backward(loss)

    def ref():
        pv, cv = pre.data, c_prev.data
        z = np.tanh(pv[:, :d])
        i = 1 / (1 + np.exp(-pv[:, d : 2 * d]))
        f = 1 / (1 + np.exp(-pv[:, 2 * d : 3 * d]))
        o = 1 / (1 + np.exp(-pv[:, 3 * d :]))
        cc = f * cv + i * z
        return (o * np.tanh(cc) * 1.5).sum() + cc.sum()

    fds = finite_difference(ref, [pre.data, c_prev.data])
    assert max_rel_err(grads[pre], fds[0]) < 1e-5
    assert max_rel_err(grads[c_prev], fds[1]) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_ops_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 3))
    a = ad.tanh(ad.Tensor(x)).data
    b = ad.tanh(ad.Tensor(x)).data
    assert np.array_equal(a, b)


def test_parameter_rejects_non_finite():
    with pytest.raises(ad.GradError):
        ad.parameter(np.array([1.0, np.nan]))
