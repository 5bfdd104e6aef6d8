"""Independent oracles shared across the test suite.

Everything here deliberately avoids the library's own computational
paths: gradients come from central finite differences of plain forward
evaluations, matrix products from a scalar triple loop, least squares
from explicit Gaussian elimination on the normal equations.
"""

import numpy as np


def finite_difference(f, arrays, eps=1e-5):
    """Central-difference gradients of scalar f(*arrays) in each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=float)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = a[ix]
            a[ix] = orig + eps
            fp = f()
            a[ix] = orig - eps
            fm = f()
            a[ix] = orig
            g[ix] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def gaussian_elimination_solve(a, b):
    """Solve a x = b by explicit elimination with partial pivoting."""
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    n = a.shape[0]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, n):
            fac = a[row, col] / a[col, col]
            a[row, col:] -= fac * a[col, col:]
            b[row] -= fac * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def normal_equation_lstsq(design, response):
    """Independent least-squares path: explicit normal equations."""
    gram = design.T @ design
    rhs = design.T @ response
    return gaussian_elimination_solve(gram, rhs)
