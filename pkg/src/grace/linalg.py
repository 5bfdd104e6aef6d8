"""Small least-squares solver via normal equations (p is at most ~6 here)."""

from __future__ import annotations

import numpy as np


class SingularDesignError(ValueError):
    pass


def _normal_factor(design):
    """Cholesky factor of design'design, with a rank check."""
    design = np.asarray(design, dtype=np.float64)
    if design.ndim != 2:
        raise SingularDesignError("design must be a 2-d matrix")
    k, p = design.shape
    if k < p:
        raise SingularDesignError(f"need at least as many rows as columns, got {k}x{p}")
    gram = design.T @ design
    eig = np.linalg.eigvalsh(gram)
    if eig[0] < 1e-12 * max(eig[-1], 1e-300):
        raise SingularDesignError(
            f"rank-deficient design: eigenvalue ratio {eig[0]:.3e}/{eig[-1]:.3e}"
        )
    return np.linalg.cholesky(gram)


def solve_least_squares(design, response):
    """Coefficients minimizing ||design @ beta - response||^2."""
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    if response.shape[0] != design.shape[0]:
        raise SingularDesignError("design and response row counts disagree")
    chol = _normal_factor(design)
    rhs = design.T @ response
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def solve_least_squares_multi(design, responses):
    """Least squares against many response columns sharing one design.

    responses is (k, n); returns coefficients (p, n). Shares the single
    normal-equation factorization across all columns.
    """
    return solve_least_squares(design, responses)
