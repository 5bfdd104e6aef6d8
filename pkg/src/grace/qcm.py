"""Conditional variance/skewness/kurtosis recovered from quantile tracks.

Per (stock, day), the K estimated quantiles are regressed on the basis
(1, z, z^2-1, z^3-3z) of standard-normal quantiles z = z(tau_k). The
slope coefficients identify sqrt(variance), variance*skew/6 and
variance*(kurt-3)/24 up to estimation error; the intercept absorbs the
conditional mean plus expansion bias and is never used as a mean
estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import SingularDesignError, _normal_factor
from .stats import standard_normal_quantiles

BETA1_FLOOR = 1e-8


class QcmError(ValueError):
    pass


@dataclass(frozen=True)
class QuantileGrid:
    levels: np.ndarray    # (K,) strictly increasing, in (0,1)
    design: np.ndarray    # (K, 4) rows (1, z, z^2-1, z^3-3z)
    chol: np.ndarray      # Cholesky factor of design'design

    @property
    def size(self):
        return len(self.levels)


def build_design(levels) -> QuantileGrid:
    """Design matrix on the normal-quantile basis; verifies full rank."""
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or len(levels) < 4:
        raise QcmError(f"need at least 4 quantile levels, got {levels.shape}")
    if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
        raise QcmError("levels must be strictly increasing inside (0,1)")
    z = standard_normal_quantiles(levels)
    design = np.column_stack([np.ones_like(z), z, z**2 - 1.0, z**3 - 3.0 * z])
    try:
        chol = _normal_factor(design)
    except SingularDesignError as e:
        raise QcmError(f"degenerate quantile design: {e}") from None
    return QuantileGrid(levels=levels, design=design, chol=chol)


@dataclass
class MomentEstimate:
    variance: float
    skewness: float
    kurtosis: float
    degenerate: bool = False
    projected: bool = False


def _solve_grid(grid: QuantileGrid, responses):
    rhs = grid.design.T @ responses
    return np.linalg.solve(grid.chol.T, np.linalg.solve(grid.chol, rhs))


def _moments_from_theta(theta):
    """Map stacked coefficients (4, ...) to (h, s, k, degenerate)."""
    b1, b2, b3 = theta[1], theta[2], theta[3]
    h = b1 * b1
    degenerate = b1 < BETA1_FLOOR
    b1f = np.maximum(b1, BETA1_FLOOR)
    s = 6.0 * b2 / b1f
    k = 24.0 * b3 / b1f + 3.0
    return h, s, k, degenerate


def fit_qcm(quantiles, grid: QuantileGrid):
    """OLS fit of one quantile track; returns (theta, MomentEstimate)."""
    q = np.asarray(quantiles, dtype=float)
    if q.shape != (grid.size,):
        raise QcmError(f"expected {grid.size} quantiles, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise QcmError("non-finite quantile value")
    theta = _solve_grid(grid, q)
    h, s, k, degenerate = _moments_from_theta(theta)
    est = MomentEstimate(variance=float(h), skewness=float(s), kurtosis=float(k),
                         degenerate=bool(degenerate))
    return theta, project_feasible(est)


def project_feasible(est: MomentEstimate) -> MomentEstimate:
    """Raise kurtosis to the moment bound s^2 + 1 when violated (idempotent)."""
    bound = est.skewness**2 + 1.0
    if est.kurtosis < bound:
        est.kurtosis = bound
        est.projected = True
    return est


@dataclass
class MomentPanel:
    """Per (stock, day) conditional moment estimates, stock-major (N, D)."""
    days: np.ndarray
    mu: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    degenerate: np.ndarray    # bool (N, D)
    projected: np.ndarray     # bool (N, D)
    invalid: np.ndarray       # bool (N, D): non-finite inputs, no estimate
    stock_levels: dict = field(default_factory=dict)  # stock -> level indices used


def qcm_panel(quantile_values, days, omega_indices=None, levels=None,
              grids_cache=None, mu=None) -> MomentPanel:
    """Vectorized per-stock QCM fits over a (N, D, K) quantile panel.

    omega_indices maps stock -> accepted level indices (defaults to all
    levels for every stock). Stocks sharing a level subset share one
    design factorization. Cells with non-finite inputs are flagged
    invalid and carry NaN moments.
    """
    q = np.asarray(quantile_values, dtype=float)
    n, d, k = q.shape
    if levels is None:
        raise QcmError("levels of the quantile panel are required")
    levels = np.asarray(levels, dtype=float)
    if len(levels) != k:
        raise QcmError("level count does not match panel")
    if omega_indices is None:
        omega_indices = {i: np.arange(k) for i in range(n)}
    out = MomentPanel(days=np.asarray(days),
                      mu=np.full((n, d), np.nan) if mu is None else np.asarray(mu, dtype=float),
                      variance=np.full((n, d), np.nan),
                      skewness=np.full((n, d), np.nan),
                      kurtosis=np.full((n, d), np.nan),
                      degenerate=np.zeros((n, d), dtype=bool),
                      projected=np.zeros((n, d), dtype=bool),
                      invalid=np.zeros((n, d), dtype=bool))
    cache = grids_cache if grids_cache is not None else {}
    for i in range(n):
        idx = np.asarray(omega_indices.get(i, []), dtype=int)
        if len(idx) < 4:
            out.invalid[i, :] = True
            continue
        key = tuple(idx.tolist())
        if key not in cache:
            cache[key] = build_design(levels[idx])
        grid = cache[key]
        out.stock_levels[i] = idx
        track = q[i][:, idx]                      # (D, K_i)
        finite = np.all(np.isfinite(track), axis=1)
        if not finite.all():
            out.invalid[i, ~finite] = True
        cols = track[finite].T                    # (K_i, D_ok)
        if cols.shape[1] == 0:
            continue
        theta = _solve_grid(grid, cols)           # (4, D_ok)
        h, s, kk, degen = _moments_from_theta(theta)
        bound = s**2 + 1.0
        proj = kk < bound
        kk = np.where(proj, bound, kk)
        cols_ix = np.nonzero(finite)[0]
        out.variance[i, cols_ix] = h
        out.skewness[i, cols_ix] = s
        out.kurtosis[i, cols_ix] = kk
        out.degenerate[i, cols_ix] = degen
        out.projected[i, cols_ix] = proj
    return out
