"""Clustered Gaussian multiplier bootstrap.

Each replication draws one standard normal weight per contest and forms

    t_m(x) = r(x) J^-1 S' zeta_m / (N * se(x)),   r(x) = (1, x, ..., x**q)

with S the contest score-sum matrix.  The process is evaluated on a
fixed grid standing in for the supremum over [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, ZeroSE
from .estimator import DmlFit, effect_at, poly_basis
from .inference import InferenceState, pointwise_se
from .rng import replication_normals

DEFAULT_M = 2000
DEFAULT_GRID = 1001
SEARCH_TOL = 1e-8
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class GridSpec:
    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ConfigError("grid needs at least two points")
        if np.any(np.diff(p) <= 0) or p[0] != 0.0 or p[-1] != 1.0:
            raise ConfigError("grid must be strictly increasing from 0 to 1")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, n: int = DEFAULT_GRID) -> GridSpec:
        if n < 2:
            raise ConfigError("grid needs at least two points")
        return cls(np.linspace(0.0, 1.0, int(n)))

    def __len__(self):
        return self.points.size


@dataclass(frozen=True)
class BandResult:
    grid: GridSpec
    f_hat: np.ndarray
    se: np.ndarray
    pointwise_halfwidth: np.ndarray
    uniform_halfwidth: np.ndarray
    critical_value: float
    M: int
    seed: int
    alpha: float

    @property
    def uniform_lower(self):
        return self.f_hat - self.uniform_halfwidth

    @property
    def uniform_upper(self):
        return self.f_hat + self.uniform_halfwidth

    def covers(self, values) -> bool:
        """Whether ``values`` on the grid lie inside the uniform band."""
        return bool(np.all(np.abs(np.asarray(values) - self.f_hat) <= self.uniform_halfwidth))


@dataclass(frozen=True)
class SupTestResult:
    statistic: float
    p_value: float
    M: int
    kind: str
    center: float | None = None

    @property
    def low_m_warning(self) -> bool:
        return self.M < 100

    def as_dict(self) -> dict:
        d = {"statistic": self.statistic, "p_value": self.p_value, "M": self.M,
             "kind": self.kind, "method": "bootstrap_sup"}
        if self.center is not None:
            d["center"] = self.center
        if self.low_m_warning:
            d["warning"] = f"only {self.M} bootstrap replications; p-value resolution is 1/{self.M}"
        return d


def _grid(grid) -> GridSpec:
    if grid is None:
        return GridSpec.uniform()
    if isinstance(grid, GridSpec):
        return grid
    if isinstance(grid, int):
        return GridSpec.uniform(grid)
    return GridSpec(grid)


def _grid_se(state, grid):
    se = pointwise_se(state, grid.points)
    if np.any(se <= 0):
        x0 = grid.points[int(np.argmin(se))]
        raise ZeroSE(f"zero standard error at x={x0:g}; the fit is degenerate")
    return se


def multiplier_weights(state: InferenceState, grid) -> np.ndarray:
    """``(G, C)`` matrix ``a(x)`` with ``t_m(x) = a(x) . zeta_m``."""
    grid = _grid(grid)
    se = _grid_se(state, grid)
    r = poly_basis(grid.points, state.q)
    return (r @ state.J_inv @ state.cluster_score_sums.T) / (state.N * se[:, None])


def multiplier_draws(state: InferenceState, grid=None, M: int = DEFAULT_M,
                     seed: int = 0) -> np.ndarray:
    """``(M, G)`` bootstrap process values; row m depends only on ``(seed, m)``."""
    if M < 1:
        raise ConfigError("need at least one bootstrap replication")
    A = multiplier_weights(state, grid)
    zeta = replication_normals(seed, int(M), state.C)
    return zeta @ A.T


def uniform_critical_value(draws, alpha: float = 0.05) -> float:
    """Empirical (1 - alpha) quantile of the per-replication sup of |t_m|.

    Uses the order statistic at 1-based index ``ceil((1 - alpha) * M)``.
    """
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    draws = np.asarray(draws, dtype=float)
    sups = np.max(np.abs(draws), axis=1) if draws.ndim == 2 else draws
    return _order_stat(sups, alpha)


def _order_stat(sups, alpha):
    M = sups.shape[0]
    k = math.ceil((1 - alpha) * M - 1e-9)
    k = min(max(k, 1), M)
    return float(np.sort(sups)[k - 1])


def uniform_band(fit: DmlFit, state: InferenceState, grid=None, M: int = DEFAULT_M,
                 alpha: float = 0.05, seed: int = 0, draws=None) -> BandResult:
    """Pointwise and uniform confidence bands for the flip effect on ``grid``."""
    grid = _grid(grid)
    se = _grid_se(state, grid)
    if draws is None:
        draws = multiplier_draws(state, grid, M, seed)
    crit = uniform_critical_value(draws, alpha)
    z = float(stats.norm.ppf(1 - alpha / 2))
    f = effect_at(fit, grid.points)
    return BandResult(grid, f, se, z * se, crit * se, crit, draws.shape[0], seed, alpha)


def sup_test_zero(fit: DmlFit, state: InferenceState, grid=None, M: int = DEFAULT_M,
                  seed: int = 0, draws=None) -> SupTestResult:
    """Bootstrap test of ``f = 0`` on [0, 1] with ``T = sup |f_hat / se|``."""
    grid = _grid(grid)
    se = _grid_se(state, grid)
    if draws is None:
        draws = multiplier_draws(state, grid, M, seed)
    T = float(np.max(np.abs(effect_at(fit, grid.points)) / se))
    sups = np.max(np.abs(draws), axis=1)
    return SupTestResult(T, float(np.mean(sups >= T)), draws.shape[0], "zero_sup")


def minimax_center(values, se, tol: float = SEARCH_TOL):
    """Minimise ``phi(c) = max_x |values(x) - c| / se(x)`` over c.

    ``values`` may be ``(G,)`` or ``(M, G)``; the search runs row-wise.
    phi is convex in c, so a golden-section (ternary) search on
    ``[min(values) - 3 max(se), max(values) + 3 max(se)]`` converges.
    Returns ``(phi_min, c_min)``.
    """
    values = np.asarray(values, dtype=float)
    se = np.asarray(se, dtype=float)
    single = values.ndim == 1
    V = np.atleast_2d(values)
    inv = 1.0 / se

    def phi(c):
        return np.max(np.abs(V - c[:, None]) * inv, axis=1)

    pad = 3 * float(np.max(se))
    lo = V.min(axis=1) - pad
    hi = V.max(axis=1) + pad
    c1 = hi - _GOLDEN * (hi - lo)
    c2 = lo + _GOLDEN * (hi - lo)
    p1, p2 = phi(c1), phi(c2)
    while np.max(hi - lo) > tol:
        left = p1 <= p2
        # left: minimum in [lo, c2]; else in [c1, hi]
        hi = np.where(left, c2, hi)
        lo = np.where(left, lo, c1)
        new_c = np.where(left, hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo))
        new_p = phi(new_c)
        c1, c2, p1, p2 = (np.where(left, new_c, c2), np.where(left, c1, new_c),
                          np.where(left, new_p, p2), np.where(left, p1, new_p))
    c = (lo + hi) / 2
    pc = phi(c)
    best_p = np.minimum(pc, np.minimum(p1, p2))
    best_c = np.where(best_p == pc, c, np.where(best_p == p1, c1, c2))
    if single:
        return float(best_p[0]), float(best_c[0])
    return best_p, best_c


def sup_test_homogeneous(fit: DmlFit, state: InferenceState, grid=None, M: int = DEFAULT_M,
                         seed: int = 0, draws=None) -> SupTestResult:
    """Bootstrap test of a constant effect with ``H = inf_c sup |(f_hat - c) / se|``.

    The null distribution is the recentred multiplier process
    ``inf_d sup |t_m(x) - d / se(x)|``.
    """
    grid = _grid(grid)
    se = _grid_se(state, grid)
    if draws is None:
        draws = multiplier_draws(state, grid, M, seed)
    if fit.q == 0:
        return SupTestResult(0.0, 1.0, draws.shape[0], "homogeneous_sup", float(fit.theta[0]))
    H, c = minimax_center(effect_at(fit, grid.points), se)
    H_m, _ = minimax_center(draws * se, se)
    return SupTestResult(H, float(np.mean(H_m >= H)), draws.shape[0], "homogeneous_sup", c)
