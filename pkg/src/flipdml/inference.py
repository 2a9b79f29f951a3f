"""Cluster-robust inference for the flip-effect coefficients.

Scores are ``x**i * U * eps`` per row; contests contribute through the
sums of their scores.  With ``J = D'D / N`` the sandwich covariance is

    Var(theta) = J^-1 (sum_c s_c s_c') J^-1 / N**2

where ``s_c`` is contest c's vector of score sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import (
    NumericalError,
    RankMismatch,
    SingularJ,
    SingularRestriction,
    SpecMismatch,
    ZeroVariance,
)
from .estimator import DmlFit, effect_at, poly_basis

ALPHAS = (0.01, 0.05, 0.10)
Z975 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class Scores:
    rows: np.ndarray          # (N, q+1)
    cluster_sums: np.ndarray  # (C, q+1)


@dataclass(frozen=True)
class InferenceState:
    J: np.ndarray
    J_inv: np.ndarray
    cluster_score_sums: np.ndarray
    var_theta: np.ndarray
    N: int
    C: int
    df_correction: bool = False

    @property
    def q(self) -> int:
        return self.J.shape[0] - 1

    @property
    def coef_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.var_theta), 0.0, None))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int | None
    p_value: float
    method: str
    decision_at: dict
    name: str = ""
    estimate: float | None = None
    se: float | None = None
    independence_assumed: bool = False

    def reject(self, alpha=0.05) -> bool:
        return self.p_value < alpha

    def as_dict(self) -> dict:
        d = {"statistic": self.statistic, "dof": self.dof, "p_value": self.p_value,
             "method": self.method,
             "decision_at": {f"{a:g}": v for a, v in self.decision_at.items()}}
        if self.estimate is not None:
            d.update(estimate=self.estimate, se=self.se)
        if self.independence_assumed:
            d["independence_assumed"] = True
        return d


@dataclass(frozen=True)
class MistakesEstimate:
    point: float
    signed_value: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    signed_ci: tuple = field(default=(float("nan"), float("nan")))

    def as_dict(self) -> dict:
        return {"point": self.point, "signed_value": self.signed_value, "se": self.se,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "p_value": self.p_value,
                "signed_ci": list(self.signed_ci)}


def _decisions(p):
    return {a: ("reject" if p < a else "fail-to-reject") for a in ALPHAS}


def build_scores(fit: DmlFit, ds=None) -> Scores:
    """Row scores ``x**i * U * eps`` and their per-contest sums."""
    x = fit.x if ds is None else ds.x
    cluster = fit.cluster if ds is None else ds.cluster
    rows = poly_basis(x, fit.q) * (fit.u_hat * fit.eps_hat)[:, None]
    C = int(cluster.max()) + 1
    sums = np.zeros((C, fit.q + 1))
    np.add.at(sums, cluster, rows)
    return Scores(rows, sums)


def sandwich_variance(fit: DmlFit, scores: Scores | None = None,
                      df_correction: bool = False) -> InferenceState:
    """Cluster-robust covariance of the coefficient vector.

    ``df_correction`` inflates the middle matrix by ``C / (C - 1)``.
    """
    if scores is None:
        scores = build_scores(fit)
    D = fit.design()
    N = D.shape[0]
    J = D.T @ D / N
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        raise SingularJ("scaling matrix is not positive definite") from None
    ev = np.linalg.eigvalsh(J)
    if ev[0] <= 1e-14 * ev[-1]:
        raise SingularJ("scaling matrix is numerically singular")
    J_inv = np.linalg.inv(J)
    J_inv = (J_inv + J_inv.T) / 2
    S = scores.cluster_sums
    C = S.shape[0]
    middle = S.T @ S
    if df_correction:
        middle = middle * (C / (C - 1))
    var = J_inv @ middle @ J_inv / N**2
    var = (var + var.T) / 2
    return InferenceState(J, J_inv, S, var, N, C, df_correction)


def _quad(var, r):
    """``r V r'`` for each row of ``r``, clamping round-off negatives to 0."""
    v = np.einsum("...i,ij,...j->...", r, var, r)
    tol = 1e-12 * max(np.trace(var), 0.0) * np.sum(r * r, axis=-1)
    if np.any(v < -tol - 1e-300):
        raise NumericalError("negative variance from the sandwich covariance")
    return np.where(v < 0, 0.0, v)


def pointwise_se(state: InferenceState, x):
    """Cluster-robust standard error of the fitted effect at ``x``."""
    r = poly_basis(x, state.q)
    out = np.sqrt(_quad(state.var_theta, r))
    return out if np.ndim(out) else float(out)


def restriction(preset: str, q: int) -> np.ndarray:
    """Restriction matrices: ``zero`` (all coefficients), ``homogeneous``
    (all but the constant), ``linearity`` (degree 2 and up)."""
    first = {"zero": 0, "homogeneous": 1, "linearity": 2}
    if preset not in first:
        raise RankMismatch(f"unknown restriction preset {preset!r}")
    return np.eye(q + 1)[first[preset]:]


def wald_test(state: InferenceState, theta, R) -> TestResult:
    """Chi-square Wald test of ``R theta = 0`` with the sandwich covariance."""
    theta = np.asarray(theta, dtype=float)
    name = ""
    if isinstance(R, str):
        name = R
        R = restriction(R, theta.size - 1)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = R.shape[0]
    if R.size == 0 or R.shape[1] != theta.size or r > theta.size:
        raise RankMismatch(f"restriction of shape {R.shape} does not fit {theta.size} coefficients")
    if np.linalg.matrix_rank(R) < r:
        raise RankMismatch("restriction matrix lacks full row rank")
    Rt = R @ theta
    M = R @ state.var_theta @ R.T
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 1e-14 * max(ev[-1], 1e-300):
        raise SingularRestriction("R Var R' is not invertible")
    W = float(Rt @ np.linalg.solve(M, Rt))
    W = max(W, 0.0)
    p = float(stats.chi2.sf(W, r))
    return TestResult(W, r, p, "wald", _decisions(p), name=name)


def linear_combination_test(state: InferenceState, theta, a, name="") -> TestResult:
    """Two-sided z-test of ``a' theta = 0``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != theta.shape:
        raise RankMismatch(f"weight vector has length {a.size}, need {theta.size}")
    est = float(a @ theta)
    var = float(_quad(state.var_theta, a))
    if var <= 0:
        raise ZeroVariance("linear combination has zero variance")
    se = var ** 0.5
    z = est / se
    p = float(2 * stats.norm.sf(abs(z)))
    return TestResult(z, None, p, "z", _decisions(p), name=name, estimate=est, se=se)


def effect_test(state, theta, x, name="") -> TestResult:
    """z-test of ``f(x) = 0``."""
    theta = np.asarray(theta, dtype=float)
    return linear_combination_test(state, theta, poly_basis(x, theta.size - 1),
                                   name=name or f"f({x:g})")


def abs_interval(lo: float, hi: float) -> tuple[float, float]:
    """Image of ``[lo, hi]`` under ``|.|``."""
    if lo >= 0:
        return lo, hi
    if hi <= 0:
        return -hi, -lo
    return 0.0, max(-lo, hi)


def mistakes(fit: DmlFit, state: InferenceState) -> MistakesEstimate:
    """Partisan-voting mistakes share ``|f(1)|`` with a 95% interval.

    The interval is the image of the signed 95% interval for ``f(1)``
    under the absolute value, so it starts at 0 when the signed interval
    contains 0.  The reported SE is that of ``f(1)``.
    """
    signed = effect_at(fit, 1.0)
    se = pointwise_se(state, 1.0)
    lo, hi = signed - Z975 * se, signed + Z975 * se
    ci_low, ci_high = abs_interval(lo, hi)
    if se > 0:
        p = effect_test(state, fit.theta, 1.0).p_value
    else:
        p = 1.0 if signed == 0 else 0.0
    return MistakesEstimate(abs(signed), signed, se, ci_low, ci_high, p, (lo, hi))


def compare_fits(fit_a: DmlFit, state_a: InferenceState, fit_b: DmlFit,
                 state_b: InferenceState, x: float) -> TestResult:
    """z-test of ``f_a(x) - f_b(x) = 0`` treating the two fits as independent."""
    if fit_a.q != fit_b.q:
        raise SpecMismatch(f"cannot compare degree {fit_a.q} with degree {fit_b.q}")
    diff = effect_at(fit_a, x) - effect_at(fit_b, x)
    se = (pointwise_se(state_a, x) ** 2 + pointwise_se(state_b, x) ** 2) ** 0.5
    if se <= 0:
        raise ZeroVariance("both fits have zero variance at x")
    z = diff / se
    p = float(2 * stats.norm.sf(abs(z)))
    return TestResult(z, None, p, "z", _decisions(p), name=f"f_a({x:g}) - f_b({x:g})",
                      estimate=diff, se=se, independence_assumed=True)
