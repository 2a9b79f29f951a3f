"""Double machine learning with contest-level randomised treatment.

The flip effect is modelled as a degree-q polynomial in the modifier x.
After partialling out the cross-fitted outcome model and the treatment
model (the contest-level sample mean of T), the outcome residuals are
regressed on ``x**i * U`` for ``i = 0..q`` without an extra intercept.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTreatment, RankDeficient
from .nuisance import FoldPlan, LearnerSpec, crossfit_outcome, make_folds
from .panel import PanelDataset, validate_design

PRESETS = {"constant": 0, "linear": 1, "cubic": 3}
RANK_TOL = 1e-10


@dataclass(frozen=True)
class PolySpec:
    q: int

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 0:
            raise ConfigError(f"polynomial degree must be a nonnegative integer, got {self.q!r}")

    @classmethod
    def parse(cls, text) -> PolySpec:
        if isinstance(text, PolySpec):
            return text
        if isinstance(text, int):
            return cls(text)
        text = str(text).strip()
        if text in PRESETS:
            return cls(PRESETS[text])
        m = re.fullmatch(r"q\s*=\s*(\d+)", text)
        if m:
            return cls(int(m.group(1)))
        raise ConfigError(f"unknown spec {text!r}; use constant, linear, cubic or q=N")

    @property
    def name(self) -> str:
        for k, v in PRESETS.items():
            if v == self.q:
                return k
        return f"q={self.q}"

    @property
    def n_coef(self) -> int:
        return self.q + 1


@dataclass(frozen=True)
class DmlFit:
    theta: np.ndarray
    v_hat: np.ndarray
    u_hat: np.ndarray
    eps_hat: np.ndarray
    treated_mean: float
    spec: PolySpec
    x: np.ndarray
    cluster: np.ndarray
    fold_plan: FoldPlan | None = None
    learner_spec: LearnerSpec | None = None
    diagnostics: tuple = ()

    @property
    def q(self) -> int:
        return self.spec.q

    @property
    def N(self) -> int:
        return int(self.v_hat.shape[0])

    def design(self) -> np.ndarray:
        return poly_basis(self.x, self.q) * self.u_hat[:, None]


def poly_basis(x, q: int) -> np.ndarray:
    """Rows ``(1, x, ..., x**q)`` for each entry of ``x``."""
    x = np.asarray(x, dtype=float)
    return x[..., None] ** np.arange(q + 1)


def treatment_residuals(ds: PanelDataset) -> tuple[float, np.ndarray]:
    """Contest-level treatment residuals ``T_c - mean(T)`` expanded to rows."""
    t = ds.treatment.astype(float)
    if t.min() == t.max():
        raise DegenerateTreatment("treatment does not vary across contests")
    treated_mean = float(np.mean(t))
    return treated_mean, (t - treated_mean)[ds.cluster]


def solve_final_stage(D: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Least squares via SVD; refuses rank-deficient designs."""
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(
            f"final-stage design is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")
    return Vt.T @ ((U.T @ v) / s)


def fit_from_residuals(ds: PanelDataset, v_hat, spec: PolySpec, **meta) -> DmlFit:
    """Final stage given outcome residuals (steps 3-5 of the procedure)."""
    spec = PolySpec.parse(spec)
    treated_mean, u_hat = treatment_residuals(ds)
    if spec.n_coef > ds.C:
        warnings.warn(f"{spec.n_coef} coefficients from only {ds.C} contests", stacklevel=2)
    v_hat = np.asarray(v_hat, dtype=float)
    D = poly_basis(ds.x, spec.q) * u_hat[:, None]
    theta = solve_final_stage(D, v_hat)
    eps = v_hat - D @ theta
    return DmlFit(theta=theta, v_hat=v_hat, u_hat=u_hat, eps_hat=eps,
                  treated_mean=treated_mean, spec=spec, x=ds.x, cluster=ds.cluster, **meta)


def fit_dml(ds: PanelDataset, spec, learner: LearnerSpec | None = None, K: int = 5,
            seed: int = 0, plan: FoldPlan | None = None, workers: int = 1) -> DmlFit:
    """Estimate the polynomial flip-effect coefficients.

    Parameters
    ----------
    ds : PanelDataset
        Single-party panel.
    spec : PolySpec, int or preset name
        Degree of the effect polynomial.
    learner : LearnerSpec
        Outcome learner; defaults to boosted trees.
    K, seed : int
        Fold count and seed for the contest-level fold plan (ignored when
        ``plan`` is given).
    """
    validate_design(ds)
    spec = PolySpec.parse(spec)
    learner = learner or LearnerSpec()
    plan = plan or make_folds(ds, K, seed)
    out = crossfit_outcome(ds, learner, plan, workers=workers)
    return fit_from_residuals(ds, out.v_hat, spec, fold_plan=plan, learner_spec=learner,
                              diagnostics=tuple(out.diagnostics))


def effect_at(fit, x):
    """Evaluate the fitted polynomial at ``x`` (scalar or array) by Horner's rule."""
    theta = fit.theta if hasattr(fit, "theta") else np.asarray(fit, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x) + theta[-1]
    for c in theta[-2::-1]:
        out = out * x + c
    return out if out.ndim else float(out)
