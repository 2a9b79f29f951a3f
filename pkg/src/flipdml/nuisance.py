"""Cross-fitted outcome regression.

The outcome model regresses Y on (X, W, Z) pooled over treated and control
rows.  Under randomised treatment this targets g + f * E[T] rather than g
itself; the final-stage regression on centred treatment residuals does
not depend on that shift.  The treatment indicator is never a feature.

Folds partition contests, never individual precincts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, SingularDesign, TooFewClusters
from .panel import PanelDataset
from .rng import stream
from .trees import BoostedTrees

LEARNER_KINDS = ("mean", "linear", "ridge", "boosted_trees", "oracle")
RIDGE_GRID = np.logspace(-6, 1, 10)
BOOSTED_DEFAULTS = dict(depth=3, rounds=200, learning_rate=0.1, min_leaf=5)


@dataclass(frozen=True)
class LearnerSpec:
    """Which outcome learner to use and its hyperparameters.

    ``oracle`` learners carry a callable ``oracle(ds, rows) -> predictions``
    and are only available programmatically.  ``ridge`` without a ``lam``
    hyperparameter picks the penalty by inner cross-validation.
    """

    kind: str = "boosted_trees"
    params: dict = field(default_factory=dict)
    oracle: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        kind = {"boosted": "boosted_trees"}.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in LEARNER_KINDS:
            raise ConfigError(f"unknown learner {self.kind!r}")
        p = dict(self.params)
        if kind == "boosted_trees":
            p = {**BOOSTED_DEFAULTS, **p}
            if int(p["depth"]) < 1 or int(p["rounds"]) < 1 or int(p["min_leaf"]) < 1:
                raise ConfigError("boosted trees need depth >= 1, rounds >= 1, min_leaf >= 1")
            if not 0 < float(p["learning_rate"]) <= 1:
                raise ConfigError("learning_rate must lie in (0, 1]")
        if kind == "ridge" and "lam" in p and float(p["lam"]) < 0:
            raise ConfigError("ridge penalty must be >= 0")
        if kind == "oracle" and not callable(self.oracle):
            raise ConfigError("oracle learner needs a callable")
        object.__setattr__(self, "params", p)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": {k: self.params[k] for k in sorted(self.params)}}


@dataclass(frozen=True)
class FoldPlan:
    K: int
    assignment: np.ndarray  # contest index -> fold

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.intp)
        if a.min() < 0 or a.max() >= self.K or np.unique(a).size != self.K:
            raise ConfigError("fold plan must put every contest in one of K nonempty folds")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.K)


def make_folds(ds: PanelDataset, K: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle contests with a seeded stream, then deal them round-robin."""
    K = int(K)
    if K < 2:
        raise ConfigError("need at least 2 folds")
    if K > ds.C:
        raise TooFewClusters(f"{K} folds requested but only {ds.C} contests")
    perm = stream(seed, 1).permutation(ds.C)
    assignment = np.empty(ds.C, dtype=np.intp)
    assignment[perm] = np.arange(ds.C) % K
    return FoldPlan(K, assignment)


def build_features(ds: PanelDataset) -> tuple[np.ndarray, list[str]]:
    """Nuisance feature matrix: modifier, precinct covariates, contest covariates.

    Categorical contest covariates are one-hot encoded with the
    lexicographically first level dropped.
    """
    cols = [ds.x]
    names = ["x"]
    for j, n in enumerate(ds.w_names):
        cols.append(ds.w[:, j])
        names.append(f"w_{n}")
    for n, z in ds.z.items():
        if z.dtype == object:
            levels = sorted(set(z))
            for lev in levels[1:]:
                cols.append((z == lev).astype(float)[ds.cluster])
                names.append(f"z_{n}={lev}")
        else:
            cols.append(z[ds.cluster])
            names.append(f"z_{n}")
    return np.column_stack(cols).astype(float), names


# ---- learners -------------------------------------------------------------

class MeanLearner:
    def fit(self, X, y, groups=None):
        self.mean_ = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(X.shape[0], self.mean_)


def _check_rank(A, what):
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-10 * s[0]:
        raise SingularDesign(f"{what}: feature matrix is rank deficient")


class LinearLearner:
    """Ordinary least squares with an intercept."""

    def fit(self, X, y, groups=None):
        A = np.column_stack([np.ones(X.shape[0]), X])
        _check_rank(A, "linear learner")
        self.coef_, *_ = np.linalg.lstsq(A, y, rcond=None)
        return self

    def predict(self, X):
        return self.coef_[0] + X @ self.coef_[1:]


class RidgeLearner:
    """Ridge on standardised features with an unpenalised intercept.

    The objective is ``||y - b0 - Xs beta||^2 + lam * n * ||beta||^2``.
    Without a fixed ``lam`` the penalty is chosen from ``RIDGE_GRID`` by
    5-fold cross-validation whose folds partition ``groups``.
    """

    def __init__(self, lam=None, inner_folds=5):
        self.lam = lam
        self.inner_folds = inner_folds

    @staticmethod
    def _solve(X, y, lam):
        n, F = X.shape
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        Xs = (X - mu) / sd
        ym = y.mean()
        if lam == 0:
            _check_rank(np.column_stack([np.ones(n), Xs]), "ridge learner with lam=0")
            A, b = Xs, y - ym
        else:
            A = np.vstack([Xs, np.sqrt(lam * n) * np.eye(F)])
            b = np.concatenate([y - ym, np.zeros(F)])
        beta, *_ = np.linalg.lstsq(A, b, rcond=None)
        coef = beta / sd
        return ym - mu @ coef, coef

    def _cv_lambda(self, X, y, groups):
        if groups is None:
            groups = np.arange(X.shape[0])
        uniq = np.unique(groups)
        k = min(self.inner_folds, uniq.size)
        if k < 2:
            return float(RIDGE_GRID[0])
        fold_of = dict(zip(uniq, np.arange(uniq.size) % k))
        fold = np.array([fold_of[g] for g in groups])
        errs = np.zeros(RIDGE_GRID.size)
        for f in range(k):
            tr, te = fold != f, fold == f
            for i, lam in enumerate(RIDGE_GRID):
                b0, coef = self._solve(X[tr], y[tr], lam)
                errs[i] += np.sum((y[te] - b0 - X[te] @ coef) ** 2)
        return float(RIDGE_GRID[int(np.argmin(errs))])

    def fit(self, X, y, groups=None):
        lam = self.lam if self.lam is not None else self._cv_lambda(X, y, groups)
        self.lam_ = float(lam)
        self.intercept_, self.coef_ = self._solve(X, y, self.lam_)
        return self

    def predict(self, X):
        return self.intercept_ + X @ self.coef_


def make_learner(spec: LearnerSpec):
    p = spec.params
    if spec.kind == "mean":
        return MeanLearner()
    if spec.kind == "linear":
        return LinearLearner()
    if spec.kind == "ridge":
        return RidgeLearner(lam=p.get("lam"))
    if spec.kind == "boosted_trees":
        return BoostedTrees(depth=p["depth"], rounds=p["rounds"],
                            learning_rate=p["learning_rate"], min_leaf=p["min_leaf"],
                            **({"max_bins": p["max_bins"]} if "max_bins" in p else {}))
    raise ConfigError(f"learner {spec.kind!r} is not constructible from features")


# ---- cross-fitting --------------------------------------------------------

@dataclass(frozen=True)
class OutcomeResiduals:
    v_hat: np.ndarray
    g_hat: np.ndarray
    diagnostics: list


def crossfit_outcome(ds: PanelDataset, spec: LearnerSpec, plan: FoldPlan,
                     workers: int = 1) -> OutcomeResiduals:
    """Out-of-fold outcome predictions and residuals ``V = Y - g_hat``.

    For fold k the learner is trained on every row whose contest is not in
    fold k and predicts the rows of fold k.
    """
    if plan.assignment.shape[0] != ds.C:
        raise ConfigError("fold plan does not match the dataset's contests")
    row_fold = plan.assignment[ds.cluster]
    X, _ = build_features(ds)
    y = ds.y

    def run(k):
        test = np.flatnonzero(row_fold == k)
        train = np.flatnonzero(row_fold != k)
        if spec.kind == "oracle":
            return test, np.asarray(spec.oracle(ds, test), dtype=float), {}
        model = make_learner(spec).fit(X[train], y[train], groups=ds.cluster[train])
        pred = model.predict(X[test])
        info = {"lam": model.lam_} if hasattr(model, "lam_") else {}
        return test, pred, info

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, range(plan.K)))
    else:
        results = [run(k) for k in range(plan.K)]

    g_hat = np.empty(ds.N)
    diagnostics = []
    for k, (test, pred, info) in enumerate(results):
        g_hat[test] = pred
        diagnostics.append({"fold": k, "n_test": int(test.size),
                            "contests": int(np.sum(plan.assignment == k)),
                            "mse": float(np.mean((y[test] - pred) ** 2)), **info})
    return OutcomeResiduals(y - g_hat, g_hat, diagnostics)
