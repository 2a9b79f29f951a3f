"""End-to-end analysis of one panel and Monte Carlo summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bootstrap import (
    DEFAULT_GRID,
    DEFAULT_M,
    BandResult,
    GridSpec,
    SupTestResult,
    multiplier_draws,
    sup_test_homogeneous,
    sup_test_zero,
    uniform_band,
)
from .errors import ConfigError
from .estimator import DmlFit, PolySpec, effect_at, fit_dml
from .inference import (
    Z975,
    InferenceState,
    MistakesEstimate,
    TestResult,
    effect_test,
    mistakes,
    sandwich_variance,
    wald_test,
)
from .nuisance import LearnerSpec
from .panel import DesignSummary, PanelDataset, validate_design

WALD_PRESETS = ("zero", "homogeneous", "linearity")
MIN_DEGREE = {"zero": 0, "homogeneous": 1, "linearity": 2}


@dataclass(frozen=True)
class EstConfig:
    spec: PolySpec = field(default_factory=lambda: PolySpec(3))
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    K: int = 5
    grid: int = DEFAULT_GRID
    M: int = DEFAULT_M
    alpha: float = 0.05
    df_correction: bool = False
    band: bool = True
    sup_tests: bool = True
    wald_tests: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spec", PolySpec.parse(self.spec))
        if isinstance(self.learner, str):
            object.__setattr__(self, "learner", LearnerSpec(self.learner))
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if int(self.M) < 1:
            raise ConfigError("M must be >= 1")
        if int(self.K) < 2:
            raise ConfigError("K must be >= 2")
        if int(self.grid) < 2:
            raise ConfigError("grid must have at least 2 points")

    def describe(self) -> dict:
        return {"spec": self.spec.name, "q": self.spec.q, "learner": self.learner.describe(),
                "K": self.K, "grid": self.grid, "M": self.M, "alpha": self.alpha,
                "df_correction": self.df_correction}


@dataclass
class Analysis:
    design: DesignSummary
    fit: DmlFit
    state: InferenceState
    wald: dict = field(default_factory=dict)
    effects: dict = field(default_factory=dict)
    mistakes: MistakesEstimate | None = None
    band: BandResult | None = None
    sup: dict = field(default_factory=dict)


def analyze(ds: PanelDataset, est: EstConfig, seed: int = 0, workers: int = 1) -> Analysis:
    """ingest-ready panel -> fit -> sandwich -> tests -> mistakes -> band.

    ``seed`` drives both the fold plan and the bootstrap weights.
    """
    design = validate_design(ds)
    fit = fit_dml(ds, est.spec, est.learner, K=est.K, seed=seed, workers=workers)
    state = sandwich_variance(fit, df_correction=est.df_correction)
    out = Analysis(design, fit, state)
    if est.wald_tests:
        for name in WALD_PRESETS:
            out.wald[name] = wald_test(state, fit.theta, name) if fit.q >= MIN_DEGREE[name] else None
    out.effects = {"f(1)": effect_test(state, fit.theta, 1.0, name="f(1)"),
                   "f(0.5)": effect_test(state, fit.theta, 0.5, name="f(0.5)")}
    out.mistakes = mistakes(fit, state)
    if est.band or est.sup_tests:
        grid = GridSpec.uniform(est.grid)
        draws = multiplier_draws(state, grid, est.M, seed)
        if est.band:
            out.band = uniform_band(fit, state, grid, est.M, est.alpha, seed, draws=draws)
        if est.sup_tests:
            out.sup = {"zero": sup_test_zero(fit, state, grid, est.M, seed, draws=draws),
                       "homogeneous": sup_test_homogeneous(fit, state, grid, est.M, seed,
                                                           draws=draws)}
    return out


# ---- Monte Carlo ----------------------------------------------------------

def _p(t):
    if t is None:
        return None
    return t.p_value


def rep_metrics(res: Analysis, truth) -> dict:
    """Per-repetition quantities compared against the ground truth."""
    fit, state = res.fit, res.state
    f1 = effect_at(fit, 1.0)
    true_f1 = float(truth.f(1.0))
    se1 = res.mistakes.se
    rec = {
        "theta": [float(v) for v in fit.theta],
        "f1_hat": float(f1),
        "f1_se": float(se1),
        "covered_pointwise_f1": bool(abs(f1 - true_f1) <= Z975 * se1),
        "mistakes": res.mistakes.point,
        "wald_zero_p": _p(res.wald.get("zero")),
        "wald_homogeneous_p": _p(res.wald.get("homogeneous")),
        "sup_zero_p": _p(res.sup.get("zero")),
        "sup_homogeneous_p": _p(res.sup.get("homogeneous")),
    }
    if res.band is not None:
        rec["critical_value"] = res.band.critical_value
        rec["covered_uniform"] = res.band.covers(truth.f(res.band.grid.points))
    return rec


def _rate(flags):
    flags = np.asarray(flags, dtype=float)
    p = float(flags.mean())
    return {"value": p, "mcse": float(np.sqrt(p * (1 - p) / flags.size))}


def _mean(values):
    v = np.asarray(values, dtype=float)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"value": float(v.mean()), "mcse": sd / np.sqrt(v.size)}


def summarize_reps(records: list, cfg, est: EstConfig, mc_seed: int) -> dict:
    """Aggregate per-repetition records into a Monte Carlo report."""
    reps = len(records)
    alpha = est.alpha
    q = est.spec.q
    true_f = np.asarray(cfg.true_f, dtype=float)
    true_f1 = float(effect_at(true_f, 1.0))
    theta = np.array([r["theta"] for r in records])
    f1 = np.array([r["f1_hat"] for r in records])

    report = {"reps": reps, "mc_seed": mc_seed, "alpha": alpha,
              "sim_config": _cfg_dict(cfg), "est_config": est.describe(),
              "truth": {"true_f": [float(v) for v in true_f], "true_f1": true_f1,
                        "true_mistakes": abs(true_f1)},
              "note": "synthetic outcomes are not clamped to [0, 1]"}
    if true_f.size <= q + 1:
        padded = np.zeros(q + 1)
        padded[:true_f.size] = true_f
        err = theta - padded
        report["theta"] = {"bias": err.mean(axis=0).tolist(),
                           "rmse": np.sqrt((err ** 2).mean(axis=0)).tolist(),
                           "mcse_bias": (err.std(axis=0, ddof=1) / np.sqrt(reps)).tolist()
                           if reps > 1 else [0.0] * (q + 1)}
    else:
        report["theta"] = None
    e1 = f1 - true_f1
    report["f1"] = {"bias": _mean(e1), "rmse": float(np.sqrt(np.mean(e1 ** 2))),
                    "mean_se": float(np.mean([r["f1_se"] for r in records]))}
    report["coverage_pointwise_f1"] = _rate([r["covered_pointwise_f1"] for r in records])
    if "covered_uniform" in records[0]:
        crit = np.array([r["critical_value"] for r in records])
        report["coverage_uniform"] = _rate([r["covered_uniform"] for r in records])
        report["critical_value"] = {"min": float(crit.min()), "mean": float(crit.mean()),
                                    "max": float(crit.max())}
    rejections = {}
    for key in ("wald_zero", "wald_homogeneous", "sup_zero", "sup_homogeneous"):
        ps = [r[f"{key}_p"] for r in records]
        rejections[key] = None if ps[0] is None else _rate([p < alpha for p in ps])
    report["rejection_rate"] = rejections
    mk = np.array([r["mistakes"] for r in records])
    report["mistakes"] = {"mean": _mean(mk), "median": float(np.median(mk)),
                          "true": abs(true_f1)}
    report["per_rep"] = records
    return report


def _cfg_dict(cfg) -> dict:
    d = {}
    for k, v in vars(cfg).items():
        d[k] = list(v) if isinstance(v, tuple) else v
    return d
