"""Synthetic election panels with a known flip effect.

Outcome model per precinct::

    Y = g(x, w, z_c) + T_c * f(x) + noise

with ``g = 0.2 + 0.6 x + w.beta_w + z_c.gamma_z`` (``linear``), plus
``0.1 sin(2 pi x) + 0.05 x w_1`` (``nonlinear``).  In ``linear_mistakes``
mode partisans lose a share m of their votes under a flip and the other
party's partisans hand over the same share, giving ``f(x) = m (1 - 2x)``.

Outcomes are not clamped to [0, 1]; clamping would break the partially
linear model.  Generated panels are tagged for ``synthetic`` validation.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateTreatment, FlipDMLError, NumericalError
from .estimator import effect_at
from .nuisance import LearnerSpec
from .panel import PanelDataset, to_csv
from .rng import derive_seed, stream

Q_TRUTH = ("linear_mistakes", "custom_poly")
G_KINDS = ("linear", "nonlinear")


def _default_effects(n, scale):
    return tuple(scale * (-1) ** i / (1 + i // 2) for i in range(n))


@dataclass(frozen=True)
class SimConfig:
    C: int = 40
    n_range: tuple = (100, 100)
    treated_prob: float = 0.5
    q_truth: str = "linear_mistakes"
    m: float = 0.05
    custom_theta: tuple = ()
    g_kind: str = "nonlinear"
    noise_sd: float = 0.05
    beta_w: tuple | None = None
    gamma_z: tuple | None = None
    x_dist: tuple = (2.0, 2.0)
    n_w: int = 2
    n_z: int = 2
    seed: int = 0

    def __post_init__(self):
        if int(self.C) < 2:
            raise ConfigError("need at least 2 contests")
        lo, hi = self.n_range
        if int(lo) < 1 or int(hi) < int(lo):
            raise ConfigError(f"invalid precinct range {self.n_range}")
        if not 0 < self.treated_prob < 1:
            raise ConfigError("treated_prob must lie in (0, 1)")
        if self.q_truth not in Q_TRUTH:
            raise ConfigError(f"q_truth must be one of {Q_TRUTH}")
        if self.q_truth == "linear_mistakes" and not 0 <= self.m < 1:
            raise ConfigError("mistake rate m must lie in [0, 1)")
        if self.q_truth == "custom_poly" and len(self.custom_theta) == 0:
            raise ConfigError("custom_poly needs custom_theta")
        if self.g_kind not in G_KINDS:
            raise ConfigError(f"g_kind must be one of {G_KINDS}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.n_w < 0 or self.n_z < 0:
            raise ConfigError("covariate counts must be >= 0")
        a, b = self.x_dist
        if a <= 0 or b <= 0:
            raise ConfigError("Beta shape parameters must be positive")
        beta = _default_effects(self.n_w, 0.03) if self.beta_w is None else tuple(self.beta_w)
        gamma = _default_effects(self.n_z, 0.02) if self.gamma_z is None else tuple(self.gamma_z)
        if len(beta) != self.n_w or len(gamma) != self.n_z:
            raise ConfigError("beta_w / gamma_z lengths must match n_w / n_z")
        object.__setattr__(self, "beta_w", beta)
        object.__setattr__(self, "gamma_z", gamma)
        object.__setattr__(self, "n_range", (int(lo), int(hi)))

    def replace(self, **kw) -> SimConfig:
        if "beta_w" not in kw and "n_w" in kw:
            kw["beta_w"] = None
        if "gamma_z" not in kw and "n_z" in kw:
            kw["gamma_z"] = None
        return dataclasses.replace(self, **kw)

    @property
    def true_f(self) -> np.ndarray:
        if self.q_truth == "linear_mistakes":
            return np.array([self.m, -2 * self.m])
        return np.asarray(self.custom_theta, dtype=float)


def nuisance_g(cfg: SimConfig, x, w, z_rows):
    """True outcome level without treatment."""
    g = 0.2 + 0.6 * x + w @ np.asarray(cfg.beta_w, float) + z_rows @ np.asarray(cfg.gamma_z, float)
    if cfg.g_kind == "nonlinear":
        g = g + 0.1 * np.sin(2 * np.pi * x)
        if cfg.n_w >= 1:
            g = g + 0.05 * x * w[:, 0]
    return g


class TrueConditionalMean:
    """Oracle outcome predictor: ``g + mean(T) * f``.

    Adding the contest-level treated share times the true effect gives the
    pooled conditional mean that the cross-fitted outcome model targets, so
    the outcome residuals are exactly ``(T - mean(T)) f(x) + noise``.
    """

    def __init__(self, cfg: SimConfig, include_effect: bool = True):
        self.cfg = cfg
        self.include_effect = include_effect

    def __call__(self, ds: PanelDataset, rows):
        z = np.column_stack([ds.z[n] for n in ds.z_names]) if ds.z else np.empty((ds.C, 0))
        g = nuisance_g(self.cfg, ds.x[rows], ds.w[rows], z[ds.cluster[rows]])
        if self.include_effect:
            g = g + ds.treated_mean * effect_at(self.cfg.true_f, ds.x[rows])
        return g


@dataclass(frozen=True)
class SimTruth:
    true_f: np.ndarray
    true_mistakes: float
    cfg: SimConfig = field(repr=False)

    def f(self, x):
        return effect_at(self.true_f, x)

    def g(self, ds: PanelDataset):
        return TrueConditionalMean(self.cfg, include_effect=False)(ds, np.arange(ds.N))

    @property
    def g_description(self) -> str:
        extra = " + 0.1 sin(2 pi x) + 0.05 x w_1" if self.cfg.g_kind == "nonlinear" else ""
        return f"0.2 + 0.6 x + w.beta_w + z.gamma_z{extra}"

    def oracle_learner(self, include_effect: bool = True) -> LearnerSpec:
        return LearnerSpec("oracle", oracle=TrueConditionalMean(self.cfg, include_effect))

    def as_dict(self) -> dict:
        return {"true_f": [float(v) for v in self.true_f],
                "true_mistakes": self.true_mistakes,
                "g": self.g_description,
                "seed": int(self.cfg.seed)}


def generate(cfg: SimConfig) -> tuple[PanelDataset, SimTruth]:
    """Draw one synthetic panel and its ground truth."""
    rng = stream(cfg.seed, 0)
    C = cfg.C
    T = (rng.random(C) < cfg.treated_prob).astype(int)
    if T.min() == T.max():
        T = (rng.random(C) < cfg.treated_prob).astype(int)
        if T.min() == T.max():
            raise DegenerateTreatment(f"seed {cfg.seed}: all contests share one treatment after a redraw")
    lo, hi = cfg.n_range
    n_c = rng.integers(lo, hi + 1, size=C)
    z = rng.standard_normal((C, cfg.n_z))
    N = int(n_c.sum())
    cluster = np.repeat(np.arange(C), n_c)
    x = rng.beta(cfg.x_dist[0], cfg.x_dist[1], size=N)
    w = rng.standard_normal((N, cfg.n_w))
    noise = rng.normal(0.0, cfg.noise_sd, size=N) if cfg.noise_sd > 0 else np.zeros(N)
    y = nuisance_g(cfg, x, w, z[cluster]) + T[cluster] * effect_at(cfg.true_f, x) + noise

    width = len(str(C - 1))
    cids = [f"c{c:0{width}d}" for c in range(C)]
    within = np.arange(N) - np.repeat(np.cumsum(n_c) - n_c, n_c)
    pids = [f"{cids[c]}-p{p}" for c, p in zip(cluster, within)]
    ds = PanelDataset(
        contest_ids=cids, treatment=T, cluster=cluster, precinct_ids=pids, y=y, x=x, w=w,
        w_names=[str(j + 1) for j in range(cfg.n_w)],
        z={str(j + 1): z[:, j] for j in range(cfg.n_z)}, validation_mode="synthetic")
    truth = SimTruth(cfg.true_f, abs(float(effect_at(cfg.true_f, 1.0))), cfg)
    return ds, truth


def as_two_party(ds: PanelDataset) -> PanelDataset:
    """Exact two-candidate panel: party D is ``ds``, party R its complement."""
    return ds.replace(y=None, x=None, parties={"d": (ds.y, ds.x), "r": (1 - ds.y, 1 - ds.x)})


# ---- Monte Carlo ----------------------------------------------------------

class McRepFailure(NumericalError):
    """A Monte Carlo repetition failed; carries the repetition index."""

    def __init__(self, rep, cause):
        super().__init__(f"repetition {rep}: {cause.kind}: {cause}")
        self.rep = rep
        self.cause = cause

    def __reduce__(self):
        return (McRepFailure, (self.rep, self.cause))


def rep_seeds(mc_seed: int, rep: int) -> tuple[int, int]:
    """(data seed, analysis seed) of one repetition."""
    return derive_seed(mc_seed, rep, 0), derive_seed(mc_seed, rep, 1)


def _run_rep(args):
    from .pipeline import analyze, rep_metrics

    cfg, est, mc_seed, rep, emit_dir = args
    data_seed, seed = rep_seeds(mc_seed, rep)
    try:
        ds, truth = generate(cfg.replace(seed=data_seed))
        if emit_dir is not None:
            to_csv(ds, f"{emit_dir}/rep_{rep:04d}.csv")
        res = analyze(ds, est, seed)
    except FlipDMLError as e:
        raise McRepFailure(rep, e) from e
    rec = rep_metrics(res, truth)
    rec.update(rep=rep, data_seed=data_seed, seed=seed)
    return rec


def monte_carlo(cfg: SimConfig, est, reps: int, mc_seed: int = 0, workers: int = 1,
                emit_dir=None) -> dict:
    """Repeat generate -> fit -> infer -> band -> tests and summarise.

    Repetition r uses seeds derived from ``(mc_seed, r)``, so the first k
    repetitions of a longer run equal a k-repetition run.
    """
    from .pipeline import summarize_reps

    if int(reps) < 1:
        raise ConfigError("reps must be >= 1")
    jobs = [(cfg, est, mc_seed, r, emit_dir) for r in range(int(reps))]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_rep, jobs))
    else:
        records = [_run_rep(j) for j in jobs]
    return summarize_reps(records, cfg, est, mc_seed)
