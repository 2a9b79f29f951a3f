"""Acceptance suite: one verdict line per criterion.

The Monte Carlo criteria share three studies, each run once per session
with the library defaults (boosted-tree nuisance, 5 contest folds, cubic
effect, 1001-point grid, M=1000, study seed 0):

* ``alt``    m=0.05, 200 repetitions (criteria 3, 4, 5, 7)
* ``null``   m=0, 500 repetitions (criterion 6)
* ``ate``    m=0.05, constant effect spec, 200 repetitions (criterion 7)
"""

import time

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from flipdml.bootstrap import GridSpec, minimax_center
from flipdml.cli import main
from flipdml.estimator import PolySpec, effect_at, fit_dml, fit_from_residuals
from flipdml.inference import sandwich_variance
from flipdml.nuisance import LearnerSpec, make_folds
from flipdml.panel import PanelDataset, split_by_party
from flipdml.pipeline import EstConfig
from flipdml.simgen import SimConfig, as_two_party, generate, monte_carlo

STUDY = SimConfig(C=40, n_range=(100, 100), m=0.05, noise_sd=0.05, g_kind="nonlinear")
EST = EstConfig(spec="cubic", learner=LearnerSpec("boosted_trees"), grid=1001, M=1000)
MC_SEED = 0

_cache = {}


def study(name):
    """Run (once) and cache a Monte Carlo study."""
    if name not in _cache:
        cfg, est, reps = {
            "alt": (STUDY, EST, 200),
            "alt50": (STUDY, EST, 50),
            "null": (STUDY.replace(m=0.0), EST, 500),
            "ate": (STUDY, EstConfig(spec="constant", sup_tests=False, grid=1001, M=1000), 200),
        }[name]
        t0 = time.perf_counter()
        rep = monte_carlo(cfg, est, reps, mc_seed=MC_SEED)
        _cache[name] = (rep, time.perf_counter() - t0)
    return _cache[name]


# ---- 1. oracle equivalence -------------------------------------------------

def test_criterion_1_oracle_equivalence(verdict):
    ds, truth = generate(SimConfig(C=20, n_range=(20, 40), seed=101))
    oracle = truth.oracle_learner()
    u = ds.treatment[ds.cluster] - ds.treatment.mean()
    v = ds.y - oracle.oracle(ds, np.arange(ds.N))
    worst, elapsed = 0.0, 0.0
    for q in (0, 1, 3):
        t0 = time.perf_counter()
        fit = fit_dml(ds, PolySpec(q), oracle, K=5, seed=0)
        elapsed = max(elapsed, time.perf_counter() - t0)
        # independent route: explicit regressors and a dense normal-equation solve
        D = np.column_stack([ds.x ** i * u for i in range(q + 1)])
        dense = np.linalg.solve(D.T @ D, D.T @ v)
        worst = max(worst, float(np.max(np.abs(dense - fit.theta))))
    verdict(1, worst <= 1e-8 and elapsed < 1.0,
            f"max |theta - dense| = {worst:.2e} (tol 1e-8), slowest fit {elapsed:.3f}s (< 1s)")


# ---- 2. HC0 collapse -------------------------------------------------------

_hc0_worst = []


@settings(max_examples=30, deadline=None)
@given(C=st.integers(8, 60), q=st.sampled_from([0, 1, 3]), seed=st.integers(0, 2 ** 31))
def _hc0_case(C, q, seed):
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 2, C)
    T[:2] = (1, 0)
    ds = PanelDataset([f"c{i}" for i in range(C)], T, np.arange(C), [f"p{i}" for i in range(C)],
                      y=rng.random(C), x=rng.random(C))
    fit = fit_from_residuals(ds, rng.normal(size=C), PolySpec(q))
    t0 = time.perf_counter()
    var = sandwich_variance(fit).var_theta
    elapsed = time.perf_counter() - t0
    hc0 = sm.OLS(fit.v_hat, fit.design()).fit(cov_type="HC0").cov_params()
    _hc0_worst.append((float(np.max(np.abs(var - hc0)) / max(1.0, np.abs(hc0).max())), elapsed))


def test_criterion_2_hc0_collapse(verdict):
    _hc0_worst.clear()
    _hc0_case()
    err = max(e for e, _ in _hc0_worst)
    slow = max(t for _, t in _hc0_worst)
    verdict(2, err <= 1e-10 and slow < 1.0,
            f"max entrywise gap to HC0 = {err:.2e} over {len(_hc0_worst)} datasets (tol 1e-10)")


# ---- 3-7. Monte Carlo studies ---------------------------------------------

@pytest.mark.slow
def test_criterion_3_recovery(verdict):
    rep50, elapsed = study("alt50")
    rep200, _ = study("alt")
    med = rep50["mistakes"]["median"]
    same = rep50["per_rep"] == rep200["per_rep"][:50]
    verdict(3, abs(med - 0.05) <= 0.015 and same,
            f"median mistakes over 50 reps = {med:.4f} (target 0.05 +/- 0.015), "
            f"{elapsed:.0f}s, prefix of 200-rep study: {same}")


@pytest.mark.slow
def test_criterion_4_pointwise_coverage(verdict):
    rep, elapsed = study("alt")
    cov = rep["coverage_pointwise_f1"]
    verdict(4, 0.90 <= cov["value"] <= 0.99,
            f"coverage of 95% CI for f(1) = {cov['value']:.3f} (MC se {cov['mcse']:.3f}), "
            f"band [0.90, 0.99], {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_5_uniform_coverage(verdict):
    rep, _ = study("alt")
    cov = rep["coverage_uniform"]
    crit = rep["critical_value"]["min"]
    verdict(5, 0.90 <= cov["value"] <= 0.99 and crit >= 1.9,
            f"uniform band coverage = {cov['value']:.3f} (MC se {cov['mcse']:.3f}), band "
            f"[0.90, 0.99]; min critical value {crit:.3f} (>= 1.9)")


@pytest.mark.slow
def test_criterion_6_size(verdict):
    rep, elapsed = study("null")
    wald = rep["rejection_rate"]["wald_zero"]["value"]
    sup = rep["rejection_rate"]["sup_zero"]["value"]
    verdict(6, 0.03 <= wald <= 0.08 and 0.02 <= sup <= 0.09,
            f"null rejection: Wald zero {wald:.3f} in [0.03, 0.08], sup T {sup:.3f} in "
            f"[0.02, 0.09], {rep['reps']} reps, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_7_power_and_ate(verdict):
    alt, _ = study("alt")
    ate, _ = study("ate")
    homog = alt["rejection_rate"]["wald_homogeneous"]["value"]
    ate_rej = ate["rejection_rate"]["wald_zero"]["value"]
    verdict(7, homog > 0.80 and ate_rej < 0.20,
            f"homogeneous Wald rejects {homog:.3f} (> 0.80); constant-spec zero test "
            f"rejects {ate_rej:.3f} (< 0.20)")


# ---- 8. mirror antisymmetry ------------------------------------------------

def test_criterion_8_mirror_antisymmetry(verdict):
    ds, _ = generate(SimConfig(C=30, n_range=(30, 50), seed=17))
    d, r = split_by_party(as_two_party(ds))
    plan = make_folds(d, 5, seed=3)
    x = GridSpec.uniform(1001).points
    worst = 0.0
    for q in (0, 1, 3):
        fd = fit_dml(d, PolySpec(q), LearnerSpec("linear"), plan=plan)
        fr = fit_dml(r, PolySpec(q), LearnerSpec("linear"), plan=plan)
        worst = max(worst, float(np.max(np.abs(effect_at(fr, x) + effect_at(fd, 1 - x)))))
    verdict(8, worst <= 1e-6, f"max |f_r(x) + f_d(1-x)| = {worst:.2e} (tol 1e-6)")


# ---- 9. determinism --------------------------------------------------------

def test_criterion_9_determinism(verdict, tmp_path):
    data = tmp_path / "panel.csv"
    assert main(["simulate", "--C", "24", "--n", "40", "--seed", "9", "--out", str(data)]) == 0
    outs = {}
    for threads in (1, 2):
        fit_out = tmp_path / f"fit{threads}.json"
        mc_out = tmp_path / f"mc{threads}.json"
        assert main(["fit", "--data", str(data), "--validation", "synthetic", "--seed", "4",
                     "--rounds", "60", "--reps", "500", "--threads", str(threads),
                     "--out", str(fit_out)]) == 0
        assert main(["mc", "--reps", "3", "--C", "16", "--n", "30", "--rounds", "40",
                     "--M", "300", "--grid", "201", "--seed", "2",
                     "--threads", str(threads), "--out", str(mc_out)]) == 0
        outs[threads] = (fit_out.read_bytes(), mc_out.read_bytes())
    same_fit = outs[1][0] == outs[2][0]
    same_mc = outs[1][1] == outs[2][1]
    verdict(9, same_fit and same_mc,
            f"fit JSON identical across --threads 1/2: {same_fit}; mc JSON identical: {same_mc}")


# ---- 10. minimax statistic vs exhaustive search ----------------------------

def exhaustive_minimax(f, s, n=1_000_000):
    """Grid minimisation of max |f - c| / s over c.

    The minimiser lies in [min f, max f]; phi is convex, so the true
    minimiser is within one cell of the best grid point, and a second
    grid over that bracket removes the discretisation error.
    """
    lo, hi = f.min(), f.max()
    for _ in range(2):
        cs = np.linspace(lo, hi, n)
        phi = _phi_chunks(f, s, cs)
        k = int(np.argmin(phi))
        lo, hi = cs[max(k - 1, 0)], cs[min(k + 1, n - 1)]
    return float(phi[k])


def _phi_chunks(f, s, cs, chunk=200_000):
    out = np.empty(cs.size)
    for i in range(0, cs.size, chunk):
        c = cs[i:i + chunk]
        out[i:i + chunk] = np.max(np.abs(f[None, :] - c[:, None]) / s[None, :], axis=1)
    return out


def test_criterion_10_minimax_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        f = rng.normal(0, 0.1, size=5)
        s = rng.uniform(0.01, 0.1, size=5)
        H, _ = minimax_center(f, s)
        worst = max(worst, abs(H - exhaustive_minimax(f, s)))
    verdict(10, worst <= 1e-6, f"max |H_search - H_exhaustive| = {worst:.2e} over 20 toys (tol 1e-6)")
