import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flipdml.bootstrap import (
    GridSpec,
    minimax_center,
    multiplier_draws,
    multiplier_weights,
    sup_test_homogeneous,
    sup_test_zero,
    uniform_band,
    uniform_critical_value,
)
from flipdml.errors import ConfigError, ZeroSE
from flipdml.estimator import DmlFit, PolySpec, fit_dml
from flipdml.inference import InferenceState, pointwise_se, sandwich_variance
from flipdml.nuisance import LearnerSpec
from flipdml.rng import replication_normals


def make_state(J, S, N):
    J = np.asarray(J, float)
    S = np.asarray(S, float)
    Ji = np.linalg.inv(J)
    var = Ji @ S.T @ S @ Ji / N ** 2
    return InferenceState(J, Ji, S, var, N, S.shape[0])


def fake_fit(theta):
    theta = np.asarray(theta, float)
    z = np.zeros(1)
    return DmlFit(theta, z, z, z, 0.5, PolySpec(theta.size - 1), z, np.zeros(1, int))


@pytest.fixture(scope="module")
def real_fit():
    from flipdml.simgen import SimConfig, generate
    ds, _ = generate(SimConfig(C=40, n_range=(40, 60), seed=21))
    fit = fit_dml(ds, PolySpec(3), LearnerSpec("linear"), seed=0)
    return fit, sandwich_variance(fit)


def test_grid_spec():
    g = GridSpec.uniform()
    assert len(g) == 1001 and g.points[1] == pytest.approx(0.001)
    for bad in ([0, 0.5], [0.1, 1], [0, 0.6, 0.5, 1]):
        with pytest.raises(ConfigError):
            GridSpec(np.array(bad, float))


def test_quantile_convention():
    assert uniform_critical_value(np.array([1.0, 2, 3, 4]), 0.25) == 3.0
    assert uniform_critical_value(np.array([[0.0, 1], [-2, 0], [0, 3], [4, 0]]), 0.25) == 3.0
    assert uniform_critical_value(np.zeros((10, 5)), 0.05) == 0.0


def test_two_cluster_toy_brute_force():
    J = [[2.0, 0.5], [0.5, 1.0]]
    S = [[0.3, -0.1], [-0.2, 0.4]]
    N = 8
    st_ = make_state(J, S, N)
    grid = GridSpec(np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    A = multiplier_weights(st_, grid)
    zeta = np.array([1.0, -1.0])
    Ji = np.linalg.inv(np.array(J))
    for g, x in enumerate(grid.points):
        r = np.array([1.0, x])
        sigma = np.sqrt(r @ st_.var_theta @ r)
        direct = r @ Ji @ np.array(S).T @ zeta / (N * sigma)
        assert A[g] @ zeta == pytest.approx(direct, rel=1e-12)


def test_draws_are_seeded_per_replication():
    st_ = make_state(np.eye(2), np.random.default_rng(0).normal(size=(6, 2)), 30)
    a = multiplier_draws(st_, 11, 50, seed=4)
    b = multiplier_draws(st_, 11, 80, seed=4)
    assert np.array_equal(a, b[:50])
    assert not np.array_equal(a, multiplier_draws(st_, 11, 50, seed=5))
    z = replication_normals(4, 3, 6)
    assert np.array_equal(replication_normals(4, 1, 6)[0], z[0])


def test_constant_spec_draws_flat_in_x():
    st_ = make_state([[0.3]], [[0.2], [-0.5], [0.1]], 12)
    d = multiplier_draws(st_, 101, 200, seed=1)
    assert np.allclose(d, d[:, :1], atol=1e-14)


def test_constant_spec_critical_value_matches_direct_simulation():
    S = np.array([[0.2], [-0.5], [0.1], [0.4]])
    st_ = make_state([[0.3]], S, 20)
    crit = uniform_critical_value(multiplier_draws(st_, 21, 4000, seed=9), 0.05)
    zeta = replication_normals(9, 4000, 4)
    t = zeta @ S[:, 0] / np.sqrt(S[:, 0] @ S[:, 0])
    brute = np.sort(np.abs(t))[int(np.ceil(0.95 * 4000)) - 1]
    assert crit == pytest.approx(brute, rel=1e-12)
    assert abs(crit - 1.96) < 0.1


def test_zero_se_raises():
    st_ = make_state(np.eye(2), np.zeros((3, 2)), 10)
    with pytest.raises(ZeroSE):
        multiplier_draws(st_, 11, 10, seed=0)


def test_sup_zero_edge_cases(real_fit):
    fit, st_ = real_fit
    r = sup_test_zero(fake_fit(np.zeros(4)), st_, 101, 300, seed=1)
    assert r.statistic == 0 and r.p_value == 1.0
    r = sup_test_zero(fake_fit(fit.theta * 1e4), st_, 101, 300, seed=1)
    assert r.p_value == 0.0
    assert sup_test_zero(fit, st_, 101, 50, seed=1).low_m_warning


def test_homogeneous_constant_fit(real_fit):
    _, st_ = real_fit
    q0 = make_state([[0.3]], [[0.2], [-0.5], [0.1]], 12)
    r = sup_test_homogeneous(fake_fit([0.7]), q0, 101, 100, seed=0)
    assert r.statistic == 0 and r.p_value == 1.0 and r.center == 0.7


def test_linear_chebyshev_center():
    x = np.linspace(0, 1, 1001)
    s, sigma = 0.4, 0.1
    f = 0.2 + s * x
    H, c = minimax_center(f, np.full_like(x, sigma))
    assert H == pytest.approx(abs(s) / (2 * sigma), abs=1e-7)
    assert c == pytest.approx(0.2 + s / 2, abs=1e-7)


# five-point toys: values frozen from an exhaustive c-grid search
FIVE_POINT = [
    ([0.1, 0.3, -0.2, 0.05, 0.4], [0.1, 0.2, 0.1, 0.3, 0.2]),
    ([1.0, 1.0, 1.0, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0, 0.5]),
    ([-3.0, 0.0, 2.0, 1.0, -1.0], [2.0, 0.5, 1.0, 1.5, 0.25]),
]


def brute_minimax(f, s, n=200_001):
    f, s = np.asarray(f), np.asarray(s)
    lo, hi = f.min() - 3 * s.max(), f.max() + 3 * s.max()
    cs = np.linspace(lo, hi, n)
    phi = np.max(np.abs(f[None, :] - cs[:, None]) / s[None, :], axis=1)
    k = np.argmin(phi)
    return phi[k], cs[k]


@pytest.mark.parametrize("f,s", FIVE_POINT)
def test_five_point_toys(f, s):
    H, _ = minimax_center(np.array(f), np.array(s))
    Hb, _ = brute_minimax(f, s)
    assert H == pytest.approx(Hb, abs=1e-4)
    assert H <= Hb + 1e-8


def test_five_point_closed_form():
    # the minimax center balances the two binding constraints:
    # (0.4 - c)/0.2 = (c + 0.2)/0.1 -> c = 0, H = 2
    H, c = minimax_center(np.array(FIVE_POINT[0][0]), np.array(FIVE_POINT[0][1]))
    assert H == pytest.approx(2.0, abs=1e-8) and c == pytest.approx(0.0, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_convexity_minimum_is_global(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=7)
    s = rng.uniform(0.05, 2.0, size=7)
    H, _ = minimax_center(f, s)
    cs = rng.uniform(f.min() - 3, f.max() + 3, size=100)
    phi = np.max(np.abs(f[None, :] - cs[:, None]) / s, axis=1)
    assert np.all(H <= phi + 1e-8)


def test_minimax_rowwise_matches_single():
    rng = np.random.default_rng(3)
    V = rng.normal(size=(6, 9))
    s = rng.uniform(0.2, 1.0, size=9)
    Hs, cs = minimax_center(V, s)
    for i in range(6):
        H, c = minimax_center(V[i], s)
        assert Hs[i] == pytest.approx(H, abs=1e-9)


def test_critical_value_monotone_in_alpha(real_fit):
    _, st_ = real_fit
    d = multiplier_draws(st_, 201, 500, seed=2)
    crits = [uniform_critical_value(d, a) for a in (0.01, 0.05, 0.1, 0.2, 0.5)]
    assert all(a >= b for a, b in zip(crits, crits[1:]))


def test_band_and_sup_test_consistent(real_fit):
    fit, st_ = real_fit
    grid = GridSpec.uniform(201)
    for scale in (0.0, 0.5, 1.0, 3.0):
        f = fake_fit(fit.theta * scale)
        band = uniform_band(f, st_, grid, 500, 0.05, seed=6)
        T = sup_test_zero(f, st_, grid, 500, seed=6).statistic
        exits = not band.covers(np.zeros(len(grid)))
        assert (T > band.critical_value) == exits


def test_band_properties(real_fit):
    fit, st_ = real_fit
    band = uniform_band(fit, st_, GridSpec.uniform(1001), 1000, 0.05, seed=3)
    assert band.critical_value >= 1.959 - 0.05
    assert np.all(band.uniform_halfwidth >= band.pointwise_halfwidth - 0.05 * band.se)
    assert np.allclose(band.se, pointwise_se(st_, band.grid.points))
    assert band.covers(band.f_hat)


def test_critical_value_stable_when_doubling_m(real_fit):
    _, st_ = real_fit
    a = uniform_critical_value(multiplier_draws(st_, 1001, 2000, seed=11), 0.05)
    b = uniform_critical_value(multiplier_draws(st_, 1001, 4000, seed=11), 0.05)
    assert abs(a - b) < 0.05


def test_constant_spec_band_matches_pointwise():
    st_ = make_state([[0.3]], [[0.2], [-0.5], [0.1], [0.3], [-0.4]], 20)
    band = uniform_band(fake_fit([0.1]), st_, 101, 4000, 0.05, seed=0)
    assert abs(band.critical_value - 1.96) < 0.1


def test_determinism(real_fit):
    fit, st_ = real_fit
    a = sup_test_homogeneous(fit, st_, 201, 300, seed=8)
    b = sup_test_homogeneous(fit, st_, 201, 300, seed=8)
    assert a.statistic == b.statistic and a.p_value == b.p_value
