import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from conftest import CRITICAL3, CYCLIC3, SWAP, TWO_COLOUR, make, star_matrix
from urnlab import asymptotics as asy
from urnlab.betadist import beta_cdf, betainc
from urnlab.errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptySample,
    GammaZero,
    NotAStar,
    TooFewReplicas,
    UnsupportedRegime,
)
from urnlab.matrix_core import Regime, solve_limits
from urnlab.rng import RngStream
from urnlab.urn_process import parse_schedule, run_ensemble, run_trajectory


def test_scale_and_standardize():
    assert asy.scale(100, Regime.SQRT_N) == 10.0
    assert asy.scale(100, Regime.SQRT_N_LOG_N) == pytest.approx(math.sqrt(100 * math.log(100)))
    with pytest.raises(UnsupportedRegime):
        asy.scale(100, Regime.OUTSIDE_THEOREM)
    s = asy.EnsembleSample(100, [[60.0, 40.0], [40.0, 60.0]])
    z = asy.standardize(s, [0.5, 0.5], Regime.SQRT_N)
    assert np.allclose(z.vectors, [[1, -1], [-1, 1]])


def test_empirical_moments_two_point():
    m = asy.empirical_moments(asy.EnsembleSample(1, [[1, 0], [0, 1]]))
    assert np.allclose(m.mean, [0.5, 0.5])
    assert np.allclose(m.cov, [[0.5, -0.5], [-0.5, 0.5]])
    with pytest.raises(TooFewReplicas):
        asy.empirical_moments(asy.EnsembleSample(1, [[1, 0]]))


def test_sigma_relation_residual():
    R = np.array(CYCLIC3, dtype=float)
    S = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], dtype=float)
    assert asy.sigma_relation_residual(R.T @ S @ R, S, R) <= 1e-15
    assert asy.sigma_relation_residual(S, S, np.eye(3)) == 0.0
    assert asy.sigma_relation_residual(np.zeros((2, 2)), np.eye(2), np.eye(2)) > 1e6


@pytest.mark.parametrize("k", [2, 3, 5])
def test_star_count_covariance(k):
    C = asy.star_count_covariance(k)
    assert C.shape == (k - 1, k - 1)
    assert np.allclose(C.sum(axis=1), 0.0)
    assert C[0, 0] == pytest.approx(1 / (k - 1) - 1 / (k - 1) ** 2)
    if k == 3:
        assert np.allclose(C, [[0.25, -0.25], [-0.25, 0.25]])


def test_euler_product():
    Pi = asy.euler_product(0.5, 10)
    assert Pi[0] == 1.0 and Pi[1] == 1.5 and Pi[2] == pytest.approx(1.875)
    n = 10**6
    big = asy.euler_product(0.5, n)[-1]
    assert big * math.gamma(1.5) / n**0.5 == pytest.approx(1.0, abs=1e-6)
    # exact ratio of Gamma functions
    assert big == pytest.approx(scipy.special.poch(n + 1, 0.5) / math.gamma(1.5), rel=1e-10)


def test_ks_statistic():
    assert asy.ks_statistic([0.3] * 10, lambda x: 0.5) == pytest.approx(0.5)
    x = np.random.default_rng(0).uniform(size=400)
    ours = asy.ks_statistic(x, lambda v: v)
    assert ours == pytest.approx(scipy.stats.kstest(x, "uniform").statistic, abs=1e-14)
    assert asy.ks_critical_value(2000) == pytest.approx(1.3581 / math.sqrt(2000), rel=1e-3)
    with pytest.raises(EmptySample):
        asy.ks_statistic([], lambda v: v)


@pytest.mark.parametrize("a, b", [(0.5, 0.5), (1, 1), (2.5, 0.7), (30, 40), (0.1, 5)])
def test_betainc_against_scipy(a, b):
    xs = np.linspace(0, 1, 201)
    ours = np.array([betainc(a, b, x) for x in xs])
    assert np.max(np.abs(ours - scipy.special.betainc(a, b, xs))) <= 1e-12
    cdf = beta_cdf(a, b)
    assert cdf(-1.0) == 0.0 and cdf(2.0) == 1.0


def test_arcsine_closed_form():
    cdf = beta_cdf(0.5, 0.5)
    for x in (0.01, 0.25, 0.5, 0.9):
        assert cdf(x) == pytest.approx(2 / math.pi * math.asin(math.sqrt(x)), abs=1e-13)


def test_slln_residuals_shrink():
    spec = make(TWO_COLOUR)
    lim = solve_limits(spec)
    rec = run_trajectory(spec, 10**5, [10, 10**5], RngStream(0, 0))
    res = asy.slln_residual(rec, lim)
    assert res[-1] < 0.02
    cl = asy.colour_count_limit(spec, lim)
    assert cl.sum() == pytest.approx(1.0)
    assert asy.count_slln_residual(rec, cl)[-1] < 0.02
    with pytest.raises(DimensionMismatch):
        asy.count_slln_residual(rec, [0.5, 0.25, 0.25])


def test_variance_scaling_slope_exact_laws():
    ns = [100, 1000, 10000]
    rng = np.random.default_rng(1)
    base = rng.standard_normal((4000, 1))
    lin = [asy.EnsembleSample(n, base * math.sqrt(n)) for n in ns]
    assert asy.variance_scaling_slope(lin, [0.0], 0, Regime.SQRT_N) == pytest.approx(1.0, abs=1e-12)
    crit = [asy.EnsembleSample(n, base * math.sqrt(n * math.log(n))) for n in ns]
    assert asy.variance_scaling_slope(crit, [0.0], 0, Regime.SQRT_N_LOG_N) == pytest.approx(1.0)
    flat = [asy.EnsembleSample(n, np.ones((10, 1)) * n) for n in ns]
    with pytest.raises(DegenerateVariance):
        asy.variance_scaling_slope(flat, [1.0], 0, Regime.SQRT_N)


def test_critical_colour():
    assert asy.critical_colour(make(CRITICAL3)) in (0, 1)
    with pytest.raises(UnsupportedRegime):
        asy.critical_colour(make(CYCLIC3))


def test_star_diagnostics_errors():
    with pytest.raises(NotAStar):
        asy.star_diagnostics(run_trajectory(make(CYCLIC3), 5, [5], RngStream(0, 0)), make(CYCLIC3))
    spec = make(star_matrix([1, 0, 0]))
    with pytest.raises(GammaZero):
        asy.star_diagnostics(run_trajectory(spec, 5, [5], RngStream(0, 0)), spec)


def test_star_martingale_mean_is_preserved():
    spec = make(star_matrix([0.5, 0.25, 0.25]))
    recs = run_ensemble(spec, 64, 4000, 5, [0] + parse_schedule("geometric:2", 64))
    W = np.array([asy.star_diagnostics(r, spec).W for r in recs])
    W0 = W[0, 0]
    se = W[:, 1:].std(axis=0, ddof=1) / math.sqrt(len(recs))
    assert np.all(np.abs(W[:, 1:].mean(axis=0) - W0) <= 4 * se)
    assert np.all(W >= 0)


def test_expected_central_count_matches_simulation():
    spec = make(star_matrix([0.5, 0.25, 0.25]))
    n = 200
    exact = asy.expected_central_count(spec, n)
    recs = run_ensemble(spec, n, 4000, 6, [n])
    N0 = np.array([r.N[-1, 0] for r in recs], dtype=float)
    assert abs(N0.mean() - exact) <= 4 * N0.std(ddof=1) / math.sqrt(len(N0))
    # first draw: P(central) = gamma U0 xi / (k - 1)
    assert asy.expected_central_count(spec, 1) == pytest.approx(1 / 3)


def test_friedman_beta_limit_small():
    spec = make(SWAP, U0=[0.5, 0.5])
    recs = run_ensemble(spec, 2000, 1000, 8, [2000])
    share = np.array([r.U[-1, 0] / 2001 for r in recs])
    assert asy.ks_statistic(share, beta_cdf(0.5, 0.5)) < asy.ks_critical_value(1000, 0.01)


def test_central_count_mean_follows_exact_expectation():
    # mean N_n0/sqrt(n) decays like n**(gamma - 1/2), not to zero at n = 1e4
    spec = make(star_matrix([0.5, 0.25, 0.25]))
    n = 10_000
    recs = run_ensemble(spec, n, 2000, 12, [n], workers=4)
    N0 = np.array([r.N[-1, 0] for r in recs], dtype=float)
    exact = asy.expected_central_count(spec, n)
    assert abs(N0.mean() - exact) <= 4 * N0.std(ddof=1) / math.sqrt(len(N0))
    assert exact / math.sqrt(n) == pytest.approx(0.1338, abs=5e-4)


def test_growth_laws_with_limit_normalisation():
    # N_n0 / n**gamma and U_nj / n**gamma against lim U_n xi / n**gamma
    alpha = [0.0, 0.5, 0.5]
    spec = make(star_matrix(alpha))
    n = 100_000
    recs = run_ensemble(spec, n, 200, 13, [n], workers=4)
    diags = [asy.star_diagnostics(r, spec) for r in recs]
    W = np.array([d.W_scaled[-1] for d in diags])
    Wm = np.array([d.W[-1] for d in diags])
    N0 = np.array([r.N[-1, 0] for r in recs]) / n**0.5
    U1 = np.array([r.U[-1, 1] for r in recs]) / n**0.5
    assert np.mean(np.abs(N0 - 0.5 * W)) < 0.01
    assert np.mean(np.abs(U1 - 0.25 * W)) < 0.01
    # the martingale limit carries an extra factor Gamma(1 + gamma)
    assert np.allclose(Wm / W, math.gamma(1.5), rtol=1e-2)
