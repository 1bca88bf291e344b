import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, stats

from lfdr.accuracy import null_param_jacobian
from lfdr.density import BasisSpec, fit_mixture_density
from lfdr.errors import InvalidConfigError, InvalidInputError, NoNullPeakError
from lfdr.ingest import BinnedCounts
from lfdr.nulls import (
    ImpossibleP0Warning,
    _natural_to_null,
    central_bins,
    central_matching,
    mle_fit,
    mle_from_counts,
    quadratic_to_null,
    sufficient_stats,
    theoretical_null,
    truncated_moments,
)


def _gaussian_counts(delta, sigma, n=5000.0, k=161, lo=-8.0, hi=8.0):
    x = np.linspace(lo, hi, k)
    w = x[1] - x[0]
    return BinnedCounts(x, n * w * stats.norm.pdf(x, delta, sigma), w, int(n))


@pytest.mark.parametrize("delta,sigma,x0", [(0.0, 1.0, 2.0), (0.3, 1.2, 2.0), (-0.5, 0.7, 1.5), (1.0, 2.0, 3.0)])
def test_truncated_moments_match_quadrature(delta, sigma, x0):
    tm = truncated_moments(delta, sigma, x0)
    mpmath.mp.dps = 30
    dens = lambda z: mpmath.npdf(z, delta, sigma)  # noqa: E731
    mass = mpmath.quad(dens, [-x0, x0])
    std_mass = mpmath.ncdf(tm.b) - mpmath.ncdf(tm.a)
    assert tm.H[0] == pytest.approx(float(std_mass), abs=1e-12)
    for p in range(1, 5):
        hp = mpmath.quad(lambda u: u**p * mpmath.npdf(u), [tm.a, tm.b])
        assert tm.H[p] == pytest.approx(float(hp), abs=1e-10)
        ep = mpmath.quad(lambda z: z**p * dens(z), [-x0, x0]) / mass
        assert tm.E[p - 1] == pytest.approx(float(ep), abs=1e-10)


def test_mle_solves_moment_equations(model_draw):
    null = mle_fit(model_draw, 2.0)
    tm = truncated_moments(null.delta0, null.sigma0, 2.0)
    assert tm.E[0] == pytest.approx(null.meta["y1"], abs=1e-8)
    assert tm.E[1] == pytest.approx(null.meta["y2"], abs=1e-8)
    assert null.p0 == pytest.approx(null.meta["theta"] / tm.H[0])


def test_mle_matches_brute_force_likelihood():
    rng = np.random.default_rng(11)
    z = np.concatenate([rng.normal(0.2, 1.1, 180), rng.normal(3, 1, 20)])
    x0 = 2.0
    inside = z[np.abs(z) <= x0]
    null = mle_fit(z, x0)

    def negll(par):
        d, s = par
        if s <= 0.05:
            return np.inf
        a, b = (-x0 - d) / s, (x0 - d) / s
        return -np.sum(stats.truncnorm.logpdf(inside, a, b, loc=d, scale=s))

    grid = [(d, s) for d in np.linspace(-0.6, 1.0, 17) for s in np.linspace(0.6, 2.0, 15)]
    start = min(grid, key=negll)
    res = optimize.minimize(negll, start, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    assert null.delta0 == pytest.approx(res.x[0], abs=1e-5)
    assert null.sigma0 == pytest.approx(res.x[1], abs=1e-5)


@given(st.floats(-0.5, 0.5), st.floats(0.6, 1.5), st.integers(0, 2**31 - 1))
def test_mle_recovers_null_from_pure_null_sample(delta, sigma, seed):
    z = np.random.default_rng(seed).normal(delta, sigma, 4000)
    null = mle_fit(z, 2.0)
    assert abs(null.delta0 - delta) < 0.15
    assert abs(null.sigma0 / sigma - 1) < 0.15
    assert abs(null.p0 - 1) < 0.1


def test_natural_parameter_jacobian():
    # d(delta0, sigma0)/d(eta1, eta2) = sigma^2 [[1, 2 delta], [0, sigma]]
    d, s = 0.3, 1.2
    eta = np.array([d / s**2, -0.5 / s**2])
    h = 1e-6
    jac = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        jac[:, j] = (np.array(_natural_to_null(*(eta + e))) - np.array(_natural_to_null(*(eta - e)))) / (2 * h)
    assert np.allclose(jac, s**2 * np.array([[1, 2 * d], [0, s]]), rtol=1e-6)


def test_central_matching_recovers_exact_gaussian():
    counts = _gaussian_counts(0.3, 1.2)
    fit = fit_mixture_density(counts, BasisSpec("poly", 2))
    null = central_matching(fit)
    assert null.delta0 == pytest.approx(0.3, abs=1e-6)
    assert null.sigma0 == pytest.approx(1.2, abs=1e-6)
    assert null.p0 == pytest.approx(1.0, abs=1e-4)


def test_theoretical_null_recovers_p0_for_scaled_standard_normal():
    counts = _gaussian_counts(0.0, 1.0)
    fit = fit_mixture_density(counts, BasisSpec("poly", 2))
    null = theoretical_null(fit)
    assert (null.delta0, null.sigma0) == (0.0, 1.0)
    assert null.p0 == pytest.approx(1.0, abs=1e-4)


def test_null_map_jacobian_matches_finite_differences():
    beta = np.array([-1.2, 0.25, -0.4])
    p0, d, s = quadratic_to_null(*beta)
    jac = null_param_jacobian(d, s)
    h = 1e-6
    fd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        up = np.array(quadratic_to_null(*(beta + e)))
        dn = np.array(quadratic_to_null(*(beta - e)))
        up[0], dn[0] = math.log(up[0]), math.log(dn[0])
        fd[:, j] = (up - dn) / (2 * h)
    assert np.allclose(fd, jac, rtol=1e-6, atol=1e-9)


def test_no_null_peak():
    with pytest.raises(NoNullPeakError):
        quadratic_to_null(0.0, 0.1, 0.05)


def test_central_bins_cover_middle_half(model_fit):
    i0 = central_bins(model_fit, 0.25)
    y = model_fit.counts.counts
    share = y[i0].sum() / y.sum()
    assert 0.4 < share < 0.5
    assert np.all(np.diff(i0) == 1)
    with pytest.raises(InvalidConfigError):
        central_bins(model_fit, 0.6)


def test_impossible_p0_is_kept_and_flagged():
    counts = _gaussian_counts(0.0, 0.8)
    fit = fit_mixture_density(counts, BasisSpec("poly", 2))
    with pytest.warns(ImpossibleP0Warning):
        null = theoretical_null(fit)
    assert null.p0 > 1 and null.capped_p0 == 1.0
    assert null.warnings


def test_mle_needs_enough_central_cases():
    with pytest.raises(InvalidInputError):
        mle_fit(np.linspace(3, 5, 100), 2.0)


def test_mle_from_counts_agrees_with_raw_mle(model_draw, model_fit):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        raw = mle_fit(model_draw, 2.0)
        binned = mle_from_counts(model_fit.counts, 2.0)
    assert binned.delta0 == pytest.approx(raw.delta0, abs=0.02)
    assert binned.sigma0 == pytest.approx(raw.sigma0, abs=0.02)


def test_sufficient_stats():
    n, n0, s1, s2 = sufficient_stats(np.array([-3.0, -1.0, 0.5, 2.0, 2.5]), 2.0)
    assert (n, n0, s1, s2) == (5.0, 3.0, 1.5, 5.25)
