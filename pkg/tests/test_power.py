import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from lfdr import power
from lfdr.density import BasisSpec, fit_mixture_density
from lfdr.errors import InvalidInputError, NoNonnullMassError
from lfdr.fdr import local_fdr
from lfdr.ingest import BinnedCounts, bin_z_values
from lfdr.nulls import NullModel, central_matching, theoretical_null
from lfdr.simulate import SimModel, generate

fdr_vectors = st.lists(st.floats(0, 1), min_size=120, max_size=120).map(np.asarray)


def test_nonnull_counts_extremes(model_fit):
    ones = np.ones(120)
    assert np.all(power.nonnull_counts(model_fit, ones, smoothed=False) == 0)
    assert np.array_equal(power.nonnull_counts(model_fit, 0 * ones, smoothed=False), model_fit.counts.counts)
    assert np.allclose(power.nonnull_counts(model_fit, 0 * ones), model_fit.expected_counts)


@given(fdr_vectors)
def test_efdr1_is_weighted_mean_of_fdr(model_fit, fdr):
    y1 = power.nonnull_counts(model_fit, fdr)
    if not y1.sum() > 0:
        with pytest.raises(NoNonnullMassError):
            power.efdr1(model_fit, fdr)
        return
    assert power.efdr1(model_fit, fdr) == pytest.approx(np.sum(fdr * y1) / y1.sum(), rel=1e-12, abs=1e-15)


def test_efdr1_constant_fdr(model_fit):
    assert power.efdr1(model_fit, np.full(120, 0.3)) == pytest.approx(0.3)


@given(fdr_vectors)
def test_nonnull_cdf_monotone_and_normalized(model_fit, fdr):
    if not power.nonnull_counts(model_fit, fdr).sum() > 0:
        return
    g = power.nonnull_cdf(model_fit, fdr)
    assert g.shape == (100, 2)
    assert np.all(np.diff(g[:, 1]) >= -1e-15)
    assert g[-1, 1] == 1.0
    assert np.all((g[:, 1] >= 0) & (g[:, 1] <= 1 + 1e-12))


def test_power_report_on_model_draw(model_fit, nulls):
    null = nulls["theoretical"]
    rep = power.power_report(model_fit, null, factors=[1, 2])
    assert 0 < rep.efdr1 < 1
    assert rep.projections[1.0] == pytest.approx(rep.efdr1, abs=1e-10)
    assert np.all(rep.nonnull_counts >= 0)
    n, w = model_fit.n, model_fit.width
    # one minus the binned null mass, plus whatever the cap at fdr = 1 removes
    f0 = np.exp(null.log_subdensity(model_fit.centers))
    excess = np.sum(np.clip(f0 - model_fit.fitted_density, 0, None)) * w
    p1_binned = 1 - np.sum(f0) * w
    assert p1_binned == pytest.approx(rep.p1_hat, abs=1e-3)
    assert rep.nonnull_counts.sum() == pytest.approx(n * (p1_binned + excess), rel=1e-9)
    assert np.allclose(rep.null_counts + rep.nonnull_counts, model_fit.expected_counts)


@pytest.mark.parametrize("mode", ["crude", "adjusted"])
def test_projection_at_one_reproduces_efdr1(model_fit, nulls, mode):
    for null in nulls.values():
        per_bin, _ = local_fdr(model_fit, null)
        base = power.efdr1(model_fit, per_bin)
        assert power.sample_size_projection(model_fit, null, 1.0, mode) == pytest.approx(base, abs=1e-12)
        assert power.sample_size_projection(model_fit, null, 1.0, mode, refit=True) == pytest.approx(base, abs=1e-8)


@pytest.mark.parametrize("c", [1.0, 1.5, 2.0, 3.0])
def test_projection_preserves_total_nonnull_mass(model_fit, nulls, c):
    null = nulls["central-matching"]
    per_bin, _ = local_fdr(model_fit, null)
    y1 = power.nonnull_counts(model_fit, per_bin)
    binned, (lo, hi), _ = power.projected_counts(model_fit, null, c)
    assert binned.width == pytest.approx(model_fit.width)
    assert binned.counts.sum() == pytest.approx(model_fit.expected_counts.sum(), rel=1e-12)
    moved = binned.counts.copy()
    moved[lo:lo + 120] -= model_fit.expected_counts - y1
    assert moved.sum() == pytest.approx(y1.sum(), abs=1e-9)
    # the grid reaches sqrt(c) times the old extremes
    assert binned.centers[-1] >= np.sqrt(c) * model_fit.centers[-1] - binned.width


def test_projection_decreases_with_sample_size():
    for seed in range(4):
        z = generate(SimModel(), np.random.default_rng(seed)).values
        fit = fit_mixture_density(bin_z_values(z, 120, (-4, 7.4)), BasisSpec("ns", 7))
        for null in (theoretical_null(fit), central_matching(fit)):
            for mode in ("crude", "adjusted"):
                vals = [power.sample_size_projection(fit, null, c, mode) for c in (1, 1.5, 2, 2.5, 3)]
                assert np.all(np.diff(vals) < 0), (seed, null.method, mode, vals)


def test_adjusted_mode_reduces_more_than_crude(model_fit, nulls):
    null = nulls["central-matching"]
    crude = power.sample_size_projection(model_fit, null, 2.0, "crude")
    adjusted = power.sample_size_projection(model_fit, null, 2.0, "adjusted")
    assert adjusted <= crude


def test_projection_validation(model_fit, nulls):
    with pytest.raises(InvalidInputError):
        power.sample_size_projection(model_fit, nulls["theoretical"], 0.5)
    with pytest.raises(InvalidInputError):
        power.sample_size_projection(model_fit, nulls["theoretical"], 2.0, "fancy")


def test_side_without_nonnull_mass_is_skipped():
    # noise-free counts from the mixture; a slightly wide null with p0 = 1 caps fdr at 1 in every left bin
    x = np.linspace(-4, 7.4, 120)
    w = x[1] - x[0]
    dens = 0.8 * stats.norm.pdf(x) + 0.2 * stats.norm.pdf(x, 3, np.sqrt(2))
    fit = fit_mixture_density(BinnedCounts(x, 1500 * w * dens, w, 1500), BasisSpec("ns", 7))
    null = NullModel(0.0, 1.05, 1.0, "central-matching")
    per_bin, _ = local_fdr(fit, null)
    assert power.nonnull_counts(fit, per_bin)[x < 0].sum() == 0
    with pytest.warns(UserWarning, match="negative"):
        binned, (lo, hi), notes = power.projected_counts(fit, null, 2.0)
    assert lo == 0 and hi > 0 and notes


def test_nonnull_cdf_at_point_two_shows_good_power():
    # model draws put well over half the nonnull mass below fdr 0.2
    vals = []
    for seed in range(10):
        z = generate(SimModel(), np.random.default_rng(100 + seed)).values
        fit = fit_mixture_density(bin_z_values(z, 120, (-4, 7.4)), BasisSpec("ns", 7))
        null = central_matching(fit)
        per_bin, _ = local_fdr(fit, null)
        vals.append(power.nonnull_cdf(fit, per_bin, [0.2])[0, 1])
    assert 0.45 < np.mean(vals) < 0.85
