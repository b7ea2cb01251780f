import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from ghostproj.basis import BasisSpec, make_basis
from ghostproj.correlate import (
    ColorImage,
    Image,
    ImageMoments,
    channel_correlations,
    correlation_stats,
    expected_filtered_correlation,
    filter_basis,
    kept_fraction,
    mills_factor,
    pseudo_correlation,
    true_correlation,
    xi_factor,
)
from ghostproj.phantom import phantom


@pytest.fixture(scope="module")
def small():
    basis = make_basis(BasisSpec(12, 12, 3000, "uniform01", 5))
    return basis, Image(np.linspace(0.1, 1, 144).reshape(12, 12))


def test_image_moments_and_zero_flag():
    img = Image(np.array([[1.0, -1.0], [2.0, -2.0]]))
    assert img.mean == 0.0 and img.second_moment == 2.5 and img.zero_centered
    assert not Image(np.array([[1e-9, 0.0]])).zero_centered
    assert Image(np.full((2, 2), 1e-13)).zero_centered


def test_degenerate_image_rejected():
    with pytest.raises(ValueError):
        correlation_stats(make_basis(BasisSpec(2, 2, 2)).moments, Image(np.zeros((2, 2))))


def test_color_channels_share_shape():
    with pytest.raises(ValueError):
        ColorImage((Image(np.ones((2, 2))), Image(np.ones((3, 2)))))


def test_stats_closed_forms():
    basis = make_basis(BasisSpec(10, 10, 10))
    img = ColorImage.from_array(np.random.default_rng(0).random((3, 10, 10)))
    st_ = correlation_stats(basis.moments, img)
    mom = basis.moments
    assert st_.variance == pytest.approx(mom.variance / (3 * 100 * mom.second_moment), rel=1e-14)
    assert st_.expected == pytest.approx(mom.mean * img.mean / np.sqrt(mom.second_moment * img.second_moment))


def test_special_functions_against_scipy():
    for x in (-2.0, -0.3, 0.0, 0.432884, 1.5, 4.0, 20.0):
        assert kept_fraction(x) == pytest.approx(sps.norm.sf(np.sqrt(2) * x), rel=1e-12, abs=1e-300)
        if x < 5:
            assert mills_factor(x) == pytest.approx(np.exp(-x * x) / (2 * kept_fraction(x)), rel=1e-10)
    assert np.isfinite(mills_factor(30.0))
    assert xi_factor(0.0) == pytest.approx(2 / np.sqrt(2 * np.pi))


@given(a=st.floats(0.01, 100.0))
@settings(max_examples=20, deadline=None)
def test_pseudo_correlation_scaling(a):
    # C_k(aI) = a C_k(I) for the raw product; the normalized form divides out sqrt(E[I^2]) too
    basis = make_basis(BasisSpec(6, 6, 40, "uniform01", 2))
    img = Image(np.arange(36.0).reshape(6, 6) / 36 + 0.1)
    base = pseudo_correlation(basis, img)
    scaled = pseudo_correlation(basis, img.scaled(a))
    np.testing.assert_allclose(scaled, base, rtol=1e-12)
    raw = base * np.sqrt(img.second_moment)
    raw_scaled = scaled * np.sqrt(img.scaled(a).second_moment)
    np.testing.assert_allclose(raw_scaled, a * raw, rtol=1e-12)


@given(c1=st.floats(0.3, 0.9), c2=st.floats(0.3, 0.9))
@settings(max_examples=30, deadline=None)
def test_filter_is_monotone(c1, c2, small):
    basis, img = small
    cors = pseudo_correlation(basis, img)
    stats = correlation_stats(basis.moments, img)
    lo, hi = sorted([stats.cutoff_sigmas(c1 * 3 - 1.5), stats.cutoff_sigmas(c2 * 3 - 1.5)])
    a = set(filter_basis(cors, stats, lo).kept_indices)
    b = set(filter_basis(cors, stats, hi).kept_indices)
    assert b <= a
    assert a == set(np.flatnonzero(cors >= lo))


def test_tie_is_kept(small):
    basis, img = small
    cors = pseudo_correlation(basis, img)
    stats = correlation_stats(basis.moments, img)
    sel = filter_basis(cors, stats, float(cors[17]))
    assert 17 in sel.kept_indices


def test_gamma_definition(small):
    basis, img = small
    cors = pseudo_correlation(basis, img)
    stats = correlation_stats(basis.moments, img)
    sel = filter_basis(cors, stats, stats.cutoff_sigmas(0.612))
    expect = (cors[sel.kept_indices].mean() - stats.expected) * np.sqrt(
        basis.moments.second_moment / img.second_moment)
    assert sel.gamma == pytest.approx(expect, rel=1e-14)
    assert sel.kept_fraction == pytest.approx(float(sps.norm.sf(0.612)), rel=1e-10)


def test_kept_mean_matches_closed_form():
    basis = make_basis(BasisSpec(16, 16, 100000, "uniform01", 8))
    img = phantom(16, 16, "filtered")
    cors = pseudo_correlation(basis, img, threads=4)
    stats = correlation_stats(basis.moments, img)
    cut = stats.cutoff_sigmas(0.612)
    sel = filter_basis(cors, stats, cut)
    kept = cors[sel.kept_indices]
    se = kept.std(ddof=1) / np.sqrt(kept.size)
    assert abs(kept.mean() - expected_filtered_correlation(stats, cut)) < 3 * se
    assert abs(sel.n_kept - sel.kept_fraction * sel.n_total) < 3 * sel.binomial_sigma()


def test_correlation_spread_matches_variance():
    basis = make_basis(BasisSpec(20, 20, 20000, "binary01", 9))
    img = Image(np.cos(np.arange(400.0) / 7).reshape(20, 20))
    cors = pseudo_correlation(basis, img)
    stats = correlation_stats(basis.moments, img)
    assert cors.var() == pytest.approx(stats.variance, rel=0.05)


def test_true_correlation_bounds(small):
    basis, img = small
    tc = true_correlation(basis, img)
    assert np.all(np.abs(tc.exact) <= 1.0)
    # the series expansion tightens order by order
    e1 = np.abs(tc.first_order - tc.exact).max()
    e2 = np.abs(tc.second_order - tc.exact).max()
    assert e2 < e1 < np.abs(tc.pseudo - tc.exact).max()


def test_channel_correlations_pool_to_global():
    rng = np.random.default_rng(3)
    img = ColorImage.from_array(rng.standard_normal((3, 8, 8)))
    basis = make_basis(BasisSpec(8, 8, 200, "uniform01", 4, channels=3))
    per, stats = channel_correlations(basis, img)
    glob = pseudo_correlation(basis, img)
    weights = np.array([np.sqrt(s.i_second_moment) for s in stats]) / (3 * np.sqrt(img.second_moment))
    np.testing.assert_allclose(per @ weights, glob, rtol=1e-10, atol=1e-14)


def test_image_moments_stand_in():
    img = Image(np.arange(16.0).reshape(4, 4))
    mom = make_basis(BasisSpec(4, 4, 2)).moments
    assert correlation_stats(mom, ImageMoments.of(img)) == correlation_stats(mom, img)
