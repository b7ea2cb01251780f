import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostproj.metrics import MAX_BINS, freedman_diaconis_edges, report
from ghostproj.phantom import phantom
from ghostproj.schemes import Projection


@given(c=st.floats(0.5, 50), p=st.floats(0, 100), sigma=st.floats(0.01, 5), seed=st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_synthetic_recovery(c, p, sigma, seed):
    img = phantom(40, 40, "filtered")
    rng = np.random.default_rng(seed)
    P = c * img.values + p + rng.normal(0, sigma, img.shape)
    rep = report(P, img, scale=c)
    nm = img.nm
    assert abs(rep.pedestal_observed - p) < 3 * sigma / np.sqrt(nm)
    assert rep.snr_global == pytest.approx(c * np.sqrt(img.second_moment) / sigma, rel=0.1)
    assert rep.counts.sum() == nm
    assert rep.counts.size <= MAX_BINS
    assert rep.snr_global**2 == pytest.approx(np.mean(rep.snr_pixelwise**2), rel=1e-12)


def test_exact_projection_sentinel():
    img = phantom(10, 10, "weighted")
    rep = report(Projection(img.values + 3.0, 3.0), img)
    assert rep.snr_global == np.inf
    assert rep.pedestal_observed == pytest.approx(3.0)
    assert rep.residual_variance == 0.0
    assert rep.counts.sum() == 100


def test_overlay_and_prediction():
    img = phantom(20, 20, "filtered")
    rng = np.random.default_rng(1)
    P = img.values + rng.normal(0, 0.2, img.shape)
    rep = report(P, img, predicted_variance=0.04)
    assert rep.predicted_pdf.shape == rep.counts.shape
    assert rep.snr_predicted == pytest.approx(np.sqrt(img.second_moment) / 0.2)
    # the overlay integrates to about one over the residual range
    assert np.sum(rep.predicted_pdf * np.diff(rep.bin_edges)) == pytest.approx(1.0, abs=0.05)
    assert np.sum(rep.observed_pdf * np.diff(rep.bin_edges)) == pytest.approx(1.0)


def test_scale_defaults_to_projection():
    img = phantom(10, 10, "filtered")
    proj = Projection(50.0 * img.values + 7.0, 7.0, scale=50.0)
    rep = report(proj, img)
    assert rep.scale == 50.0 and rep.snr_global == np.inf and rep.pedestal_predicted == 7.0


def test_constant_edges_and_shape_check():
    assert freedman_diaconis_edges(np.zeros(10)).size == 2
    with pytest.raises(ValueError):
        report(np.zeros((3, 3)), np.zeros((2, 2)))
