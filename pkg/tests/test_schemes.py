import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostproj.basis import BasisSpec, make_basis
from ghostproj.correlate import correlation_stats, filter_basis, pseudo_correlation, xi_factor
from ghostproj.experiments import filtered_run, weighted_runs
from ghostproj.metrics import report
from ghostproj.phantom import phantom
from ghostproj.schemes import (
    PADE_X,
    ExposurePlan,
    NegativeExposureError,
    ShiftedImage,
    accumulate_plan,
    basis_size_estimate,
    filtered_linear_projection,
    filtered_pixel_variance,
    filtered_projection,
    filtered_required_n,
    filtered_variance,
    optimal_cutoff_noiseless,
    optimal_shift,
    weighted_pass,
    weighted_projection,
    weighted_required_n,
    weighted_snr,
)


@pytest.fixture(scope="module")
def setup():
    basis = make_basis(BasisSpec(10, 10, 4000, "uniform01", 7))
    return basis, phantom(10, 10, "weighted")


def test_plan_rejects_negative_and_duplicates():
    with pytest.raises(NegativeExposureError):
        ExposurePlan([0, 1], [1.0, -0.1], 0.0, "x")
    with pytest.raises(ValueError):
        ExposurePlan([1, 1], [1.0, 1.0], 0.0, "x")
    plan = ExposurePlan([3, 1], [2.0, 0.0], 0.0, "x")
    assert list(plan.indices) == [1, 3] and list(plan.exposures) == [0.0, 2.0]
    assert plan.nonzero().size == 1


def test_fused_pass_matches_direct_sum(setup):
    basis, img = setup
    wp = weighted_pass(basis, img)
    for delta in (0.0, 0.2, wp.exact_shift().delta):
        shifted = ShiftedImage(img, delta)
        plan, proj = wp.result(shifted)
        direct = accumulate_plan(basis, plan)
        np.testing.assert_allclose(proj.values, direct, rtol=1e-10, atol=1e-12)


def test_exact_shift_is_tight(setup):
    basis, img = setup
    wp = weighted_pass(basis, img)
    shifted = wp.exact_shift()
    t = wp.exposures(shifted.delta)
    assert t.min() == 0.0 and t[shifted.minimizing_mask] == 0.0
    assert np.count_nonzero(t == 0.0) >= 1
    with pytest.raises(NegativeExposureError):
        wp.exposures(shifted.delta * (1 + 1e-6))
    assert shifted.shifted.mean == pytest.approx(img.mean - shifted.delta)


def test_statistical_shift_stays_non_negative(setup):
    basis, img = setup
    shifted = optimal_shift(basis, img)
    exact = optimal_shift(basis, img, mode="exact")
    assert shifted.delta < exact.delta
    plan, proj = weighted_projection(basis, img, shifted)
    assert plan.exposures.min() >= 0 and proj.values.min() >= 0


@given(snr=st.floats(0.5, 50), s1=st.floats(0, 6), s2=st.floats(0, 6))
@settings(max_examples=50, deadline=None)
def test_basis_size_monotone_in_confidence(snr, s1, s2):
    lo, hi = sorted([s1, s2])
    for exact in (False, True):
        a = basis_size_estimate(snr, 1600, lo, exact=exact)
        b = basis_size_estimate(snr, 1600, hi, exact=exact)
        assert b.n_required >= a.n_required >= 1


def test_basis_size_inverts_snr():
    plan = basis_size_estimate(5.0, 1600)
    assert plan.n_estimate == pytest.approx(filtered_required_n(5.0, 1600))
    # at s = 0 the expected kept set reaches the target exactly
    assert np.sqrt(plan.kept_fraction * plan.n_estimate / 1600) * plan.xi == pytest.approx(5.0)


def test_weighted_required_n_round_trip(setup):
    basis, img = setup
    N = weighted_required_n(basis.moments, img, 2.5)
    assert weighted_snr(basis.moments, img, N).snr == pytest.approx(2.5)


def test_weighted_snr_rejects_zero_mean(setup):
    basis, _ = setup
    with pytest.raises(ValueError):
        weighted_snr(basis.moments, phantom(10, 10, "filtered"), 100)


def test_weighted_expectation_converges():
    img = phantom(8, 8, "weighted")
    projections = []
    for seed in range(40):
        basis = make_basis(BasisSpec(8, 8, 2000, "uniform01", 100 + seed))
        plan, proj = weighted_projection(basis, img)
        projections.append(proj.values - proj.pedestal)
    projections = np.array(projections)

    def rms(k):
        return np.sqrt(np.mean((projections[:k].mean(0) - img.values) ** 2))

    pred = np.sqrt(weighted_snr(make_basis(BasisSpec(8, 8, 2000)).moments, img, 2000).variance)
    assert rms(40) < 3 * pred / np.sqrt(40)
    assert rms(40) < 0.75 * rms(10)


def test_filtered_residual_variance():
    basis = make_basis(BasisSpec(20, 20, 40000, "uniform01", 12), threads=4)
    img = phantom(20, 20, "filtered")
    run = filtered_run(basis, img, correlation_stats(basis.moments, img).cutoff_at(-1.0), threads=4)
    assert run.values["n_kept"] >= 10_000
    pred = filtered_variance(basis.moments, run.values["gamma"], run.values["n_kept"])
    assert run.report.residual_variance == pytest.approx(pred, rel=0.15)
    # noise-resolution product
    xi2 = run.values["snr_simulated"] ** 2 * img.nm / run.values["n_kept"]
    assert xi2 == pytest.approx(xi_factor(run.values["x"]) ** 2, rel=0.15)


def test_snr_scaling_with_resolution():
    N = 40000
    weighted, filtered = {}, {}
    for side in (20, 40):
        basis = make_basis(BasisSpec(side, side, N, "uniform01", 3), threads=4)
        plain, _ = weighted_runs(basis, phantom(side, side, "weighted"), "none", threads=4)
        weighted[side] = plain.values["snr_simulated"]
        img = phantom(side, side, "filtered")
        run = filtered_run(basis, img, correlation_stats(basis.moments, img).cutoff_at(PADE_X), threads=4)
        filtered[side] = run.values["snr_simulated"]
    assert weighted[20] / weighted[40] == pytest.approx(4.0, rel=0.15)
    assert filtered[20] / filtered[40] == pytest.approx(2.0, rel=0.15)


def test_filtered_projection_is_uniform(setup):
    basis, _ = setup
    img = phantom(10, 10, "filtered")
    cors = pseudo_correlation(basis, img)
    stats = correlation_stats(basis.moments, img)
    sel = filter_basis(cors, stats, stats.cutoff_at(PADE_X))
    plan, proj = filtered_projection(basis, img, sel)
    assert np.allclose(plan.exposures, 1 / (sel.gamma * sel.n_kept))
    assert proj.pedestal == pytest.approx(basis.moments.mean / sel.gamma)
    np.testing.assert_allclose(proj.values, accumulate_plan(basis, plan), rtol=1e-12)
    assert proj.values.min() >= 0
    var = filtered_pixel_variance(basis, sel.kept_indices)
    assert var.mean() == pytest.approx(basis.moments.variance, rel=0.1)


def test_linear_weights(setup):
    basis, _ = setup
    img = phantom(10, 10, "filtered")
    stats = correlation_stats(basis.moments, img)
    cut = stats.cutoff_at(PADE_X)
    plan, proj = filtered_linear_projection(basis, img, cut, cut)
    assert plan.exposures.min() >= 0
    np.testing.assert_allclose(proj.values, accumulate_plan(basis, plan), rtol=1e-12)
    rep = report(proj, img)
    assert rep.pedestal_observed == pytest.approx(proj.pedestal, rel=0.1)
    with pytest.raises(ValueError):
        filtered_linear_projection(basis, phantom(10, 10, "weighted"), cut, cut)


def test_noiseless_optimum_prefactor():
    stats = correlation_stats(make_basis(BasisSpec(4, 4, 1)).moments, phantom(8, 8, "filtered"))
    opt = optimal_cutoff_noiseless(stats)
    assert opt.variance_prefactor == pytest.approx(opt.kept_fraction * np.exp(2 * opt.x**2))
    assert opt.uncertainty_factor == pytest.approx(1 / (opt.kept_fraction * opt.xi**2))


def test_threads_do_not_change_weighted_pass():
    basis = make_basis(BasisSpec(12, 12, 5000, "uniform01", 4), materialize=False, chunk=300)
    img = phantom(12, 12, "weighted")
    a = weighted_pass(basis, img, threads=1)
    b = weighted_pass(basis, img, threads=6)
    assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b) and np.array_equal(a.dots, b.dots)
