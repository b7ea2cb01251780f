import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostproj.basis import (
    STREAM_BASIS,
    STREAM_EXPOSURE,
    BasisSpec,
    RandomBasis,
    completeness_report,
    generate_block,
    make_basis,
    moments,
    orthogonality_report,
    philox_uniform,
)


@given(seed=st.integers(0, 2**64 - 1), start=st.integers(0, 10**6), count=st.integers(1, 50),
       cut=st.integers(0, 50))
@settings(max_examples=60, deadline=None)
def test_stream_positions_are_addressable(seed, start, count, cut):
    cut = min(cut, count)
    whole = philox_uniform(seed, start, count)
    left = philox_uniform(seed, start, cut) if cut else np.empty(0)
    right = philox_uniform(seed, start + cut, count - cut)
    assert np.array_equal(whole, np.concatenate([left, right]))


def test_streams_are_distinct():
    a = philox_uniform(5, 0, 64, STREAM_BASIS)
    b = philox_uniform(5, 0, 64, STREAM_EXPOSURE)
    assert not np.any(a == b)


@given(k0=st.integers(0, 30), size=st.integers(1, 10), dist=st.sampled_from(
    ["uniform01", "binary01", "truncated-gaussian"]))
@settings(max_examples=40, deadline=None)
def test_block_generation_matches_single_masks(k0, size, dist):
    spec = BasisSpec(5, 4, 64, dist, master_seed=99)
    k1 = min(k0 + size, spec.N)
    block = generate_block(spec, k0, k1)
    singles = np.stack([generate_block(spec, k, k + 1)[0] for k in range(k0, k1)])
    assert np.array_equal(block, singles)
    assert block.min() >= 0.0 and block.max() <= 1.0


def test_chunk_and_threads_do_not_change_blocks():
    spec = BasisSpec(6, 6, 300, "uniform01", 3)
    a = RandomBasis(spec, chunk=7, threads=1)
    b = RandomBasis(spec, chunk=64, threads=4)
    assert np.array_equal(np.concatenate(a.map_blocks(lambda k0, blk: blk)),
                          np.concatenate(b.map_blocks(lambda k0, blk: blk)))
    assert np.array_equal(make_basis(spec).flat(), a.flat())


def test_subset_streams_selected_masks():
    spec = BasisSpec(4, 4, 200, "uniform01", 8)
    idx = np.array([0, 5, 63, 64, 199])
    streamed = RandomBasis(spec, chunk=16).subset(idx)
    assert np.array_equal(streamed, make_basis(spec).flat()[idx])


def test_closed_form_moments():
    uni = moments(BasisSpec(2, 2, 1, "uniform01"))
    assert uni.mean == 0.5 and np.isclose(uni.variance, 1 / 12) and np.isclose(uni.second_moment, 1 / 3)
    binary = moments(BasisSpec(2, 2, 1, "binary01"))
    assert binary.mean == 0.5 and binary.variance == 0.25


def test_clipped_gaussian_moments_against_sampling():
    spec = BasisSpec(100, 100, 40, "truncated-gaussian", 4, mu=0.3, sigma=0.3)
    mom = moments(spec)
    values = generate_block(spec, 0, spec.N).ravel()
    n = values.size
    assert abs(values.mean() - mom.mean) < 4 * np.sqrt(mom.variance / n)
    assert abs(np.mean(values**2) - mom.second_moment) < 4 * np.sqrt(mom.square_variance / n)


def test_clipped_gaussian_default_is_nearly_untouched():
    mom = moments(BasisSpec(2, 2, 1, "truncated-gaussian", mu=0.5, sigma=0.1))
    assert mom.mean == pytest.approx(0.5, abs=1e-12)
    assert mom.variance == pytest.approx(0.0099999889, rel=1e-6)


@pytest.mark.parametrize("dist", ["uniform01", "binary01", "truncated-gaussian"])
def test_empirical_moments_match(dist):
    spec = BasisSpec(20, 20, 500, dist, 11)
    mom = moments(spec)
    values = generate_block(spec, 0, spec.N).ravel()
    n = values.size
    assert abs(values.mean() - mom.mean) < 4 * np.sqrt(mom.variance / n)


@pytest.mark.parametrize("dist", ["uniform01", "binary01"])
def test_orthogonality_relation(dist):
    basis = make_basis(BasisSpec(20, 20, 4000, dist, 21))
    rep = orthogonality_report(basis, pairs=2000)
    z_off, z_diag = rep.mean_z()
    assert abs(z_off) < 3 and abs(z_diag) < 3
    assert rep.offset_variance == pytest.approx(rep.predicted_variance, rel=0.15)


@pytest.mark.parametrize("dist", ["uniform01", "binary01"])
def test_completeness_relation(dist):
    basis = make_basis(BasisSpec(14, 14, 5000, dist, 22))
    rep = completeness_report(basis)
    z_off, z_diag = rep.mean_z()
    assert abs(z_off) < 3 and abs(z_diag) < 3
    # the pair sums are not independent, so the spread estimate itself wanders by about 15%
    assert rep.offset_variance == pytest.approx(rep.predicted_variance, rel=0.3)
    assert rep.diagonal_variance == pytest.approx(rep.predicted_diagonal_variance, rel=0.3)


def test_invalid_specs():
    with pytest.raises(ValueError):
        BasisSpec(0, 4, 10)
    with pytest.raises(ValueError):
        BasisSpec(4, 4, 10, "poisson")
    with pytest.raises(ValueError):
        BasisSpec(4, 4, 10, master_seed=-1)
    with pytest.raises(IndexError):
        generate_block(BasisSpec(4, 4, 10), 5, 11)


def test_memory_cap_switches_to_streaming():
    basis = make_basis(BasisSpec(10, 10, 100), memory_cap=1000)
    assert not basis.materialized
