import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from ghostproj.cutoff import (
    PADE_X,
    a_parameter,
    approx_sqrt2x,
    optimality_residual,
    snr_grid,
    snr_squared,
    solve_optimal_x,
    sweep,
)
from ghostproj.basis import BasisSpec, moments


def test_pade_value():
    assert PADE_X == pytest.approx(0.432884, abs=5e-7)


@given(log_a=st.floats(-3, 3))
@settings(max_examples=100, deadline=None)
def test_root_matches_independent_oracles(log_a):
    a = 10.0**log_a
    x = solve_optimal_x(a)
    assert abs(optimality_residual(x, a)) < 1e-10
    # root of the condition found by bracketing
    assert x == pytest.approx(optimize.brentq(optimality_residual, 1e-9, 6.0, args=(a,), xtol=1e-14), abs=1e-9)
    # direct maximization of the SNR^2 expression
    best = optimize.minimize_scalar(lambda t: -snr_squared(t, a, 1e5, 1600), bounds=(0, 6),
                                    method="bounded", options={"xatol": 1e-10})
    assert x == pytest.approx(best.x, abs=1e-5)


@given(log_a=st.floats(-3, 3), dx=st.sampled_from([-0.05, 0.05]))
@settings(max_examples=60, deadline=None)
def test_solution_is_local_maximum(log_a, dx):
    a = 10.0**log_a
    x = solve_optimal_x(a)
    assert snr_squared(x, a, 4e4, 1600) >= snr_squared(max(x + dx, 0.0), a, 4e4, 1600)


def test_sweep_monotone_and_limits():
    probs = sweep()
    xs = np.array([p.solution_x for p in probs])
    assert np.all(np.diff(xs) >= 0)
    assert np.all(xs >= 0.306 - 1e-3)
    assert solve_optimal_x(1e-6) * np.sqrt(2) == pytest.approx(0.612, abs=0.02)
    assert solve_optimal_x(1e-6) == pytest.approx(PADE_X, abs=2e-3)
    assert solve_optimal_x(100.0) * np.sqrt(2) == pytest.approx(2.4, abs=0.15)


def test_sigmoid_tracks_solution():
    dev = max(abs(p.approx_sigmas - p.solution_sigmas) for p in sweep())
    assert dev < 0.15


def test_snr_falls_with_a():
    a = np.logspace(-3, 3, 25)
    grid = snr_grid(4e4, 1600, a, np.linspace(0, 3, 31))
    assert np.all(np.diff(grid, axis=0) < 0)
    assert grid[3, 7] ** 2 == pytest.approx(snr_squared(0.7 / np.sqrt(2), a[3], 4e4, 1600))


def test_a_parameter_example():
    mom = moments(BasisSpec(40, 40, 1, "binary01"))
    a = a_parameter(1e5, 1000.0, mom, 1600, 0.50757)
    assert a == pytest.approx(1.40, abs=0.005)
    assert approx_sqrt2x(a) == pytest.approx(solve_optimal_x(a) * np.sqrt(2), abs=0.15)


def test_invalid_a():
    with pytest.raises(ValueError):
        approx_sqrt2x(0.0)
    with pytest.raises(ValueError):
        solve_optimal_x(-1.0)
