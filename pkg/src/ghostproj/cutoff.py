"""Optimal pseudo-correlation cutoff when the projection is also photon limited.

With ``a = (N / lambda) E[R] / sqrt(2 pi nm Var[R] E[I^2])`` the statistical
SNR of a uniformly exposed filtered basis is

    SNR^2 = N / (2 pi nm (exp(2X^2) + a exp(X^2)) f(X)),   f = erfc(X) / 2,

and its maximum over the standardized cutoff ``X`` solves

    -sqrt(pi) X (a + 2 exp(X^2)) erfc(X) + a exp(-X^2) + 1 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .basis import DistributionMoments

PADE_X = 3.0 * np.sqrt(np.pi) * (4.0 * np.pi - 7.0) / (4.0 * (6.0 * np.pi**2 - 15.0 * np.pi + 5.0))

SIGMOID_COEFFS = (0.6510, 0.5310, 1.5188, 1.3682, 1.2847)

A_MIN, A_MAX = 1e-6, 1e6
X_BRACKET = (0.0, 6.0)
RESIDUAL_TOL = 1e-10

_SQRT_PI = np.sqrt(np.pi)


def optimality_residual(x: float, a: float) -> float:
    """Left-hand side of the stationarity condition, written with erfcx to avoid overflow."""
    return (-_SQRT_PI * x * (a * special.erfc(x) + 2.0 * special.erfcx(x))
            + a * np.exp(-x * x) + 1.0)


def _residual_slope(x: float, a: float) -> float:
    return (-_SQRT_PI * a * special.erfc(x)
            - 2.0 * _SQRT_PI * (1.0 + 2.0 * x * x) * special.erfcx(x) + 4.0 * x)


def solve_optimal_x(a: float, tol: float = RESIDUAL_TOL, max_iter: int = 200) -> float:
    """Root of the stationarity condition in ``X_BRACKET`` by bisection polished with Newton."""
    if not A_MIN <= a <= A_MAX:
        raise ValueError(f"a = {a:g} outside supported range [{A_MIN:g}, {A_MAX:g}]")
    lo, hi = X_BRACKET
    g_lo, g_hi = optimality_residual(lo, a), optimality_residual(hi, a)
    if np.sign(g_lo) == np.sign(g_hi):
        raise RuntimeError(f"no sign change for a = {a:g} on {X_BRACKET}")
    # coarse bisection gets inside Newton's basin
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        g_mid = optimality_residual(mid, a)
        if np.sign(g_mid) == np.sign(g_lo):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        g = optimality_residual(x, a)
        if abs(g) < tol * 1e-3:
            break
        step = g / _residual_slope(x, a)
        x_new = x - step
        if not lo <= x_new <= hi:
            x_new = 0.5 * (lo + hi)
        if np.sign(optimality_residual(x_new, a)) == np.sign(g_lo):
            lo = x_new
        else:
            hi = x_new
        if x_new == x:
            break
        x = x_new
    if abs(optimality_residual(x, a)) >= tol:
        raise RuntimeError(f"cutoff solver failed to converge for a = {a:g}")
    return float(x)


def _sigmoid(u: float, c4: float, c5: float) -> float:
    return 1.0 / (1.0 + c4 * np.exp(c5 * u))


def approx_sqrt2x(a: float) -> float:
    """Fitted sigmoid for the optimal cutoff in standard deviations, ``sqrt(2) X``."""
    if not a > 0:
        raise ValueError("a must be positive")
    c1, c2, c3, c4, c5 = SIGMOID_COEFFS
    u = np.log10(a)
    return float(c1 * _sigmoid(u, c4, c5) + (c2 * u + c3) * _sigmoid(-u, c4, c5))


def approx_optimal_x(a: float) -> float:
    return approx_sqrt2x(a) / np.sqrt(2.0)


def a_parameter(N: float, photons: float, moments: DistributionMoments, nm: int,
                image_second_moment: float) -> float:
    """Scaled ratio of basis size to photons per pixel."""
    return (N / photons) * moments.mean / np.sqrt(
        2.0 * np.pi * nm * moments.variance * image_second_moment)


def snr_squared(x: float, a: float, N: float, nm: int) -> float:
    """Statistical SNR^2 of the photon-limited filtered scheme at cutoff ``X``."""
    ex2 = np.exp(x * x)
    f = 0.5 * special.erfc(x)
    return N / (2.0 * np.pi * nm * (ex2 * ex2 + a * ex2) * f)


def snr_grid(N: float, nm: int, a_values, sqrt2x_values) -> np.ndarray:
    """SNR over a grid of ``a`` (rows) and cutoffs in standard deviations (columns)."""
    a = np.asarray(a_values, dtype=float)[:, None]
    x = np.asarray(sqrt2x_values, dtype=float)[None, :] / np.sqrt(2.0)
    ex2 = np.exp(x * x)
    f = 0.5 * special.erfc(x)
    return np.sqrt(N / (2.0 * np.pi * nm * (ex2 * ex2 + a * ex2) * f))


@dataclass(frozen=True)
class CutoffProblem:
    a: float
    solution_x: float
    approx_x: float

    @property
    def solution_sigmas(self) -> float:
        return self.solution_x * np.sqrt(2.0)

    @property
    def approx_sigmas(self) -> float:
        return self.approx_x * np.sqrt(2.0)


def solve(a: float) -> CutoffProblem:
    return CutoffProblem(a=float(a), solution_x=solve_optimal_x(a), approx_x=approx_optimal_x(a))


def sweep(a_min: float = 1e-3, a_max: float = 1e3, points: int = 121) -> list[CutoffProblem]:
    return [solve(a) for a in np.logspace(np.log10(a_min), np.log10(a_max), points)]
