"""Shot noise and exposure jitter: stochastic realization and SNR predictors.

A realization perturbs every planned exposure with Gaussian shutter jitter
(truncated at zero), then counts photons.  Given the jittered exposures the
photon count at a pixel is a sum of independent Poisson variables, one per
mask, which is itself Poisson with the summed mean; the realization draws that
single per-pixel variable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from .basis import (
    STREAM_EXPOSURE,
    STREAM_POISSON,
    DistributionMoments,
    RandomBasis,
    philox_generator,
    philox_uniform,
)
from .correlate import CorrelationStats, kept_fraction, mills_factor
from .cutoff import a_parameter, snr_squared
from .schemes import ExposurePlan, Projection, accumulate_plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Photons per pixel per unit exposure (0 = noise-free) and shutter jitter."""

    photons_per_pixel: float = 0.0
    exposure_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.photons_per_pixel < 0 or self.exposure_sigma < 0:
            raise ValueError("photons_per_pixel and exposure_sigma must be non-negative")


def jittered_exposures(plan: ExposurePlan, model: NoiseModel) -> np.ndarray:
    """Planned exposures plus Gaussian jitter, clipped at zero.

    The jitter on mask ``k`` is read from position ``k`` of the exposure stream,
    so it does not depend on which other masks the plan contains.
    """
    w = plan.exposures
    if model.exposure_sigma == 0 or w.size == 0:
        return w.copy()
    u = philox_uniform(model.seed, 0, int(plan.indices.max()) + 1, STREAM_EXPOSURE)[plan.indices]
    z = special.ndtri(u)
    # masks planned at zero exposure are never shown, so they carry no jitter
    active = w > 0
    fragile = np.count_nonzero(w[active] < 4.0 * model.exposure_sigma)
    if fragile:
        log.info("%d exposures are within 4 sigma of zero; truncation biases them upward", fragile)
    return np.where(active, np.maximum(w + model.exposure_sigma * z, 0.0), 0.0)


def realize(plan: ExposurePlan, basis: RandomBasis, model: NoiseModel,
            threads: int | None = None) -> Projection:
    """One noisy realization of ``plan``.

    With ``photons_per_pixel = 0`` the result is the (jittered) intensity in
    exposure units; otherwise it is a photon-count image whose pedestal is
    ``photons_per_pixel`` times the plan's.
    """
    w = jittered_exposures(plan, model)
    jittered = ExposurePlan(plan.indices, w, plan.pedestal_predicted, plan.scheme)
    intensity = accumulate_plan(basis, jittered, threads)
    lam = model.photons_per_pixel
    details = {"scheme": plan.scheme, "photons_per_pixel": lam, "exposure_sigma": model.exposure_sigma}
    if lam == 0:
        return Projection(intensity, plan.pedestal_predicted, model.seed, 1.0, details)
    gen = philox_generator(model.seed, STREAM_POISSON)
    counts = gen.poisson(lam * intensity.reshape(-1)).astype(np.float64)
    return Projection(counts.reshape(intensity.shape), lam * plan.pedestal_predicted, model.seed, lam, details)


@dataclass(frozen=True)
class RealizationMoments:
    """Exact per-pixel mean and variance of :func:`realize` for a fixed basis (untruncated jitter)."""

    mean: np.ndarray
    variance: np.ndarray


def realization_moments(plan: ExposurePlan, basis: RandomBasis, model: NoiseModel) -> RealizationMoments:
    intensity = accumulate_plan(basis, plan)
    active = plan.indices[plan.exposures > 0]
    r2 = (basis.subset(active) ** 2).sum(axis=0).reshape(intensity.shape)
    lam, s2 = model.photons_per_pixel, model.exposure_sigma**2
    if lam == 0:
        return RealizationMoments(intensity, s2 * r2)
    return RealizationMoments(lam * intensity, lam * intensity + lam**2 * s2 * r2)


# --------------------------------------------------------------------------- filtered scheme


@dataclass(frozen=True)
class PoissonFilteredSNR:
    snr: float
    snr_statistical: float
    a: float
    limit_infinite_basis: float
    limit_infinite_photons: float
    gamma: float
    n_kept: float
    pedestal: float
    variance: float


def predict_snr_filtered_poisson(stats: CorrelationStats, cutoff: float, photons: float, N: float,
                                 n_kept: float | None = None, gamma: float | None = None) -> PoissonFilteredSNR:
    """SNR of the uniformly exposed filtered basis under shot noise.

    ``n_kept`` and ``gamma`` default to their Gaussian-model expectations;
    pass realized values to predict a particular simulation.
    """
    if not photons > 0:
        raise ValueError("photons per pixel must be positive")
    x = stats.x_of(cutoff)
    f = kept_fraction(x)
    if n_kept is None:
        n_kept = f * N
    if gamma is None:
        gamma = np.sqrt(2.0 * stats.variance / np.pi) * mills_factor(x) * stats.norm_ratio
    var_r, mean_r, ei2 = stats.r_variance, stats.r_mean, stats.i_second_moment
    snr = np.sqrt(n_kept * photons * gamma**2 * ei2 / (photons * var_r + gamma * n_kept * mean_r))
    mom = DistributionMoments(mean_r, var_r, stats.r_second_moment, 0.0, 0.0, 0.0)
    nm_eff = stats.channel_count * stats.nm
    a = a_parameter(N, photons, mom, nm_eff, ei2)
    stat = np.sqrt(snr_squared(x, a, N, nm_eff))
    return PoissonFilteredSNR(
        snr=float(snr), snr_statistical=float(stat), a=float(a),
        limit_infinite_basis=float(np.sqrt(photons * gamma * ei2 / mean_r)),
        limit_infinite_photons=float(np.sqrt(ei2 * gamma**2 * n_kept / var_r)),
        gamma=float(gamma), n_kept=float(n_kept),
        pedestal=float(photons * mean_r / gamma),
        variance=float(photons / gamma * (photons * var_r / (gamma * n_kept) + mean_r)),
    )


# --------------------------------------------------------------------------- numeric weights


def snr_poisson_numeric(image_second_moment: float, photons: float, pedestal: float) -> float:
    """``sqrt(lambda E[I^2] / P)`` for a near-perfect plan with pedestal ``P``."""
    if pedestal <= 0:
        return float("inf")
    return float(np.sqrt(photons * image_second_moment / pedestal))


def snr_exposure_numeric(image_second_moment: float, n_active: int, sigma: float,
                         variance: float) -> float:
    """``sqrt(E[I^2] / (N' sigma^2 Var[R]))``."""
    if sigma == 0:
        return float("inf")
    return float(np.sqrt(image_second_moment / (n_active * sigma**2 * variance)))


def snr_combined_numeric(image_second_moment: float, photons: float, sigma: float, n_active: int,
                         mean_weight: float, moments: DistributionMoments) -> float:
    """``sqrt(lambda E[I^2] / (N' sigma^2 lambda Var[R] + N' E[w] E[R]))``.

    ``photons = inf`` gives the pure exposure-noise limit and ``sigma = 0`` the
    pure shot-noise limit.
    """
    if np.isinf(photons):
        return snr_exposure_numeric(image_second_moment, n_active, sigma, moments.variance)
    denom = n_active * sigma**2 * photons * moments.variance + n_active * mean_weight * moments.mean
    if denom == 0:
        return float("inf")
    return float(np.sqrt(photons * image_second_moment / denom))


@dataclass(frozen=True)
class NumericSNR:
    snr: float
    poisson_only: float
    exposure_only: float
    n_active: int
    pedestal: float


def predict_snr_numeric(plan: ExposurePlan, moments: DistributionMoments, image_second_moment: float,
                        photons: float, sigma: float) -> NumericSNR:
    """Combined, shot-only and jitter-only SNR for a near-perfect numeric plan."""
    active = plan.exposures[plan.exposures > 0]
    n_active = int(active.size)
    mean_w = float(active.mean()) if n_active else 0.0
    pedestal = n_active * mean_w * moments.mean
    return NumericSNR(
        snr=snr_combined_numeric(image_second_moment, photons, sigma, n_active, mean_w, moments),
        poisson_only=(snr_poisson_numeric(image_second_moment, photons, pedestal)
                      if np.isfinite(photons) else float("inf")),
        exposure_only=snr_exposure_numeric(image_second_moment, n_active, sigma, moments.variance),
        n_active=n_active,
        pedestal=float(pedestal),
    )


@dataclass(frozen=True)
class VarianceMap:
    values: np.ndarray
    global_variance: float
    pedestal: float
    intensity: np.ndarray


def variance_map_imperfect_poisson(plan: ExposurePlan, basis: RandomBasis, image, photons: float,
                                   threads: int | None = None) -> VarianceMap:
    """``lambda^2 (S - (I + P))^2 + lambda S`` with ``S = sum_k w_k R_k`` and ``P`` its spatial mean."""
    s = accumulate_plan(basis, plan, threads)
    target = np.asarray(getattr(image, "values", image), dtype=float).reshape(s.shape)
    pedestal = float(s.mean())
    vmap = photons**2 * (s - (target + pedestal)) ** 2 + photons * s
    return VarianceMap(vmap, float(vmap.mean()), pedestal, s)


@dataclass(frozen=True)
class DirectBaseline:
    pixel_snr: np.ndarray
    snr: float
    zero_centered_bound: float


def direct_projection_baseline(image, photons: float) -> DirectBaseline:
    """Shot-noise SNR of projecting ``image`` directly through a single mask."""
    values = np.asarray(getattr(image, "values", image), dtype=float)
    if values.min() < 0 or values.max() > 1:
        raise ValueError("direct projection needs transmission values in [0, 1]")
    pixel = np.sqrt(photons * values)
    return DirectBaseline(pixel, float(np.sqrt(photons * values.mean())), float(np.sqrt(photons)))
