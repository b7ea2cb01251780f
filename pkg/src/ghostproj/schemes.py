"""Analytic ghost-projection schemes, their SNR predictors and basis-size planners.

Every scheme produces an :class:`ExposurePlan` (non-negative exposure per mask)
and the noise-free :class:`Projection` obtained by summing exposed masks.
Masks are regenerated block by block, so none of the schemes needs the basis
to be materialized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .basis import DistributionMoments, RandomBasis
from .correlate import (
    AnyImage,
    ColorImage,
    CorrelationStats,
    FilterSelection,
    Image,
    ImageMoments,
    channel_correlations,
    correlation_stats,
    expected_filtered_correlation,
    filter_basis,
    filter_independent,
    kept_fraction,
    mills_factor,
    pseudo_correlation,
    xi_factor,
)
from .cutoff import PADE_X

log = logging.getLogger(__name__)


class NegativeExposureError(ValueError):
    def __init__(self, index: int, value: float):
        super().__init__(f"mask {index} needs negative exposure {value:.3g}; shift the image further")
        self.index = index
        self.value = value


@dataclass
class ExposurePlan:
    """Non-negative exposure per mask index."""

    indices: np.ndarray
    exposures: np.ndarray
    pedestal_predicted: float
    scheme: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.exposures = np.asarray(self.exposures, dtype=np.float64)
        if self.indices.shape != self.exposures.shape:
            raise ValueError("indices and exposures must have equal length")
        if self.exposures.size and self.exposures.min() < 0:
            k = int(np.argmin(self.exposures))
            raise NegativeExposureError(int(self.indices[k]), float(self.exposures[k]))
        if self.indices.size > 1 and np.any(np.diff(self.indices) <= 0):
            order = np.argsort(self.indices, kind="stable")
            self.indices, self.exposures = self.indices[order], self.exposures[order]
            if np.any(np.diff(self.indices) == 0):
                raise ValueError("plan indices must be unique")

    @classmethod
    def dense(cls, weights: np.ndarray, pedestal: float, scheme: str, **details) -> "ExposurePlan":
        weights = np.asarray(weights, dtype=np.float64)
        return cls(np.arange(weights.size), weights, pedestal, scheme, dict(details))

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.exposures))

    @property
    def total_exposure(self) -> float:
        return float(self.exposures.sum())

    def nonzero(self) -> "ExposurePlan":
        keep = self.exposures > 0
        return ExposurePlan(self.indices[keep], self.exposures[keep], self.pedestal_predicted,
                            self.scheme, dict(self.details))


@dataclass
class Projection:
    """Accumulated exposure ``P`` with the additive pedestal expected beneath the image."""

    values: np.ndarray
    pedestal: float
    realization_seed: int | None = None
    scale: float = 1.0
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ShiftedImage:
    original: Image
    delta: float
    mode: str = "statistical"
    minimizing_mask: int | None = None

    @property
    def shifted(self) -> Image:
        return self.original.shifted(self.delta)


@dataclass(frozen=True)
class BasisSizePlan:
    target_snr: float
    nm: int
    confidence_sigmas: float
    n_required: int
    n_estimate: float
    n_base: float
    surcharge: float
    kept_fraction: float
    xi: float


def accumulate_plan(basis: RandomBasis, plan: ExposurePlan, threads: int | None = None) -> np.ndarray:
    """``sum_k t_k R_k`` over the plan's masks, returned in mask shape."""
    idx, w = plan.indices, plan.exposures

    def per_block(k0, blk):
        lo, hi = np.searchsorted(idx, [k0, k0 + blk.shape[0]])
        if hi == lo:
            return None
        return w[lo:hi] @ blk[idx[lo:hi] - k0]

    total = np.zeros(basis.spec.mask_size)
    for part in basis.map_blocks(per_block, threads=threads):
        if part is not None:
            total += part
    return total.reshape(basis.spec.mask_shape)


# --------------------------------------------------------------------------- weighted


@dataclass
class WeightedPass:
    """One streaming pass over the basis serving every image shift.

    ``dots`` and ``sums`` hold ``R_k . I`` and ``R_k . J`` per mask;
    ``a`` and ``b`` hold ``sum_k dots_k R_k`` and ``sum_k sums_k R_k``, so the
    weighted projection of ``I - delta`` is ``(a - delta b) / (N Var[R])``.
    """

    image: Image
    moments: DistributionMoments
    N: int
    dots: np.ndarray
    sums: np.ndarray
    a: np.ndarray
    b: np.ndarray
    shape: tuple

    def exact_shift(self) -> ShiftedImage:
        ratios = self.dots / self.sums
        k = int(np.argmin(ratios))
        return ShiftedImage(self.image, float(ratios[k]), "exact", k)

    def exposures(self, delta: float = 0.0) -> np.ndarray:
        t = (self.dots - delta * self.sums) / (self.N * self.moments.variance)
        # products of non-negative masks with a shifted image carry rounding of
        # order eps * |R|.|I - delta|; anything inside that is a true zero
        tol = 1e-12 * (np.abs(self.dots) + abs(delta) * self.sums) / (self.N * self.moments.variance)
        bad = t < -tol
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise NegativeExposureError(k, float(t[k]))
        return np.maximum(t, 0.0)

    def result(self, shifted: ShiftedImage | None = None) -> tuple[ExposurePlan, Projection]:
        delta = 0.0 if shifted is None else shifted.delta
        target = self.image if shifted is None else shifted.shifted
        t = self.exposures(delta)
        mom = self.moments
        pedestal = target.nm * mom.mean**2 * target.mean / mom.variance
        values = ((self.a - delta * self.b) / (self.N * mom.variance)).reshape(self.shape)
        tag = "weighted" if shifted is None else "weighted-shifted"
        plan = ExposurePlan(np.arange(self.N), t, pedestal, tag, {"delta": delta})
        proj = Projection(values, pedestal, details={"scheme": tag, "delta": delta})
        return plan, proj


def weighted_pass(basis: RandomBasis, image: Image, threads: int | None = None) -> WeightedPass:
    """Stream the basis once, accumulating everything the weighted schemes need."""
    spec = basis.spec
    if (spec.n, spec.m) != image.shape or spec.channels != 1:
        raise ValueError("basis and image dimensions disagree")
    flat = image.flat()

    def per_block(k0, blk):
        dots = blk @ flat
        sums = blk.sum(axis=1)
        ab = blk.T @ np.column_stack([dots, sums])
        return dots, sums, ab

    dots, sums, parts = [], [], []
    ab = np.zeros((spec.mask_size, 2))
    for d, s, part in basis.map_blocks(per_block, threads=threads):
        dots.append(d)
        sums.append(s)
        ab += part
    return WeightedPass(image, basis.moments, basis.N, np.concatenate(dots), np.concatenate(sums),
                        ab[:, 0].copy(), ab[:, 1].copy(), spec.mask_shape)


def weighted_projection(basis: RandomBasis, image: Image, shifted: ShiftedImage | None = None,
                        threads: int | None = None) -> tuple[ExposurePlan, Projection]:
    """Exposures ``t_k = R_k . I' / (N Var[R])`` with ``I' = I - delta``."""
    return weighted_pass(basis, image, threads).result(shifted)


def confidence_sigmas(N: int) -> float:
    """Standard deviations ``s = sqrt(2) erfinv((N-1)/N)`` of a one-in-N low extreme."""
    if N < 2:
        raise ValueError("need N >= 2")
    return float(np.sqrt(2.0) * special.erfcinv(1.0 / N))


def optimal_shift(source, image: Image, N: int | None = None, mode: str = "statistical") -> ShiftedImage:
    """Largest shift keeping every weighted exposure non-negative.

    ``source`` is a :class:`RandomBasis` or :class:`WeightedPass` for the exact
    mode, or :class:`DistributionMoments` (or a basis) for the statistical one.
    """
    if mode == "exact":
        if isinstance(source, RandomBasis):
            source = weighted_pass(source, image)
        if not isinstance(source, WeightedPass):
            raise TypeError("exact shift needs the basis or a weighted pass")
        return source.exact_shift()
    if mode != "statistical":
        raise ValueError(f"unknown shift mode {mode!r}")
    if isinstance(source, (RandomBasis, WeightedPass)):
        N = source.N if N is None else N
        source = source.moments
    if N is None:
        raise ValueError("statistical shift needs N")
    s = confidence_sigmas(N)
    mom = source
    delta = image.mean - s * np.sqrt(image.second_moment * mom.variance / (image.nm * mom.mean**2))
    return ShiftedImage(image, float(delta), "statistical")


@dataclass(frozen=True)
class WeightedSNR:
    snr: float
    pedestal: float
    variance: float


def _require_nonzero_mean(image) -> None:
    if abs(image.mean) < 1e-12:
        raise ValueError("weighted-scheme SNR formula undefined for zero-mean image; "
                         "use shifted image mean")


def weighted_snr(moments: DistributionMoments, image, N: float) -> WeightedSNR:
    """``SNR = sqrt(E[I^2] N Var[R]) / (nm E[R] E[I])``."""
    _require_nonzero_mean(image)
    nm = image.nm
    snr = np.sqrt(image.second_moment * N * moments.variance) / (nm * moments.mean * image.mean)
    variance = (nm * moments.mean * image.mean) ** 2 / (N * moments.variance)
    pedestal = nm * moments.mean**2 * image.mean / moments.variance
    return WeightedSNR(float(abs(snr)), float(pedestal), float(variance))


def weighted_required_n(moments: DistributionMoments, image, snr: float) -> float:
    """Basis size giving ``snr`` under the weighted scheme."""
    _require_nonzero_mean(image)
    nm = image.nm
    return float(snr**2 * (nm * moments.mean * image.mean) ** 2
                 / (moments.variance * image.second_moment))


# --------------------------------------------------------------------------- filtered


def _sum_selected(basis: RandomBasis, indices: np.ndarray, threads: int | None) -> np.ndarray:
    def per_block(k0, blk):
        lo, hi = np.searchsorted(indices, [k0, k0 + blk.shape[0]])
        if hi == lo:
            return None
        return blk[indices[lo:hi] - k0].sum(axis=0)

    total = np.zeros(basis.spec.mask_size)
    for part in basis.map_blocks(per_block, threads=threads):
        if part is not None:
            total += part
    return total


def filtered_projection(basis: RandomBasis, image: AnyImage, selection: FilterSelection,
                        threads: int | None = None) -> tuple[ExposurePlan, Projection]:
    """Uniform exposure ``1 / (gamma N')`` on every kept mask."""
    if selection.n_kept == 0:
        raise ValueError("no masks survive cutoff")
    gamma = selection.gamma
    if not gamma > 0:
        raise ValueError("filtered set not positively skewed (gamma <= 0)")
    if abs(selection.gamma_predicted - gamma) > 0.05 * abs(gamma):
        log.info("empirical gamma %.6g differs from predicted %.6g", gamma, selection.gamma_predicted)
    t = 1.0 / (gamma * selection.n_kept)
    mom = basis.moments
    pedestal = mom.mean / gamma
    total = _sum_selected(basis, selection.kept_indices, threads)
    values = (total * t).reshape(basis.spec.mask_shape)
    plan = ExposurePlan(selection.kept_indices, np.full(selection.n_kept, t), pedestal, "filtered",
                        {"gamma": gamma, "cutoff": selection.cutoff, "x": selection.x})
    return plan, Projection(values, pedestal, details={"scheme": "filtered", "gamma": gamma})


def filtered_variance(moments: DistributionMoments, gamma: float, n_kept: int) -> float:
    """Residual variance ``Var[R] / (gamma^2 N')`` of the uniform filtered scheme."""
    return moments.variance / (gamma**2 * n_kept)


def snr_from_gamma(moments: DistributionMoments, image_second_moment: float, gamma: float,
                   n_kept: int) -> float:
    """``sqrt(E[I^2] gamma^2 N' / Var[R])``."""
    return float(np.sqrt(image_second_moment * gamma**2 * n_kept / moments.variance))


@dataclass(frozen=True)
class FilteredSNR:
    snr: float
    xi: float
    uncertainty_product: float
    n_kept: float
    kept_fraction: float
    x: float


def filtered_snr(stats: CorrelationStats, cutoff: float, N: float | None = None,
                 n_kept: float | None = None) -> FilteredSNR:
    """``SNR = sqrt(N' / nm) xi`` with ``N' = f N`` unless ``n_kept`` is given."""
    x = stats.x_of(cutoff)
    f = kept_fraction(x)
    if not f > 0:
        raise ValueError("cutoff keeps no masks")
    if n_kept is None:
        if N is None:
            raise ValueError("need N or n_kept")
        n_kept = f * N
    xi = xi_factor(x)
    nm_eff = stats.channel_count * stats.nm
    snr = np.sqrt(n_kept / nm_eff) * xi
    return FilteredSNR(float(snr), float(xi), float(snr**2 * nm_eff), float(n_kept), float(f), float(x))


def filtered_required_n(snr: float, nm: int, x: float = PADE_X) -> float:
    """Basis size whose expected kept set reaches ``snr``, ignoring binomial spread."""
    return float(snr**2 * nm / (kept_fraction(x) * xi_factor(x) ** 2))


@dataclass(frozen=True)
class OptimalCutoff:
    x: float
    sigmas: float
    cutoff: float
    kept_fraction: float
    xi: float
    variance_prefactor: float
    uncertainty_factor: float

    def variance(self, nm: int, image_second_moment: float, N: float) -> float:
        """Optimized residual variance ``prefactor * 2 pi nm E[I^2] / N``."""
        return self.variance_prefactor * 2.0 * np.pi * nm * image_second_moment / N


def optimal_cutoff_noiseless(stats: CorrelationStats, x: float = PADE_X) -> OptimalCutoff:
    """Cutoff minimizing the filtered-scheme variance at fixed N (Pade estimate by default)."""
    f = kept_fraction(x)
    xi = xi_factor(x)
    return OptimalCutoff(
        x=float(x), sigmas=float(np.sqrt(2.0) * x), cutoff=float(stats.cutoff_at(x)),
        kept_fraction=float(f), xi=float(xi),
        variance_prefactor=float(f * np.exp(2.0 * x * x)),
        uncertainty_factor=float(1.0 / (f * xi**2)),
    )


def basis_size_estimate(target_snr: float, nm: int, s: float = 0.0, x: float = PADE_X,
                        exact: bool = False) -> BasisSizePlan:
    """Unfiltered basis size that keeps enough masks for ``target_snr`` with ``s``-sigma confidence.

    The default uses the leading terms ``SNR^2 nm / (f xi^2) + (s SNR / (f xi)) sqrt(nm (1-f))``;
    ``exact=True`` inverts ``N' = f N - s sqrt(N f (1-f))`` with the quadratic formula.
    """
    if not target_snr > 0:
        raise ValueError("target SNR must be positive")
    if s < 0:
        raise ValueError("confidence sigmas must be non-negative")
    f = kept_fraction(x)
    xi = xi_factor(x)
    n_kept = target_snr**2 * nm / xi**2
    base = n_kept / f
    if exact:
        total = base + s / (2 * f) * np.sqrt(4 * (1 - f) * n_kept + s**2 * (1 - f) ** 2) \
            + s**2 * (1 - f) / (2 * f)
    else:
        total = base + (s * target_snr / (f * xi)) * np.sqrt(nm * (1 - f))
    return BasisSizePlan(
        target_snr=float(target_snr), nm=int(nm), confidence_sigmas=float(s),
        n_required=max(1, int(np.ceil(total - 1e-9))), n_estimate=float(total),
        n_base=float(base), surcharge=float(total - base), kept_fraction=float(f), xi=float(xi),
    )


@dataclass(frozen=True)
class DwellPlan:
    cutoff: float
    x: float
    kept_fraction: float
    discard_fraction: float
    gamma: float
    exposure: float
    predicted_snr: float


def _dwell_plan(stats: CorrelationStats, x: float, N: float) -> DwellPlan:
    f = kept_fraction(x)
    gamma = (expected_filtered_correlation(stats, stats.cutoff_at(x)) - stats.expected) * stats.norm_ratio
    exposure = 1.0 / (gamma * f * N)
    snr = np.sqrt(stats.i_second_moment * gamma / (exposure * stats.r_variance))
    return DwellPlan(float(stats.cutoff_at(x)), float(x), float(f), float(1 - f), float(gamma),
                     float(exposure), float(snr))


def dwell_constrained_cutoff(t_min: float, N: float, moments: DistributionMoments, image) -> DwellPlan:
    """Cutoff whose uniform exposure ``1 / (gamma N')`` equals the minimum dwell time."""
    stats = correlation_stats(moments, ImageMoments.of(image))
    arg = t_min * N * stats.norm_ratio * np.sqrt(stats.variance / (2.0 * np.pi))
    if arg <= 1.0:
        raise ValueError("dwell constraint inactive; use optimal cutoff")
    x = float(np.sqrt(np.log(arg)))
    return _dwell_plan(stats, x, N)


def optimal_dwell(N: float, moments: DistributionMoments, image, x: float = PADE_X) -> DwellPlan:
    """Exposure, kept fraction and SNR at the unconstrained optimal cutoff."""
    stats = correlation_stats(moments, ImageMoments.of(image))
    return _dwell_plan(stats, x, N)


# --------------------------------------------------------------------------- linear weights


def filtered_linear_projection(basis: RandomBasis, image: Image, cutoff: float, ratio: float,
                               correlations: np.ndarray | None = None,
                               threads: int | None = None) -> tuple[ExposurePlan, Projection]:
    """Filter at ``cutoff`` then weight kept masks linearly in ``C_k - ratio``.

    ``ratio`` is beta/alpha; exposures are
    ``(C_k - ratio) / (N' (E[C'^2] - ratio E[C'])) sqrt(E[I^2] / E[R^2])``.
    """
    if not image.zero_centered:
        raise ValueError("linear-weights scheme requires a zero-centred image")
    if correlations is None:
        correlations = pseudo_correlation(basis, image, threads)
    mom = basis.moments
    kept = np.flatnonzero(correlations >= cutoff)
    if kept.size == 0:
        raise ValueError("no masks survive cutoff")
    ck = correlations[kept]
    m1, m2 = ck.mean(), np.mean(ck**2)
    denom = m2 - ratio * m1
    if not denom > 0:
        raise ValueError("E[C'^2] - ratio E[C'] must be positive")
    norm = np.sqrt(image.second_moment / mom.second_moment)
    t = (ck - ratio) / (kept.size * denom) * norm
    if np.any(t < 0):
        k = int(np.argmin(t))
        raise NegativeExposureError(int(kept[k]), float(t[k]))
    pedestal = mom.mean * (m1 - ratio) / denom * norm
    plan = ExposurePlan(kept, t, pedestal, "filtered-linear", {"cutoff": cutoff, "ratio": ratio})
    values = accumulate_plan(basis, plan, threads)
    return plan, Projection(values, pedestal, details={"scheme": "filtered-linear"})


# --------------------------------------------------------------------------- colour


@dataclass
class ColorResult:
    plan: ExposurePlan
    projection: Projection
    selection: FilterSelection
    predicted_snr: float
    planned_snr: float


def color_projection(basis: RandomBasis, image: ColorImage, mode: str = "global",
                     x: float = PADE_X, threads: int | None = None) -> ColorResult:
    """Simultaneous-illumination colour projection with global or per-channel filtering.

    ``predicted_snr`` uses the empirical kept-set correlation;
    ``planned_snr`` uses the Gaussian model for the selection rule.
    """
    if basis.spec.channels != image.channels:
        raise ValueError(f"basis has {basis.spec.channels} channels but image has {image.channels}")
    mom = basis.moments
    stats = correlation_stats(mom, image)
    if mode == "global":
        cors = pseudo_correlation(basis, image, threads)
        selection = filter_basis(cors, stats, stats.cutoff_at(x))
    elif mode == "independent":
        per_channel, channel_stats = channel_correlations(basis, image, threads)
        cors = pseudo_correlation(basis, image, threads)
        selection = filter_independent(per_channel, channel_stats, cors, stats)
    else:
        raise ValueError(f"unknown colour mode {mode!r}")
    plan, proj = filtered_projection(basis, image, selection, threads)
    plan.scheme = proj.details["scheme"] = f"color-{mode}"
    predicted = snr_from_gamma(mom, stats.i_second_moment, selection.gamma, selection.n_kept)
    planned = float(np.sqrt(selection.kept_fraction * basis.N / (image.channels * image.nm))
                    * xi_factor(selection.x))
    return ColorResult(plan, proj, selection, predicted, planned)


def color_uncertainty_factor(x: float) -> float:
    """``SNR^2 c nm / N`` for a filter keeping the top tail above standardized cutoff ``x``."""
    return float(kept_fraction(x) * (2.0 / np.pi) * mills_factor(x) ** 2)


def color_planning_ratio(channels: int = 3, x_global: float = PADE_X) -> float:
    """Planned SNR of global over independent colour filtering."""
    x_indep = float(special.erfcinv(2.0 * 0.5**channels))
    return float(np.sqrt(color_uncertainty_factor(x_global) / color_uncertainty_factor(x_indep)))


# --------------------------------------------------------------------------- diagnostics


def filtered_pixel_variance(basis: RandomBasis, indices: Sequence[int], threads: int | None = None) -> np.ndarray:
    """Per-pixel sample variance of the kept masks, to check ``Var[R'_ij] ~ Var[R]``."""
    indices = np.asarray(indices, dtype=np.int64)

    def per_block(k0, blk):
        lo, hi = np.searchsorted(indices, [k0, k0 + blk.shape[0]])
        sub = blk[indices[lo:hi] - k0]
        return sub.sum(axis=0), (sub * sub).sum(axis=0)

    s1 = np.zeros(basis.spec.mask_size)
    s2 = np.zeros(basis.spec.mask_size)
    for a, b in basis.map_blocks(per_block, threads=threads):
        s1 += a
        s2 += b
    n = indices.size
    mean = s1 / n
    var = (s2 - n * mean**2) / (n - 1)
    return var.reshape(basis.spec.mask_shape)
