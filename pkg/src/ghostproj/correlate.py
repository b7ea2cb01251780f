"""Pseudo-correlation and true correlation of masks against a target image.

Monochrome and colour images share one code path: a colour mask is a
``(channels, n, m)`` stack, flattened channel-major, and the pooled moments of
the colour image play the role of ``E[I]`` and ``E[I^2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .basis import DistributionMoments, RandomBasis

MAX_CUTOFF_X = 6.0


@dataclass(frozen=True)
class Image:
    """A target image ``I_ij`` in transmission units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def nm(self) -> int:
        return self.values.size

    @property
    def channels(self) -> int:
        return 1

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.values**2))

    @property
    def zero_centered(self) -> bool:
        return abs(self.mean) < 1e-12

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def centered(self) -> "Image":
        return Image(self.values - self.values.mean())

    def shifted(self, delta: float) -> "Image":
        return Image(self.values - delta)

    def scaled(self, factor: float) -> "Image":
        return Image(self.values * factor)


@dataclass(frozen=True)
class ColorImage:
    """A stack of same-shaped channel images, pooled for colour statistics."""

    channel_images: tuple[Image, ...]

    def __post_init__(self):
        chans = tuple(c if isinstance(c, Image) else Image(c) for c in self.channel_images)
        if not chans:
            raise ValueError("colour image needs at least one channel")
        if len({c.shape for c in chans}) != 1:
            raise ValueError("all colour channels must share n, m")
        object.__setattr__(self, "channel_images", chans)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "ColorImage":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError("colour array must have shape (channels, n, m)")
        return cls(tuple(Image(v) for v in values))

    @property
    def values(self) -> np.ndarray:
        return np.stack([c.values for c in self.channel_images])

    @property
    def shape(self) -> tuple[int, int]:
        return self.channel_images[0].shape

    @property
    def nm(self) -> int:
        return self.channel_images[0].nm

    @property
    def channels(self) -> int:
        return len(self.channel_images)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.values**2))

    @property
    def zero_centered(self) -> bool:
        return abs(self.mean) < 1e-12

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def centered(self) -> "ColorImage":
        return ColorImage(tuple(Image(c.values - self.mean) for c in self.channel_images))


@dataclass(frozen=True)
class ImageMoments:
    """Summary statistics standing in for an image in planning formulas."""

    nm: int
    mean: float
    second_moment: float
    channels: int = 1

    @classmethod
    def of(cls, image) -> "ImageMoments":
        return cls(image.nm, image.mean, image.second_moment, image.channels)

    @property
    def zero_centered(self) -> bool:
        return abs(self.mean) < 1e-12


AnyImage = Image | ColorImage


@dataclass(frozen=True)
class CorrelationStats:
    """Gaussian model of the pseudo-correlation distribution and the moments behind it."""

    expected: float
    variance: float
    channel_count: int
    nm: int
    r_mean: float
    r_variance: float
    r_second_moment: float
    i_mean: float
    i_second_moment: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("correlation variance must be positive")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def norm_ratio(self) -> float:
        """``sqrt(E[R^2] / E[I^2])``, the factor turning a correlation excess into gamma."""
        return float(np.sqrt(self.r_second_moment / self.i_second_moment))

    def x_of(self, cutoff: float) -> float:
        return (cutoff - self.expected) / np.sqrt(2.0 * self.variance)

    def cutoff_at(self, x: float) -> float:
        return self.expected + x * np.sqrt(2.0 * self.variance)

    def cutoff_sigmas(self, s: float) -> float:
        """Cutoff ``s`` standard deviations above ``E[C]``."""
        return self.expected + s * self.std


def _check_image(image: AnyImage) -> None:
    if image.second_moment == 0.0:
        raise ValueError("degenerate image: E[I^2] = 0")


def correlation_stats(moments: DistributionMoments, image: "AnyImage | ImageMoments") -> CorrelationStats:
    _check_image(image)
    c = image.channels
    ei, ei2 = image.mean, image.second_moment
    return CorrelationStats(
        expected=moments.mean * ei / np.sqrt(moments.second_moment * ei2),
        variance=moments.variance / (c * image.nm * moments.second_moment),
        channel_count=c,
        nm=image.nm,
        r_mean=moments.mean,
        r_variance=moments.variance,
        r_second_moment=moments.second_moment,
        i_mean=ei,
        i_second_moment=ei2,
    )


def _check_shapes(basis: RandomBasis, image: AnyImage) -> None:
    spec = basis.spec
    if (spec.n, spec.m) != image.shape:
        raise ValueError(f"basis masks are {spec.n}x{spec.m} but image is {image.shape}")
    if spec.channels != image.channels:
        raise ValueError(f"basis has {spec.channels} channels but image has {image.channels}")


def bucket_signals(basis: RandomBasis, image: AnyImage, threads: int | None = None) -> np.ndarray:
    """Raw inner products ``R_k . I`` for every mask."""
    _check_shapes(basis, image)
    flat = image.flat()
    return np.concatenate(basis.map_blocks(lambda k0, blk: blk @ flat, threads=threads))


def pseudo_correlation(basis: RandomBasis, image: AnyImage, threads: int | None = None) -> np.ndarray:
    """``C_k = R_k . I / (c nm sqrt(E[R^2] E[I^2]))`` for every mask."""
    _check_image(image)
    mom = basis.moments
    scale = 1.0 / (image.channels * image.nm * np.sqrt(mom.second_moment * image.second_moment))
    return bucket_signals(basis, image, threads) * scale


def color_pseudo_correlation(basis: RandomBasis, image: ColorImage,
                             threads: int | None = None) -> np.ndarray:
    """Global colour pseudo-correlation, pooling all channels."""
    if basis.spec.channels != image.channels:
        raise ValueError(f"basis has {basis.spec.channels} channels but image has {image.channels}")
    return pseudo_correlation(basis, image, threads)


def channel_correlations(basis: RandomBasis, image: ColorImage,
                         threads: int | None = None) -> tuple[np.ndarray, list[CorrelationStats]]:
    """Per-channel pseudo-correlations ``(N, c)`` and the matching per-channel statistics."""
    _check_shapes(basis, image)
    c, nm = image.channels, image.nm
    mom = basis.moments
    chans = image.channel_images
    for ch in chans:
        _check_image(ch)
    norms = np.array([nm * np.sqrt(mom.second_moment * ch.second_moment) for ch in chans])
    flat = image.flat()

    def per_block(k0, blk):
        prod = (blk * flat).reshape(blk.shape[0], c, nm).sum(axis=2)
        return prod / norms

    cors = np.concatenate(basis.map_blocks(per_block, threads=threads))
    return cors, [correlation_stats(mom, ch) for ch in chans]


@dataclass
class TrueCorrelation:
    exact: np.ndarray
    first_order: np.ndarray
    second_order: np.ndarray
    pseudo: np.ndarray


def true_correlation(basis: RandomBasis, image: Image, threads: int | None = None) -> TrueCorrelation:
    """Exact normalized correlation of each mask with the image, plus its series approximations.

    The series expand ``1/sqrt(sum R^2)`` about ``nm E[R^2]``; the first-order
    term is ``(3/2) C - (R.I)(sum R^2) / (2 (nm)^2 sqrt(E[I^2] E[R^2]^3))``.
    """
    _check_image(image)
    _check_shapes(basis, image)
    flat = image.flat()

    def per_block(k0, blk):
        return blk @ flat, np.einsum("ij,ij->i", blk, blk)

    parts = basis.map_blocks(per_block, threads=threads)
    dots = np.concatenate([p[0] for p in parts])
    sq = np.concatenate([p[1] for p in parts])
    if np.any(sq == 0):
        bad = int(np.flatnonzero(sq == 0)[0])
        raise ValueError(f"mask {bad} has zero norm")
    L = image.nm
    mom = basis.moments
    i_norm2 = float(flat @ flat)
    exact = dots / np.sqrt(sq * i_norm2)
    pseudo = dots / (L * np.sqrt(mom.second_moment * image.second_moment))
    eps = sq / (L * mom.second_moment) - 1.0
    first = pseudo * (1.0 - 0.5 * eps)
    second = first + 0.375 * eps**2 * pseudo
    return TrueCorrelation(exact=np.clip(exact, -1.0, 1.0), first_order=first,
                           second_order=second, pseudo=pseudo)


def first_order_correction(moments: DistributionMoments, image: Image) -> float:
    """Expected first-order shift ``E[C~] - E[C]`` from normalizing by each mask's own norm."""
    return -image.mean * (moments.third_moment - moments.second_moment * moments.mean) / (
        2.0 * image.nm * np.sqrt(image.second_moment * moments.second_moment**3))


def mills_factor(x: float) -> float:
    """``exp(-X^2) / erfc(X)``, stable for large positive X."""
    return 1.0 / special.erfcx(x)


def kept_fraction(x: float) -> float:
    return 0.5 * special.erfc(x)


def xi_factor(x: float) -> float:
    """``exp(-X^2) / (sqrt(2 pi) f(X))``."""
    return 2.0 * mills_factor(x) / np.sqrt(2.0 * np.pi)


def expected_filtered_correlation(stats: CorrelationStats, cutoff: float) -> float:
    """Mean of the Gaussian correlation model above ``cutoff``."""
    x = stats.x_of(cutoff)
    if x > MAX_CUTOFF_X:
        raise ValueError(f"cutoff too extreme (X = {x:.3g} > {MAX_CUTOFF_X})")
    if x == -np.inf:
        return stats.expected
    return stats.expected + np.sqrt(2.0 * stats.variance / np.pi) * mills_factor(x)


@dataclass
class FilterSelection:
    """Masks surviving a pseudo-correlation cutoff and the derived scaling constants.

    ``gamma`` uses the empirical mean of the kept correlations;
    ``gamma_predicted`` and ``xi`` use the Gaussian model at ``x``.
    """

    cutoff: float
    x: float
    kept_fraction: float
    kept_indices: np.ndarray
    n_kept: int
    n_total: int
    gamma: float
    gamma_predicted: float
    xi: float
    mean_kept: float
    mean_kept_predicted: float
    details: dict = field(default_factory=dict)

    @property
    def empirical_fraction(self) -> float:
        return self.n_kept / self.n_total

    def binomial_sigma(self) -> float:
        f = self.kept_fraction
        return float(np.sqrt(self.n_total * f * (1.0 - f)))


def _selection(kept: np.ndarray, correlations: np.ndarray, stats: CorrelationStats,
               cutoff: float, x: float, f: float) -> FilterSelection:
    if kept.size == 0:
        raise ValueError("no masks survive cutoff")
    mean_kept = float(correlations[kept].mean())
    if x > MAX_CUTOFF_X:
        predicted, xi = float("nan"), float("nan")
    else:
        predicted = expected_filtered_correlation(stats, stats.cutoff_at(x)) if np.isfinite(x) else stats.expected
        xi = xi_factor(x) if np.isfinite(x) else 0.0
    return FilterSelection(
        cutoff=float(cutoff), x=float(x), kept_fraction=float(f),
        kept_indices=kept, n_kept=int(kept.size), n_total=int(correlations.size),
        gamma=(mean_kept - stats.expected) * stats.norm_ratio,
        gamma_predicted=(predicted - stats.expected) * stats.norm_ratio,
        xi=float(xi), mean_kept=mean_kept, mean_kept_predicted=float(predicted),
    )


def filter_basis(correlations: Sequence[float], stats: CorrelationStats, cutoff: float) -> FilterSelection:
    """Keep every mask with ``C_k >= cutoff``."""
    correlations = np.asarray(correlations, dtype=np.float64)
    if np.isnan(cutoff) or cutoff == np.inf:
        raise ValueError("cutoff must be finite or -inf")
    kept = np.flatnonzero(correlations >= cutoff)
    x = stats.x_of(cutoff) if np.isfinite(cutoff) else -np.inf
    return _selection(kept, correlations, stats, cutoff, x, kept_fraction(x))


def filter_independent(channel_cors: np.ndarray, channel_stats: Sequence[CorrelationStats],
                       global_cors: np.ndarray, global_stats: CorrelationStats) -> FilterSelection:
    """Keep masks whose correlation exceeds its expectation in every channel.

    The returned selection is expressed in terms of the global colour
    correlation; ``x`` is the effective cutoff with the same kept fraction.
    """
    channel_cors = np.asarray(channel_cors)
    expected = np.array([s.expected for s in channel_stats])
    kept = np.flatnonzero(np.all(channel_cors >= expected, axis=1))
    f = 0.5 ** len(channel_stats)
    x = float(special.erfcinv(2.0 * f))
    sel = _selection(kept, np.asarray(global_cors), global_stats, global_stats.cutoff_at(x), x, f)
    sel.details["mode"] = "independent"
    return sel
