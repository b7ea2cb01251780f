"""Random-matrix bases: counter-based generation, moments and offset relations.

Mask ``k`` of a basis is a pure function of ``(master_seed, k)``.  Every entry
is drawn from a fixed position of a Philox stream keyed by the master seed, so
a block of masks generated in one call is bit-identical to the same masks
generated one at a time, in any order, on any number of threads.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate, special

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("uniform01", "binary01", "truncated-gaussian")

DEFAULT_MEMORY_CAP = 2 * 1024**3
DEFAULT_CHUNK = 4096

# Philox counters are 256 bit; the top word separates independent streams.
_STREAM_SHIFT = 192
STREAM_BASIS = 0
STREAM_EXPOSURE = 1
STREAM_POISSON = 2
STREAM_SAMPLING = 3


def philox_uniform(seed: int, start: int, count: int, stream: int = STREAM_BASIS) -> np.ndarray:
    """Uniform doubles at positions ``[start, start + count)`` of a keyed stream."""
    block, skip = divmod(int(start), 4)
    counter = (int(stream) << _STREAM_SHIFT) + block
    gen = np.random.Generator(np.random.Philox(key=int(seed) & (2**128 - 1), counter=counter))
    out = gen.random(count + skip)
    return out[skip:] if skip else out


def philox_generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=int(seed) & (2**128 - 1), counter=int(stream) << _STREAM_SHIFT)
    )


@dataclass(frozen=True)
class BasisSpec:
    """Shape, size, value distribution and seed of a random-matrix basis."""

    n: int
    m: int
    N: int
    distribution: str = "uniform01"
    master_seed: int = 0
    mu: float = 0.5
    sigma: float = 0.1
    channels: int = 1

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.N < 1 or self.channels < 1:
            raise ValueError(f"basis dimensions must be positive: {self}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unsupported distribution {self.distribution!r}")
        if self.distribution == "truncated-gaussian" and self.sigma <= 0:
            raise ValueError("truncated-gaussian needs sigma > 0")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @property
    def nm(self) -> int:
        return self.n * self.m

    @property
    def mask_size(self) -> int:
        """Number of values per mask (all channels)."""
        return self.channels * self.n * self.m

    @property
    def mask_shape(self) -> tuple[int, ...]:
        if self.channels == 1:
            return (self.n, self.m)
        return (self.channels, self.n, self.m)

    def with_size(self, N: int) -> "BasisSpec":
        return BasisSpec(self.n, self.m, N, self.distribution, self.master_seed,
                         self.mu, self.sigma, self.channels)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "N": self.N, "distribution": self.distribution,
            "master_seed": self.master_seed, "mu": self.mu, "sigma": self.sigma,
            "channels": self.channels,
        }


@dataclass(frozen=True)
class DistributionMoments:
    mean: float
    variance: float
    second_moment: float
    square_variance: float
    product_variance: float
    third_moment: float

    @classmethod
    def from_raw(cls, raw: Sequence[float]) -> "DistributionMoments":
        """Build from raw moments ``E[R], E[R^2], E[R^3], E[R^4]``."""
        m1, m2, m3, m4 = (float(v) for v in raw)
        return cls(
            mean=m1,
            variance=m2 - m1 * m1,
            second_moment=m2,
            square_variance=m4 - m2 * m2,
            product_variance=m2 * m2 - m1**4,
            third_moment=m3,
        )


def _clipped_gaussian_raw(mu: float, sigma: float) -> list[float]:
    # point masses at 0 and 1 from clipping plus the density on (0, 1)
    upper_mass = special.ndtr((mu - 1.0) / sigma)
    raw = []
    for p in (1, 2, 3, 4):
        body, _ = integrate.quad(
            lambda r: r**p * np.exp(-0.5 * ((r - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi)),
            0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200,
        )
        raw.append(body + upper_mass)
    return raw


def moments(spec: BasisSpec) -> DistributionMoments:
    """Analytic moments of the mask value distribution."""
    if spec.distribution == "uniform01":
        return DistributionMoments.from_raw([1 / 2, 1 / 3, 1 / 4, 1 / 5])
    if spec.distribution == "binary01":
        return DistributionMoments.from_raw([1 / 2, 1 / 2, 1 / 2, 1 / 2])
    if spec.distribution == "truncated-gaussian":
        return DistributionMoments.from_raw(_clipped_gaussian_raw(spec.mu, spec.sigma))
    raise ValueError(f"unsupported distribution {spec.distribution!r}")


def _transform(spec: BasisSpec, u: np.ndarray) -> np.ndarray:
    if spec.distribution == "uniform01":
        return u
    if spec.distribution == "binary01":
        # u >= 1/2 exactly when the top bit of the raw word is set
        return (u >= 0.5).astype(np.float64)
    z = special.ndtri(u)
    z *= spec.sigma
    z += spec.mu
    return np.clip(z, 0.0, 1.0, out=z)


def generate_block(spec: BasisSpec, k0: int, k1: int) -> np.ndarray:
    """Masks ``k0 .. k1-1`` as a ``(k1 - k0, mask_size)`` array."""
    if not 0 <= k0 <= k1 <= spec.N:
        raise IndexError(f"mask range [{k0}, {k1}) outside basis of size {spec.N}")
    L = spec.mask_size
    u = philox_uniform(spec.master_seed, k0 * L, (k1 - k0) * L)
    return _transform(spec, u).reshape(k1 - k0, L)


class RandomBasis:
    """Handle on ``N`` random masks, either materialized or regenerated on demand.

    Blocks are ``(count, mask_size)`` arrays with each mask flattened row-major
    (channel, row, column).
    """

    def __init__(self, spec: BasisSpec, values: np.ndarray | None = None,
                 chunk: int = DEFAULT_CHUNK, threads: int = 1):
        self.spec = spec
        self.chunk = int(chunk)
        self.threads = int(threads)
        self._values = None
        if values is not None:
            values = np.asarray(values, dtype=np.float64).reshape(spec.N, spec.mask_size)
            self._values = values
        self._imported = False

    @classmethod
    def from_array(cls, values: np.ndarray, spec: BasisSpec) -> "RandomBasis":
        basis = cls(spec, values=values)
        basis._imported = True
        return basis

    @property
    def materialized(self) -> bool:
        return self._values is not None

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def nm(self) -> int:
        return self.spec.nm

    @property
    def moments(self) -> DistributionMoments:
        return moments(self.spec)

    def block(self, k0: int, k1: int) -> np.ndarray:
        if self._values is not None:
            return self._values[k0:k1]
        return generate_block(self.spec, k0, k1)

    def mask(self, k: int) -> np.ndarray:
        return self.block(k, k + 1)[0].reshape(self.spec.mask_shape)

    def flat(self) -> np.ndarray:
        """All masks as ``(N, mask_size)``; generates them if streaming."""
        if self._values is not None:
            return self._values
        return generate_block(self.spec, 0, self.N)

    def ranges(self, chunk: int | None = None) -> list[tuple[int, int]]:
        c = chunk or self.chunk
        return [(k, min(k + c, self.N)) for k in range(0, self.N, c)]

    def iter_blocks(self, chunk: int | None = None) -> Iterator[tuple[int, np.ndarray]]:
        for k0, k1 in self.ranges(chunk):
            yield k0, self.block(k0, k1)

    def map_blocks(self, fn: Callable[[int, np.ndarray], object], threads: int | None = None,
                   chunk: int | None = None) -> list:
        """Apply ``fn(k0, block)`` to every block; results come back in block order.

        Block boundaries depend only on ``chunk``, never on the thread count, so
        reductions over the returned list are identical for any ``threads``.
        """
        threads = self.threads if threads is None else threads
        ranges = self.ranges(chunk)
        work = lambda r: fn(r[0], self.block(*r))  # noqa: E731
        if threads == 1 or len(ranges) == 1:
            return [work(r) for r in ranges]
        with ThreadPoolExecutor(max_workers=threads if threads > 0 else None) as pool:
            return list(pool.map(work, ranges))

    def subset(self, indices: np.ndarray) -> np.ndarray:
        """Masks at sorted ``indices`` as an array, streaming block by block."""
        indices = np.asarray(indices, dtype=np.int64)
        if self._values is not None:
            return self._values[indices]
        out = np.empty((indices.size, self.spec.mask_size))
        pos = 0
        for k0, k1 in self.ranges():
            lo, hi = np.searchsorted(indices, [k0, k1])
            if hi > lo:
                blk = self.block(k0, k1)
                out[pos:pos + hi - lo] = blk[indices[lo:hi] - k0]
                pos += hi - lo
        return out

    def __repr__(self):
        mode = "materialized" if self.materialized else "streaming"
        return f"RandomBasis({self.spec}, {mode})"


def make_basis(spec: BasisSpec, materialize: bool = True,
               memory_cap: int = DEFAULT_MEMORY_CAP, chunk: int = DEFAULT_CHUNK,
               threads: int = 1) -> RandomBasis:
    """Create a basis handle, materializing it when it fits under ``memory_cap`` bytes."""
    nbytes = spec.N * spec.mask_size * 8
    if materialize and nbytes > memory_cap:
        log.info("basis needs %.2f GiB > cap %.2f GiB; streaming instead",
                 nbytes / 1024**3, memory_cap / 1024**3)
        materialize = False
    basis = RandomBasis(spec, chunk=chunk, threads=threads)
    if materialize:
        basis._values = generate_block(spec, 0, spec.N)
    return basis


@dataclass
class RelationReport:
    """Empirical versus predicted mean and variance for one offset relation."""

    offset_mean: float
    predicted_mean: float
    offset_variance: float
    predicted_variance: float
    diagonal_mean: float
    predicted_diagonal_mean: float
    diagonal_variance: float
    predicted_diagonal_variance: float
    samples: int
    diagonal_samples: int
    offset_mean_se: float | None = None
    diagonal_mean_se: float | None = None
    details: dict = field(default_factory=dict)

    def mean_z(self) -> tuple[float, float]:
        """Standardized deviation of both empirical means from prediction.

        Independent samples use ``sqrt(predicted_variance / samples)``; when the
        samples share masks the report carries its own standard errors.
        """
        se_off = self.offset_mean_se or np.sqrt(self.predicted_variance / self.samples)
        se_dia = self.diagonal_mean_se or np.sqrt(self.predicted_diagonal_variance / self.diagonal_samples)
        off = (self.offset_mean - self.predicted_mean) / se_off
        dia = (self.diagonal_mean - self.predicted_diagonal_mean) / se_dia
        return float(off), float(dia)


def orthogonality_report(basis: RandomBasis, pairs: int, seed: int | None = None) -> RelationReport:
    """Normalized mask inner products ``R_k . R_k' / (nm Var[R])`` against the offset relation."""
    if basis.N < 2:
        raise ValueError("orthogonality needs at least two masks")
    mom = basis.moments
    L = basis.spec.mask_size
    rng = philox_generator(basis.spec.master_seed if seed is None else seed, STREAM_SAMPLING)
    if 2 * pairs <= basis.N:
        # disjoint pairs keep the samples independent
        order = rng.permutation(basis.N)[: 2 * pairs]
        a, b = order[0::2], order[1::2]
    else:
        a = rng.integers(0, basis.N, pairs)
        b = (a + rng.integers(1, basis.N, pairs)) % basis.N
    diag_idx = np.unique(np.concatenate([a, b]))
    need = np.unique(np.concatenate([a, b]))
    masks = basis.subset(need)
    pos = {int(k): i for i, k in enumerate(need)}
    Ra = masks[[pos[int(k)] for k in a]]
    Rb = masks[[pos[int(k)] for k in b]]
    scale = 1.0 / (L * mom.variance)
    off = np.einsum("ij,ij->i", Ra, Rb) * scale
    Rd = masks[[pos[int(k)] for k in diag_idx]]
    dia = np.einsum("ij,ij->i", Rd, Rd) * scale
    var_scale = 1.0 / (L * mom.variance**2)
    return RelationReport(
        offset_mean=float(off.mean()),
        predicted_mean=mom.mean**2 / mom.variance,
        offset_variance=float(off.var(ddof=1)),
        predicted_variance=mom.product_variance * var_scale,
        diagonal_mean=float(dia.mean()),
        predicted_diagonal_mean=mom.second_moment / mom.variance,
        diagonal_variance=float(dia.var(ddof=1)),
        predicted_diagonal_variance=mom.square_variance * var_scale,
        samples=int(off.size),
        diagonal_samples=int(dia.size),
    )


def completeness_report(basis: RandomBasis, pixel_pairs: int | None = None,
                        seed: int | None = None) -> RelationReport:
    """Normalized pixel-pair sums ``sum_k R_ijk R_i'j'k / (N Var[R])`` against the offset relation."""
    if basis.N < 2:
        raise ValueError("completeness needs at least two masks")
    mom = basis.moments
    L = basis.spec.mask_size
    gram = np.zeros((L, L))
    # every pixel pair sums over the same masks, so the standard error of the
    # pair-averaged means comes from per-mask averages, not from the pair count
    off_terms, dia_terms = [], []
    for part, o, d in basis.map_blocks(lambda k0, blk: (
            blk.T @ blk,
            (blk.sum(1) ** 2 - np.einsum("ij,ij->i", blk, blk)) / (L * (L - 1)),
            np.einsum("ij,ij->i", blk, blk) / L)):
        gram += part
        off_terms.append(o)
        dia_terms.append(d)
    gram /= basis.N * mom.variance
    off_terms = np.concatenate(off_terms) / mom.variance
    dia_terms = np.concatenate(dia_terms) / mom.variance
    iu = np.triu_indices(L, 1)
    off = gram[iu]
    if pixel_pairs is not None and pixel_pairs < off.size:
        rng = philox_generator(basis.spec.master_seed if seed is None else seed, STREAM_SAMPLING)
        off = off[rng.choice(off.size, pixel_pairs, replace=False)]
    dia = np.diag(gram)
    var_scale = 1.0 / (basis.N * mom.variance**2)
    return RelationReport(
        offset_mean=float(off.mean()),
        predicted_mean=mom.mean**2 / mom.variance,
        offset_variance=float(off.var(ddof=1)),
        predicted_variance=mom.product_variance * var_scale,
        diagonal_mean=float(dia.mean()),
        predicted_diagonal_mean=1.0 + mom.mean**2 / mom.variance,
        diagonal_variance=float(dia.var(ddof=1)),
        predicted_diagonal_variance=mom.square_variance * var_scale,
        samples=int(off.size),
        diagonal_samples=int(dia.size),
        offset_mean_se=float(off_terms.std(ddof=1) / np.sqrt(basis.N)),
        diagonal_mean_se=float(dia_terms.std(ddof=1) / np.sqrt(basis.N)),
    )
