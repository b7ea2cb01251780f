"""A set of ``n + 1`` vectors in ``n`` dimensions that represents every vector
with non-negative coefficients.

The construction starts from ``{(1), (-1)}`` in one dimension.  Each step
appends a zero column to every vector and replaces the last vector by two
copies whose new final entry is ``+sqrt(3)`` and ``-sqrt(3)``.  A strictly
positive row vector ``T`` with ``T B = 0`` certifies that zero is a positive
combination, which is what makes the induction work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optimize import lawson_hanson

MAX_DIMENSION = 32
SPLIT = np.sqrt(3.0)


class RepresentationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NonNegBasis:
    vectors: np.ndarray

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2 or v.shape[0] != v.shape[1] + 1:
            raise ValueError("a non-negative basis has exactly n + 1 vectors of length n")

    def combine(self, weights: np.ndarray) -> np.ndarray:
        return np.asarray(weights, dtype=float) @ self.vectors


@dataclass(frozen=True)
class ZeroTransform:
    t: np.ndarray

    def __post_init__(self):
        if np.any(self.t <= 0):
            raise ValueError("zero transform entries must be positive")

    def apply(self, basis: NonNegBasis) -> np.ndarray:
        return self.t @ basis.vectors


def _check_dimension(n: int) -> None:
    if n < 1:
        raise ValueError("dimension must be at least 1")
    if n > MAX_DIMENSION:
        raise ValueError(f"dimension {n} above the supported cap of {MAX_DIMENSION}")


def construct(n: int) -> NonNegBasis:
    _check_dimension(n)
    B = np.array([[1.0], [-1.0]])
    for _ in range(1, n):
        rows = np.hstack([B, np.zeros((B.shape[0], 1))])
        last = rows[-1]
        plus, minus = last.copy(), last.copy()
        plus[-1], minus[-1] = SPLIT, -SPLIT
        B = np.vstack([rows[:-1], plus, minus])
    return NonNegBasis(B)


def zero_transform(n: int) -> ZeroTransform:
    """``(2^(n-1), ..., 4, 2, 1, 1)``.

    The two split vectors sum to twice the vector they replace, so each step
    keeps the old weights on the unchanged vectors, doubled, and gives each
    split copy the old last weight.
    """
    _check_dimension(n)
    t = np.array([1.0, 1.0])
    for _ in range(1, n):
        t = np.concatenate([2.0 * t[:-1], t[-1:], t[-1:]])
    return ZeroTransform(t)


def linear_zero_transform(n: int) -> np.ndarray:
    """The arithmetic row ``(n, n-1, ..., 2, 1, 1)``.

    It coincides with :func:`zero_transform` for ``n <= 2`` only; kept to show
    that it does not annihilate the basis beyond that.
    """
    _check_dimension(n)
    return np.concatenate([np.arange(n, 0, -1, dtype=float), [1.0]])


def certified_weights(n: int) -> dict[str, np.ndarray]:
    """Non-negative weights from the inductive construction for ``+e_i``, ``-e_i`` and zero.

    Keys are ``"+i"``, ``"-i"`` (1-based) and ``"0"``.
    """
    _check_dimension(n)
    weights = {"+1": np.array([1.0, 0.0]), "-1": np.array([0.0, 1.0]), "0": np.array([1.0, 1.0])}
    for k in range(1, n):
        t = zero_transform(k).t
        grown = {}
        for key, w in weights.items():
            if key == "0":
                continue
            # the old last vector is half the sum of its two split copies
            grown[key] = np.concatenate([w[:-1], [0.5 * w[-1], 0.5 * w[-1]]])
        grown[f"+{k + 1}"] = np.concatenate([t[:-1], [t[-1], 0.0]]) / SPLIT
        grown[f"-{k + 1}"] = np.concatenate([t[:-1], [0.0, t[-1]]]) / SPLIT
        grown["0"] = zero_transform(k + 1).t
        weights = grown
    return weights


def verify_nonneg_representation(basis: NonNegBasis, v, tol: float = 1e-8) -> np.ndarray:
    """Non-negative ``w`` with ``w B = v``, found by NNLS.

    Raises :class:`RepresentationError` when the residual exceeds
    ``tol (1 + |v|)``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (basis.n,):
        raise ValueError("vector dimension does not match the basis")
    result = lawson_hanson(basis.vectors.T, v, tol=1e-14)
    residual = float(np.linalg.norm(basis.combine(result.weights) - v))
    if residual >= tol * (1.0 + np.linalg.norm(v)):
        raise RepresentationError(f"representation not found (residual {residual:.3e})")
    return result.weights


def nnls_residual(vectors: np.ndarray, v) -> float:
    """Smallest ``|w V - v|`` over ``w >= 0`` for an arbitrary set of row vectors."""
    v = np.asarray(v, dtype=float)
    result = lawson_hanson(np.asarray(vectors, dtype=float).T, v, tol=1e-14)
    return float(np.linalg.norm(result.weights @ vectors - v))
