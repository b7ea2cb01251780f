"""Numerically derived exposures: non-negative least squares and shot-noise-aware ascent.

Masks are vectorized row-major and mean-subtracted to form the columns of
``M``; the pedestal then drops out and the problem is ``min |M w - I|`` over
``w >= 0`` for a zero-mean target ``I``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .basis import DEFAULT_MEMORY_CAP, RandomBasis
from .correlate import Image
from .schemes import ExposurePlan

log = logging.getLogger(__name__)


@dataclass
class WeightProblem:
    """Mean-subtracted design matrix, zero-mean target and the mask means that set the pedestal."""

    design: np.ndarray
    target: np.ndarray
    column_means: np.ndarray
    shape: tuple
    image_mean: float = 0.0

    @property
    def nm(self) -> int:
        return self.design.shape[0]

    @property
    def N(self) -> int:
        return self.design.shape[1]

    @property
    def target_second_moment(self) -> float:
        return float(np.mean(self.target**2))

    def residual(self, w: np.ndarray) -> np.ndarray:
        return self.design @ w - self.target

    def snr(self, w: np.ndarray) -> float:
        """``sqrt(E[I^2] / Var[M w - I])``, infinite for an exact fit."""
        var = float(np.var(self.residual(w)))
        return float("inf") if var == 0 else float(np.sqrt(self.target_second_moment / var))

    def pedestal(self, w: np.ndarray) -> float:
        return float(self.column_means @ w)


def build_design(basis: RandomBasis, image: Image, memory_cap: int = DEFAULT_MEMORY_CAP) -> WeightProblem:
    spec = basis.spec
    if (spec.n, spec.m) != image.shape or spec.channels != 1:
        raise ValueError("basis and image dimensions disagree")
    if not basis.materialized and spec.N * spec.mask_size * 8 > memory_cap:
        raise MemoryError("numeric optimization needs the basis in memory; it exceeds the cap")
    if not image.zero_centered:
        warnings.warn("target image is not zero-centred; subtracting its mean", stacklevel=2)
    masks = basis.flat()
    means = masks.mean(axis=1)
    design = np.asfortranarray((masks - means[:, None]).T)
    target = image.flat() - image.mean
    return WeightProblem(design, target, means, image.shape, image.mean)


class NNLSConvergenceError(RuntimeError):
    def __init__(self, message: str, best: "NNLSResult"):
        super().__init__(message)
        self.best = best


@dataclass
class NNLSResult:
    weights: np.ndarray
    residual_norm: float
    iterations: int
    kkt_violation: float
    tolerance: float
    n_nonzero: int
    trace: list = field(default_factory=list)


class _ActiveFactor:
    """Upper-triangular factor ``R`` of the Gram matrix of the passive columns, with append and delete."""

    def __init__(self, M: np.ndarray, capacity: int):
        self.M = M
        self.cols = np.empty((M.shape[0], capacity), order="F")
        self.R = np.zeros((capacity, capacity))
        self.index: list[int] = []

    @property
    def p(self) -> int:
        return len(self.index)

    def append(self, j: int, dependence_tol: float) -> bool:
        p = self.p
        col = self.M[:, j]
        c = float(col @ col)
        if p:
            g = self.cols[:, :p].T @ col
            r = solve_triangular(self.R[:p, :p], g, trans="T", check_finite=False)
            d2 = c - float(r @ r)
        else:
            r, d2 = np.empty(0), c
        if d2 <= dependence_tol * c:
            return False
        self.R[:p, p] = r
        self.R[p, p] = np.sqrt(d2)
        self.R[p, :p] = 0.0
        self.cols[:, p] = col
        self.index.append(j)
        return True

    def delete(self, pos: int) -> None:
        p = self.p
        Rk = np.delete(self.R[:p, :p], pos, axis=1)
        for q in range(pos, p - 1):
            a, b = Rk[q, q], Rk[q + 1, q]
            h = np.hypot(a, b)
            c, s = a / h, b / h
            r0 = Rk[q, q:].copy()
            r1 = Rk[q + 1, q:]
            Rk[q, q:] = c * r0 + s * r1
            Rk[q + 1, q:] = -s * r0 + c * r1
        self.R[:p - 1, :p - 1] = Rk[:p - 1]
        self.R[p - 1, :] = 0.0
        self.R[:, p - 1] = 0.0
        self.cols[:, pos:p - 1] = self.cols[:, pos + 1:p]
        del self.index[pos]

    def solve(self, b: np.ndarray, q: np.ndarray | None, refine: int = 1) -> np.ndarray:
        """Minimize ``|A z - b|^2 / 2 + q.z`` over the passive columns ``A``, with iterative refinement."""
        p = self.p
        A = self.cols[:, :p]
        R = np.asfortranarray(self.R[:p, :p])
        rhs = A.T @ b
        if q is not None:
            rhs = rhs - q[self.index]

        def gram_solve(v):
            y = solve_triangular(R, v, trans="T", check_finite=False)
            return solve_triangular(R, y, check_finite=False)

        z = gram_solve(rhs)
        for _ in range(refine):
            z += gram_solve(rhs - A.T @ (A @ z))
        return z


def lawson_hanson(M: np.ndarray, b: np.ndarray, q: np.ndarray | None = None, tol: float | None = None,
                  max_iter: int | None = None, dependence_tol: float = 1e-14,
                  trace: bool = False) -> NNLSResult:
    """Active-set solution of ``min |M w - b|^2 / 2 + q.w`` subject to ``w >= 0``.

    ``q = None`` is plain non-negative least squares.  Convergence is declared
    when no zero-weight column has a descent slope above
    ``tol`` (default ``1e-10 |M^T b|_inf``).
    """
    M = np.asarray(M, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    nm, N = M.shape
    h0 = M.T @ b
    if q is not None:
        q = np.asarray(q, dtype=np.float64)
        h0 = h0 - q
    scale = float(np.max(np.abs(M.T @ b))) if N else 0.0
    if tol is None:
        tol = 1e-10 * max(scale, np.finfo(float).tiny)
    if max_iter is None:
        max_iter = 10 * max(N, 1)
    w = np.zeros(N)
    passive = np.zeros(N, dtype=bool)
    skip = np.zeros(N, dtype=bool)
    factor = _ActiveFactor(M, min(nm, N) + 1)
    steps: list = []

    def slopes(w_current):
        g = M.T @ (b - factor.cols[:, :factor.p] @ w_current[factor.index]) if factor.p else M.T @ b.copy()
        return g - q if q is not None else g

    def swap(t: int) -> bool:
        # t lies in the span of the passive columns, so moving along the null
        # direction keeps M w fixed while the linear term falls; walk until a
        # passive weight reaches zero and exchange that column for t
        d_s = -factor.solve(M[:, t], None)
        idx = np.array(factor.index)
        if np.linalg.norm(factor.cols[:, :factor.p] @ d_s + M[:, t]) > 1e-8 * np.linalg.norm(M[:, t]):
            return False
        if q[t] + q[idx] @ d_s >= 0:
            return False
        neg = d_s < 0
        if not neg.any():
            raise ValueError("objective is unbounded below along a non-negative direction")
        ratios = np.where(neg, w[idx] / np.where(neg, -d_s, 1.0), np.inf)
        hit = int(np.argmin(ratios))
        alpha = float(ratios[hit])
        w[idx] += alpha * d_s
        w[idx[hit]] = 0.0
        passive[idx[hit]] = False
        factor.delete(hit)
        if not factor.append(t, dependence_tol):
            raise NNLSConvergenceError("column exchange left a dependent active set",
                                       _result(M, b, q, w, it, tol, steps))
        w[t] = alpha
        passive[t] = True
        return True

    d = slopes(w)
    it = 0
    while True:
        cand = np.where(passive | skip, -np.inf, d)
        t = int(np.argmax(cand))
        if cand[t] <= tol:
            break
        it += 1
        if it > max_iter:
            best = _result(M, b, q, w, it, tol, steps)
            raise NNLSConvergenceError(f"NNLS did not converge in {max_iter} iterations", best)
        if factor.p < min(nm, N) and factor.append(t, dependence_tol):
            passive[t] = True
            z = factor.solve(b, q)
            new_pos = factor.p - 1
            if z[new_pos] <= 0:
                # rounding can defeat the guaranteed positive step; drop the column
                factor.delete(new_pos)
                passive[t] = False
                skip[t] = True
                continue
        elif q is not None and swap(t):
            z = factor.solve(b, q)
        else:
            skip[t] = True
            continue
        while factor.p and np.any(z <= 0):
            idx = np.array(factor.index)
            wp = w[idx]
            neg = z <= 0
            ratios = np.where(neg, wp / np.where(neg, wp - z, 1.0), np.inf)
            hit = int(np.argmin(ratios))
            wp = wp + ratios[hit] * (z - wp)
            wp[hit] = 0.0
            drop = np.flatnonzero(wp <= 1e-14 * np.max(np.abs(wp)))
            w[idx] = wp
            for pos in drop[::-1]:
                j = factor.index[pos]
                w[j] = 0.0
                passive[j] = False
                factor.delete(int(pos))
            skip[:] = False
            z = factor.solve(b, q) if factor.p else np.empty(0)
        w[:] = 0.0
        w[factor.index] = z
        d = slopes(w)
        if trace:
            steps.append((it, factor.p, float(np.linalg.norm(M @ w - b))))
    return _result(M, b, q, w, it, tol, steps)


def _result(M, b, q, w, it, tol, steps) -> NNLSResult:
    r = M @ w - b
    g = M.T @ r
    if q is not None:
        g = g + q
    pos = w > 0
    viol_pos = float(np.max(np.abs(g[pos]))) if pos.any() else 0.0
    viol_zero = float(np.max(np.maximum(-g[~pos], 0.0))) if (~pos).any() else 0.0
    return NNLSResult(w.copy(), float(np.linalg.norm(r)), it, max(viol_pos, viol_zero), float(tol),
                      int(np.count_nonzero(w)), steps)


def nnls(problem: WeightProblem, tol: float | None = None, max_iter: int | None = None) -> ExposurePlan:
    """Least-squares non-negative exposures; the solver report is in ``plan.details``."""
    res = lawson_hanson(problem.design, problem.target, tol=tol, max_iter=max_iter)
    return _plan(problem, res.weights, "nnls", res)


def poisson_optimal(problem: WeightProblem, photons: float) -> ExposurePlan:
    """Exact minimizer of the shot-noise objective, solved as an active-set problem.

    Minimizing ``|M w - I|^2 / nm + c.w / lambda`` equals the linear-term
    problem with ``q = nm c / (2 lambda)``.
    """
    q = problem.nm * problem.column_means / (2.0 * photons)
    res = lawson_hanson(problem.design, problem.target, q=q)
    return _plan(problem, res.weights, "poisson-optimal", res)


def _plan(problem: WeightProblem, w: np.ndarray, scheme: str, res: NNLSResult | None = None,
          **extra) -> ExposurePlan:
    details = {"snr": problem.snr(w), "n_nonzero": int(np.count_nonzero(w)), **extra}
    if res is not None:
        details.update(residual_norm=res.residual_norm, iterations=res.iterations,
                       kkt_violation=res.kkt_violation, tolerance=res.tolerance)
    return ExposurePlan.dense(w, problem.pedestal(w), scheme, **details)


# --------------------------------------------------------------------------- gradient ascent


@dataclass
class PoissonObjective:
    """Global SNR under shot noise, ``sqrt(E[I^2] / F)`` with ``F = |M w - I|^2 / nm + c.w / lambda``."""

    problem: WeightProblem
    photons: float

    def noise(self, w: np.ndarray) -> float:
        r = self.problem.residual(w)
        return float(r @ r) / self.problem.nm + float(self.problem.column_means @ w) / self.photons

    def noise_gradient(self, w: np.ndarray, residual: np.ndarray | None = None) -> np.ndarray:
        r = self.problem.residual(w) if residual is None else residual
        return (2.0 / self.problem.nm) * (self.problem.design.T @ r) + self.problem.column_means / self.photons

    def snr(self, w: np.ndarray) -> float:
        return float(np.sqrt(self.problem.target_second_moment / self.noise(w)))

    def snr_gradient(self, w: np.ndarray) -> np.ndarray:
        F = self.noise(w)
        return -0.5 * np.sqrt(self.problem.target_second_moment) * F**-1.5 * self.noise_gradient(w)


def gradient_check(objective: PoissonObjective, w: np.ndarray, coords: np.ndarray,
                   h: float = 1e-6) -> float:
    """Largest central-difference error on ``coords``, relative to the largest analytic slope there."""
    g = objective.snr_gradient(w)[coords]
    fd = np.empty(coords.size)
    for i, k in enumerate(coords):
        e = np.zeros_like(w)
        e[k] = h
        fd[i] = (objective.snr(w + e) - objective.snr(w - e)) / (2 * h)
    return float(np.max(np.abs(fd - g)) / np.max(np.abs(g)))


def gradient_ascent_poisson(problem: WeightProblem, photons: float, w0: ExposurePlan | np.ndarray,
                            max_iter: int = 20000, window: int = 50, rel_tol: float = 1e-6,
                            check_coords: int = 16, seed: int = 0) -> ExposurePlan:
    """Projected gradient ascent of the shot-noise SNR from a feasible start.

    Steps follow the Barzilai-Borwein length with Armijo backtracking (halving)
    and projection onto ``w >= 0``; the first trial step is ``1 / |M|_F^2``.
    Stops when SNR improves by less than ``rel_tol`` relative over ``window``
    iterations.
    """
    if not photons > 0:
        raise ValueError("photons per pixel must be positive")
    w = np.asarray(w0.exposures if isinstance(w0, ExposurePlan) else w0, dtype=np.float64).copy()
    if w.shape != (problem.N,):
        raise ValueError("starting weights must cover every column")
    if np.any(w < 0):
        raise ValueError("starting weights must be non-negative")
    obj = PoissonObjective(problem, photons)
    rng = np.random.default_rng(seed)
    coords = rng.choice(problem.N, size=min(check_coords, problem.N), replace=False)
    grad_err = gradient_check(obj, w, coords)

    r = problem.residual(w)
    F = float(r @ r) / problem.nm + float(problem.column_means @ w) / photons
    g = obj.noise_gradient(w, r)
    step = 1.0 / float(np.sum(problem.design**2))
    history = [float(np.sqrt(problem.target_second_moment / F))]
    start_snr = history[0]
    it = 0
    for it in range(1, max_iter + 1):
        if not np.isfinite(F):
            raise FloatingPointError("non-finite objective")
        while True:
            w_new = np.maximum(w - step * g, 0.0)
            dw = w_new - w
            r_new = problem.design @ w_new - problem.target
            F_new = float(r_new @ r_new) / problem.nm + float(problem.column_means @ w_new) / photons
            if F_new <= F + 1e-4 * float(g @ dw) or step < 1e-300:
                break
            step *= 0.5
        if not np.isfinite(F_new):
            raise FloatingPointError("non-finite objective")
        if F_new > F:
            break
        g_new = obj.noise_gradient(w_new, r_new)
        y = g_new - g
        sy = float(dw @ y)
        step = float(dw @ dw) / sy if sy > 0 else step * 2.0
        w, r, F, g = w_new, r_new, F_new, g_new
        history.append(float(np.sqrt(problem.target_second_moment / F)))
        if it >= window and (history[-1] - history[-1 - window]) < rel_tol * history[-1 - window]:
            break
        if not np.any(dw):
            break
    return _plan(problem, w, "ga-poisson", None, photons=photons, iterations=it,
                 poisson_snr=history[-1], start_poisson_snr=start_snr,
                 gradient_error=grad_err, history=history)
