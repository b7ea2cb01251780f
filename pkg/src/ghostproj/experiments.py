"""End-to-end reproductions: build a basis and image, plan exposures, realize and report.

Each runner returns a :class:`Run` holding the plan, the projection, the
report against the target and a flat dictionary of headline numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import cutoff as cutoff_mod
from .basis import BasisSpec, RandomBasis, generate_block, make_basis, moments
from .correlate import (
    ColorImage,
    Image,
    ImageMoments,
    bucket_signals,
    correlation_stats,
    filter_basis,
    kept_fraction,
    pseudo_correlation,
    xi_factor,
)
from .metrics import ProjectionReport, report
from .noise import NoiseModel, predict_snr_filtered_poisson, predict_snr_numeric, realize
from .optimize import build_design, gradient_ascent_poisson, nnls
from .phantom import color_phantom, phantom
from .schemes import (
    PADE_X,
    ExposurePlan,
    Projection,
    accumulate_plan,
    color_projection,
    filtered_projection,
    filtered_linear_projection,
    filtered_snr,
    filtered_variance,
    optimal_shift,
    weighted_pass,
    weighted_snr,
)

log = logging.getLogger(__name__)

SIDE = 40


@dataclass
class Run:
    scheme: str
    image: Image | ColorImage
    plan: ExposurePlan | None
    projection: Projection
    report: ProjectionReport
    values: dict = field(default_factory=dict)


def _run(scheme, image, plan, projection, predicted_variance, scale=None, **values) -> Run:
    rep = report(projection, image, predicted_variance, scale=scale)
    values = {"snr_simulated": rep.snr_global, "pedestal_observed": rep.pedestal_observed,
              "pedestal_predicted": rep.pedestal_predicted, **values}
    return Run(scheme, image, plan, projection, rep, values)


# --------------------------------------------------------------------------- weighted


def weighted_runs(basis: RandomBasis, image: Image, shift: str = "statistical",
                  threads: int = 1) -> tuple[Run, Run | None]:
    """Plain and shifted weighted projections from one streaming pass (``shift = "none"`` skips the second)."""
    wp = weighted_pass(basis, image, threads)
    mom, N = basis.moments, basis.N
    plan, proj = wp.result()
    pred = weighted_snr(mom, image, N)
    plain = _run("weighted", image, plan, proj, pred.variance, snr_predicted=pred.snr)
    if shift == "none":
        return plain, None
    exact = wp.exact_shift()
    chosen = exact if shift == "exact" else optimal_shift(mom, image, N)
    plan_s, proj_s = wp.result(chosen)
    target = chosen.shifted
    pred_s = weighted_snr(mom, target, N)
    shifted = _run("weighted-shifted", target, plan_s, proj_s, pred_s.variance,
                   snr_predicted=pred_s.snr, delta=chosen.delta, delta_exact=exact.delta)
    return plain, shifted


def weighted_experiment(N: int, seed: int = 1, threads: int = 1, side: int = SIDE) -> tuple[Run, Run]:
    """Uniform basis streamed past the moment-matched phantom."""
    image = phantom(side, side, "weighted")
    basis = make_basis(BasisSpec(side, side, N, "uniform01", seed), materialize=False, threads=threads)
    return weighted_runs(basis, image, "statistical", threads)


# --------------------------------------------------------------------------- filtered


def basis_size_for_kept(spec: BasisSpec, image, cutoff: float, n_kept: int, chunk: int = 8192,
                        limit: int = 10**9) -> int:
    """Smallest ``N`` whose first ``N`` masks contain ``n_kept`` above ``cutoff``."""
    mom = moments(spec)
    flat = image.flat()
    scale = 1.0 / (image.channels * image.nm * np.sqrt(mom.second_moment * image.second_moment))
    spec = spec.with_size(limit)
    found, k0 = 0, 0
    while k0 < limit:
        blk = generate_block(spec, k0, min(k0 + chunk, limit))
        hits = np.flatnonzero(blk @ flat * scale >= cutoff)
        if found + hits.size >= n_kept:
            return int(k0 + hits[n_kept - found - 1] + 1)
        found += hits.size
        k0 += chunk
    raise RuntimeError(f"fewer than {n_kept} masks above cutoff in {limit}")


def filtered_run(basis: RandomBasis, image: Image, cutoff: float, scheme: str = "filtered",
                 correlations: np.ndarray | None = None, threads: int = 1) -> Run:
    mom = basis.moments
    stats = correlation_stats(mom, image)
    if correlations is None:
        correlations = pseudo_correlation(basis, image, threads)
    sel = filter_basis(correlations, stats, cutoff)
    plan, proj = filtered_projection(basis, image, sel, threads)
    pred = filtered_snr(stats, cutoff, n_kept=sel.n_kept)
    var = filtered_variance(mom, sel.gamma, sel.n_kept)
    return _run(scheme, image, plan, proj, var, snr_predicted=pred.snr, n_kept=sel.n_kept,
                n_total=sel.n_total, expected_kept=sel.kept_fraction * sel.n_total,
                binomial_sigma=sel.binomial_sigma(), gamma=sel.gamma,
                gamma_predicted=sel.gamma_predicted, x=sel.x,
                snr_from_gamma=float(np.sqrt(image.second_moment / var)))


def filtered_linear_run(basis: RandomBasis, image: Image, cutoff: float, ratio: float | None = None,
                        threads: int = 1) -> Run:
    """Linear weights on the kept set; ``ratio`` defaults to the cutoff itself."""
    ratio = cutoff if ratio is None else ratio
    plan, proj = filtered_linear_projection(basis, image, cutoff, ratio, threads=threads)
    return _run("filtered-linear", image, plan, proj, None, n_kept=plan.size, ratio=ratio)


def filtered_experiment(n_kept: int = 10000, sigmas: float = 0.612, seed: int = 1, threads: int = 1,
                        variant_sigmas=(0.0, 1.0), variant_N: int | None = None,
                        side: int = SIDE) -> tuple[Run, list[Run]]:
    """Grow the basis until ``n_kept`` masks pass ``E[C] + sigmas sd``, then re-filter at other cutoffs.

    The variants use the first ``variant_N`` masks (default: the grown basis).
    """
    image = phantom(side, side, "filtered")
    spec = BasisSpec(side, side, 1, "uniform01", seed)
    stats = correlation_stats(moments(spec), image)
    cut = stats.cutoff_sigmas(sigmas)
    N = basis_size_for_kept(spec, image, cut, n_kept)
    basis = make_basis(spec.with_size(N), threads=threads)
    cors = pseudo_correlation(basis, image, threads)
    main = filtered_run(basis, image, cut, correlations=cors, threads=threads)
    main.values["expected_N"] = n_kept / kept_fraction(stats.x_of(cut))
    if variant_N is not None and variant_N != N:
        basis = make_basis(spec.with_size(variant_N), threads=threads)
        cors = pseudo_correlation(basis, image, threads)
    variants = [filtered_run(basis, image, stats.cutoff_sigmas(s), f"filtered@{s:g}sd", cors, threads)
                for s in variant_sigmas]
    return main, variants


# --------------------------------------------------------------------------- shot-noise filtered


def poisson_filtered_run(basis: RandomBasis, image: Image, photons: float, sqrt2x: float | None = None,
                         noise_seed: int = 11, threads: int = 1) -> Run:
    """Uniform exposure of the kept set and one photon-count realization.

    ``sqrt2x = None`` uses the shot-noise optimal cutoff for this ``a``.
    """
    mom, N = basis.moments, basis.N
    stats = correlation_stats(mom, image)
    a = cutoff_mod.a_parameter(N, photons, mom, image.nm, image.second_moment)
    x = cutoff_mod.solve_optimal_x(a) if sqrt2x is None else sqrt2x / np.sqrt(2.0)
    cut = stats.cutoff_at(x)
    cors = pseudo_correlation(basis, image, threads)
    sel = filter_basis(cors, stats, cut)
    plan, _ = filtered_projection(basis, image, sel, threads)
    proj = realize(plan, basis, NoiseModel(photons, 0.0, noise_seed), threads)
    pred = predict_snr_filtered_poisson(stats, cut, photons, N, sel.n_kept, sel.gamma)
    pred_model = predict_snr_filtered_poisson(stats, cut, photons, N)
    return _run("filtered-poisson", image, plan, proj, pred.variance, scale=photons,
                snr_predicted=pred.snr, snr_predicted_model=pred_model.snr,
                snr_statistical=pred.snr_statistical, a=a, sqrt2x=float(np.sqrt(2.0) * x),
                n_kept=sel.n_kept, expected_kept=sel.kept_fraction * N,
                binomial_sigma=sel.binomial_sigma(), gamma=sel.gamma, pedestal_model=pred_model.pedestal)


def poisson_filtered_experiment(N: int = 100_000, photons: float = 1000.0, sqrt2x: float | None = None,
                                seed: int = 1, noise_seed: int = 11, threads: int = 1,
                                side: int = SIDE) -> Run:
    """Binary basis against the zero-centred phantom."""
    image = phantom(side, side, "photon")
    basis = make_basis(BasisSpec(side, side, N, "binary01", seed), threads=threads)
    return poisson_filtered_run(basis, image, photons, sqrt2x, noise_seed, threads)


# --------------------------------------------------------------------------- colour


def color_runs(basis: RandomBasis, image: ColorImage, modes=("global", "independent"),
               threads: int = 1) -> list[Run]:
    runs = []
    for mode in modes:
        res = color_projection(basis, image, mode, threads=threads)
        sel = res.selection
        var = filtered_variance(basis.moments, sel.gamma, sel.n_kept)
        runs.append(_run(f"color-{mode}", image, res.plan, res.projection, var,
                         snr_predicted=res.predicted_snr, snr_planned=res.planned_snr,
                         n_kept=sel.n_kept, expected_kept=sel.kept_fraction * basis.N,
                         binomial_sigma=sel.binomial_sigma(), gamma=sel.gamma))
    return runs


def color_experiment(N: int = 40_000, seed: int = 1, threads: int = 1, side: int = SIDE) -> tuple[Run, Run]:
    image = color_phantom(side, side)
    basis = make_basis(BasisSpec(side, side, N, "uniform01", seed, channels=image.channels),
                       materialize=False, threads=threads)
    glob, indep = color_runs(basis, image, threads=threads)
    return glob, indep


# --------------------------------------------------------------------------- numeric weights


def nnls_run(basis: RandomBasis, image: Image):
    """Returns ``(run, problem)`` for a noise-free NNLS plan."""
    problem = build_design(basis, image)
    plan = nnls(problem)
    values = (problem.design @ plan.exposures + plan.pedestal_predicted).reshape(image.shape)
    proj = Projection(values, plan.pedestal_predicted, details={"scheme": "nnls"})
    target = Image(problem.target.reshape(image.shape))
    run = _run("nnls", target, plan, proj, None, snr_solver=plan.details["snr"],
               n_nonzero=plan.n_nonzero, kkt_violation=plan.details["kkt_violation"],
               tolerance=plan.details["tolerance"], iterations=plan.details["iterations"])
    return run, problem


def nnls_experiment(N: int, seed: int = 1, side: int = SIDE, threads: int = 1):
    """Returns ``(run, basis, problem)`` for the zero-centred phantom and a uniform basis."""
    image = phantom(side, side, "numeric")
    basis = make_basis(BasisSpec(side, side, N, "uniform01", seed), threads=threads)
    run, problem = nnls_run(basis, image)
    return run, basis, problem


def noisy_nnls_run(plan: ExposurePlan, basis: RandomBasis, image: Image, photons: float = 0.0,
                   sigma: float = 0.0, noise_seed: int = 11, threads: int = 1) -> Run:
    """Realize a numeric plan with shot noise and/or exposure jitter and compare with the predictor.

    The predictor assumes the noise-free plan is exact; ``snr_predicted_total``
    also adds the plan's own residual variance.
    """
    model = NoiseModel(photons, sigma, noise_seed)
    active = plan.nonzero()
    proj = realize(active, basis, model, threads)
    mom = basis.moments
    pred = predict_snr_numeric(plan, mom, image.second_moment, photons if photons > 0 else np.inf, sigma)
    scale = photons if photons > 0 else 1.0
    var = scale**2 * image.second_moment / pred.snr**2 if np.isfinite(pred.snr) else 0.0
    clean = accumulate_plan(basis, active, threads)
    plan_var = float(np.var(clean - image.values))
    total = var + scale**2 * plan_var
    name = "nnls-" + ("combined" if photons and sigma else "poisson" if photons else "exposure")
    return _run(name, image, plan, proj, var, scale=scale, snr_predicted=pred.snr,
                snr_predicted_total=float("inf") if total == 0 else float(np.sqrt(scale**2 * image.second_moment / total)),
                snr_poisson_only=pred.poisson_only, snr_exposure_only=pred.exposure_only,
                n_active=pred.n_active, photons=photons, sigma=sigma)


def gradient_ascent_run(basis: RandomBasis, image: Image, photons: float = 5000.0,
                        noise_seed: int = 11, threads: int = 1) -> dict:
    """NNLS start, shot-noise gradient ascent, and one shared-seed realization of each plan."""
    start, problem = nnls_run(basis, image)
    target = start.image
    ga = gradient_ascent_poisson(problem, photons, start.plan)
    realized_nnls = noisy_nnls_run(start.plan, basis, target, photons, 0.0, noise_seed, threads)
    realized_ga = noisy_nnls_run(ga, basis, target, photons, 0.0, noise_seed, threads)
    realized_ga.scheme = "ga-poisson"
    return {
        "nnls": start, "ga_plan": ga, "realized_nnls": realized_nnls, "realized_ga": realized_ga,
        "pedestal_nnls": start.plan.pedestal_predicted, "pedestal_ga": ga.pedestal_predicted,
        "snr_nnls": realized_nnls.report.snr_global, "snr_ga": realized_ga.report.snr_global,
        "objective_nnls": ga.details["start_poisson_snr"], "objective_ga": ga.details["poisson_snr"],
        "gradient_error": ga.details["gradient_error"], "iterations": ga.details["iterations"],
    }


def gradient_ascent_experiment(N: int, photons: float = 5000.0, seed: int = 1, noise_seed: int = 11,
                               side: int = SIDE, threads: int = 1) -> dict:
    image = phantom(side, side, "numeric")
    basis = make_basis(BasisSpec(side, side, N, "uniform01", seed), threads=threads)
    return gradient_ascent_run(basis, image, photons, noise_seed, threads)


# --------------------------------------------------------------------------- photocopier


def photocopy(basis: RandomBasis, obj: Image, scheme: str = "weighted", model: NoiseModel | None = None,
              x: float = PADE_X, threads: int = 1) -> Run:
    """Copy an object through its bucket signals alone.

    Step one records ``R_k . O`` for every mask.  Step two plans exposures
    from those numbers and the published mask statistics only: the object's
    mean and second moment are estimated from the bucket mean and variance.
    """
    if obj.values.min() < 0 or obj.values.max() > 1:
        raise ValueError("photocopier object must be a transmission image in [0, 1]")
    buckets = bucket_signals(basis, obj, threads)
    mom = basis.moments
    nm, N = obj.nm, basis.N
    est_mean = float(buckets.mean()) / (nm * mom.mean)
    est_second = float(buckets.var()) / (nm * mom.variance)
    if scheme == "weighted":
        t = buckets / (N * mom.variance)
        pedestal = nm * mom.mean**2 * est_mean / mom.variance
        plan = ExposurePlan(np.arange(N), np.maximum(t, 0.0), pedestal, "photocopy-weighted")
        pred = weighted_snr(mom, ImageMoments(nm, est_mean, est_second), N)
        var, snr_pred, extra = pred.variance, pred.snr, {}
    elif scheme == "filtered":
        est = ImageMoments(nm, est_mean, est_second)
        stats = correlation_stats(mom, est)
        cors = buckets / (nm * np.sqrt(mom.second_moment * est_second))
        cut = stats.cutoff_at(x)
        sel = filter_basis(cors, stats, cut)
        t = 1.0 / (sel.gamma * sel.n_kept)
        plan = ExposurePlan(sel.kept_indices, np.full(sel.n_kept, t), mom.mean / sel.gamma, "photocopy-filtered")
        var = filtered_variance(mom, sel.gamma, sel.n_kept)
        snr_pred = filtered_snr(stats, cut, n_kept=sel.n_kept).snr
        extra = {"n_kept": sel.n_kept, "gamma": sel.gamma}
    else:
        raise ValueError(f"photocopier supports weighted or filtered, not {scheme!r}")
    model = model or NoiseModel()
    proj = realize(plan, basis, model, threads)
    scale = model.photons_per_pixel or 1.0
    return _run(plan.scheme, obj, plan, proj, scale**2 * var, scale=scale, snr_predicted=snr_pred,
                estimated_mean=est_mean, estimated_second_moment=est_second, **extra)


# --------------------------------------------------------------------------- direct formula checks


def formula_values() -> dict:
    """Closed-form numbers that involve no sampling."""
    from .schemes import basis_size_estimate, color_planning_ratio, dwell_constrained_cutoff, optimal_dwell

    uni = moments(BasisSpec(SIDE, SIDE, 1, "uniform01", 0))
    dwell_image = ImageMoments(SIDE * SIDE, 0.0, 0.5)
    constrained = dwell_constrained_cutoff(1 / 200, 100_000, uni, dwell_image)
    best = optimal_dwell(100_000, uni, dwell_image)
    plan = basis_size_estimate(5.0, SIDE * SIDE, s=3.0)
    return {
        "pade_x": PADE_X,
        "pade_kept_fraction": kept_fraction(PADE_X),
        "pade_variance_prefactor": kept_fraction(PADE_X) * np.exp(2 * PADE_X**2),
        "pade_xi": xi_factor(PADE_X),
        "basis_size_base": plan.n_base,
        "basis_size_surcharge": plan.surcharge,
        "dwell_discard": constrained.discard_fraction,
        "dwell_kept": constrained.kept_fraction,
        "dwell_snr": constrained.predicted_snr,
        "optimal_exposure_inverse": 1 / best.exposure,
        "optimal_kept": best.kept_fraction,
        "optimal_snr": best.predicted_snr,
        "color_planning_ratio": color_planning_ratio(3),
    }
