"""Print the headline numbers for each simulation family.

    python3 scripts/reproduce.py                 # everything at reduced size
    python3 scripts/reproduce.py --full weighted # full-size weighted run (minutes)
"""

import argparse
import time

from ghostproj import cutoff
from ghostproj import experiments as ex

NM = 1600


def show(title, values, keys):
    print(f"{title}: " + ", ".join(f"{k}={values[k]:.6g}" for k in keys if k in values))


def weighted(full):
    plain, shifted = ex.weighted_experiment(13_046_012 if full else 100_000)
    keys = ("snr_simulated", "snr_predicted", "pedestal_observed", "pedestal_predicted")
    show("weighted", plain.values, keys)
    show("weighted-shifted", shifted.values, keys)


def filtered(full):
    main_run, variants = ex.filtered_experiment(variant_N=37_247)
    for run in (main_run, *variants):
        show(run.scheme, run.values, ("n_kept", "snr_simulated", "snr_predicted", "pedestal_observed"))


def poisson(full):
    for sqrt2x in (0.612, None):
        run = ex.poisson_filtered_experiment(sqrt2x=sqrt2x)
        show(f"filtered-poisson cutoff={run.values['sqrt2x']:.4f}", run.values,
             ("a", "n_kept", "snr_simulated", "snr_predicted", "pedestal_observed"))


def color(full):
    for run in ex.color_experiment():
        show(run.scheme, run.values, ("n_kept", "snr_simulated", "snr_predicted"))


def formulas(full):
    for k, v in ex.formula_values().items():
        print(f"{k} = {v:.6g}")
    for row in cutoff.sweep(1e-3, 1e3, 7):
        print(f"a={row.a:9.3g}  cutoff={row.solution_sigmas:.4f} sd  sigmoid={row.approx_sigmas:.4f} sd")


def nnls(full):
    for frac, seed in ((0.5, 1), (1.0, 1), (1.5, 1), (2.0, 2)):
        run, _, _ = ex.nnls_experiment(int(frac * NM), seed=seed)
        show(f"nnls N={frac}nm", run.values, ("snr_solver", "n_nonzero", "kkt_violation", "iterations"))


def noisy(full):
    run, basis, _ = ex.nnls_experiment(int(2.5 * NM), seed=1)
    for photons, sigma in ((5000.0, 0.0), (5000.0, 0.01)):
        v = ex.noisy_nnls_run(run.plan, basis, run.image, photons, sigma).values
        show(f"nnls photons={photons:g} sigma={sigma:g}", v, ("snr_simulated", "snr_predicted"))


def ascent(full):
    res = ex.gradient_ascent_experiment(5 * NM)
    print(", ".join(f"{k}={v:.6g}" for k, v in res.items()))


FAMILIES = {"weighted": weighted, "filtered": filtered, "poisson": poisson, "color": color,
            "formulas": formulas, "nnls": nnls, "noisy": noisy, "ascent": ascent}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("families", nargs="*", metavar="family", help=", ".join(FAMILIES))
    ap.add_argument("--full", action="store_true", help="use the full-size weighted run")
    args = ap.parse_args()
    unknown = set(args.families) - set(FAMILIES)
    if unknown:
        ap.error(f"unknown family: {', '.join(sorted(unknown))}")
    for name in args.families or FAMILIES:
        t0 = time.perf_counter()
        FAMILIES[name](args.full)
        print(f"[{name}: {time.perf_counter() - t0:.1f} s]\n")


if __name__ == "__main__":
    main()
