"""Command-line experiment runner.

Every subcommand reads an optional ``key = value`` config file; any key can be
overridden on the command line as ``--key value``.  Each invocation writes a
manifest echoing the resolved configuration, so rerunning with
``--config OUT/config.txt`` reproduces the outputs exactly.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import cutoff as cutoff_mod
from . import experiments as ex
from . import io
from .basis import DEFAULT_CHUNK, DEFAULT_MEMORY_CAP, BasisSpec, make_basis
from .correlate import ColorImage, Image, correlation_stats
from .metrics import report
from .noise import NoiseModel
from .phantom import COLOR_SECOND_MOMENT, color_phantom, phantom
from .schemes import PADE_X, basis_size_estimate

log = logging.getLogger("ghostproj")

SCHEMES = (
    "weighted", "weighted-shifted", "filtered", "filtered-linear", "filtered-poisson",
    "color-global", "color-independent", "nnls", "nnls-poisson", "nnls-exposure",
    "nnls-combined", "ga-poisson", "photocopy",
)

PHOTON_SCHEMES = {"filtered-poisson", "nnls-poisson", "nnls-combined", "ga-poisson"}
JITTER_SCHEMES = {"nnls-exposure", "nnls-combined"}


@dataclass
class ExperimentConfig:
    scheme: str = "filtered"
    n: int = 40
    m: int = 40
    N: int = 10_000
    distribution: str = "uniform01"
    mu: float = 0.5
    sigma: float = 0.1
    channels: int = 1
    image: str | None = None
    phantom: str = "transmission"
    mean: float | None = None
    second_moment: float | None = None
    photons: float = 0.0
    exposure_sigma: float = 0.0
    noise_seed: int | None = None
    cutoff_sigmas: float | None = None
    sqrt2x: float | None = None
    n_kept: int | None = None
    ratio: float | None = None
    shift: str = "statistical"
    photocopy_scheme: str = "weighted"
    chunk: int = DEFAULT_CHUNK
    memory_cap: int = DEFAULT_MEMORY_CAP
    write_plan: bool = True
    seed: int = 0
    threads: int = 1
    out: str = "ghostproj-out"

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(v, known[k].type) for k, v in values.items()})

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.scheme in PHOTON_SCHEMES and not self.photons > 0:
            raise ValueError(f"scheme {self.scheme} needs photons > 0")
        if self.scheme in JITTER_SCHEMES and not self.exposure_sigma > 0:
            raise ValueError(f"scheme {self.scheme} needs exposure_sigma > 0")
        if self.scheme.startswith("color") and self.channels < 2:
            raise ValueError("colour schemes need channels >= 2")
        if not self.scheme.startswith("color") and self.channels != 1:
            raise ValueError(f"scheme {self.scheme} is single-channel")
        if self.shift not in ("statistical", "exact"):
            raise ValueError("shift must be statistical or exact")
        if self.photocopy_scheme not in ("weighted", "filtered"):
            raise ValueError("photocopy_scheme must be weighted or filtered")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")
        if self.n_kept is not None and self.scheme != "filtered":
            raise ValueError("n_kept applies to the filtered scheme only")
        BasisSpec(self.n, self.m, self.N, self.distribution, self.seed, self.mu, self.sigma, self.channels)

    @property
    def worker_threads(self) -> int:
        return self.threads or (os.cpu_count() or 1)

    @property
    def noise_key(self) -> int:
        return self.seed if self.noise_seed is None else self.noise_seed

    def basis_spec(self, N: int | None = None) -> BasisSpec:
        return BasisSpec(self.n, self.m, self.N if N is None else N, self.distribution, self.seed,
                         self.mu, self.sigma, self.channels)


# --------------------------------------------------------------------------- config plumbing


def _coerce(value, annotation: str):
    """Cast a parsed config value to the field's declared type."""
    if value is None:
        return None
    base = annotation.split("|")[0].strip()
    if base == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if base == "float":
        return float(value)
    if base == "bool":
        return bool(value)
    return str(value)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def _overrides(extra: list[str]) -> dict:
    """``--key value`` and ``--key=value`` pairs left over by argparse."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"missing value for --{key}")
            i += 1
            value = extra[i]
        out[key.replace("-", "_")] = io.parse_value(value)
        i += 1
    return out


def resolve(args: argparse.Namespace, extra: list[str], defaults: dict | None = None) -> dict:
    values = dict(defaults or {})
    if args.config is not None:
        values.update(io.read_kv(args.config))
    values.update(_overrides(extra))
    for key in ("seed", "out", "threads"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    return values


def _write_manifest(out: Path, command: str, config: dict, **extra) -> None:
    io.write_kv(out / "config.txt", config)
    io.write_kv(out / "manifest.txt", {
        "command": command, "library_version": __version__, "numpy_version": np.__version__,
        **config, **extra,
    })


def _write_image(out: Path, stem: str, values: np.ndarray, manifest: dict) -> None:
    values = np.asarray(values)
    planes = [values] if values.ndim == 2 else list(values)
    for c, plane in enumerate(planes):
        name = stem if len(planes) == 1 else f"{stem}_c{c}"
        io.write_csv_array(out / f"{name}.csv", plane)
        lo, hi = io.write_pgm(out / f"{name}.pgm", plane)
        manifest[f"pgm_{name}_min"] = lo
        manifest[f"pgm_{name}_max"] = hi


def _write_run(out: Path, run: ex.Run, cfg: ExperimentConfig, manifest: dict, prefix: str = "") -> None:
    _write_image(out, f"{prefix}projection", run.projection.values, manifest)
    _write_image(out, f"{prefix}snr_map", run.report.snr_pixelwise, manifest)
    if cfg.write_plan and run.plan is not None:
        io.write_plan(out / f"{prefix}plan.csv", run.plan.nonzero())
    extra = {"scheme": run.scheme, **{k: v for k, v in run.values.items() if np.isscalar(v)}}
    if cfg.photons or cfg.exposure_sigma:
        extra.update(photons=cfg.photons, exposure_sigma=cfg.exposure_sigma, noise_seed=cfg.noise_key)
    io.write_report(out / f"{prefix}report", run.report, extra)


def _say(run: ex.Run) -> None:
    v = run.values
    pred = v.get("snr_predicted")
    pred_txt = "n/a" if pred is None else f"{pred:.4g}"
    ped_pred = v.get("pedestal_predicted")
    ped_txt = "n/a" if ped_pred is None else f"{ped_pred:.6g}"
    print(f"{run.scheme}: predicted SNR {pred_txt}, simulated SNR {v['snr_simulated']:.4g}, "
          f"pedestal predicted {ped_txt} / observed {v['pedestal_observed']:.6g}")


# --------------------------------------------------------------------------- images


def load_target(cfg: ExperimentConfig) -> Image | ColorImage:
    if cfg.image:
        paths = [p for p in str(cfg.image).split(",") if p]
        planes = [io.load_image(p) for p in paths]
        if len(planes) > 1 or cfg.channels > 1:
            if len(planes) != cfg.channels:
                raise ValueError(f"{cfg.channels} channels configured but {len(planes)} image files given")
            return ColorImage.from_array(np.stack(planes))
        return Image(planes[0])
    if cfg.channels > 1:
        if cfg.channels != 3:
            raise ValueError("the colour phantom has three channels")
        return color_phantom(cfg.n, cfg.m, *(() if cfg.second_moment is None else (cfg.second_moment,)))
    return phantom(cfg.n, cfg.m, cfg.phantom, cfg.mean, cfg.second_moment)


# --------------------------------------------------------------------------- subcommands


def cmd_phantom(args, extra) -> int:
    values = resolve(args, extra, {"n": 40, "m": 40, "mode": "transmission", "channels": 1,
                                   "out": "ghostproj-out"})
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    n, m, mode = int(values["n"]), int(values["m"]), values["mode"]
    if int(values["channels"]) > 1:
        img = color_phantom(n, m, values.get("second_moment") or COLOR_SECOND_MOMENT)
    else:
        img = phantom(n, m, mode, values.get("mean"), values.get("second_moment"))
    manifest = {}
    _write_image(out, "phantom", img.values, manifest)
    io.write_kv(out / "phantom.txt", {"mean": img.mean, "second_moment": img.second_moment,
                                      "channels": img.channels, "n": n, "m": m})
    _write_manifest(out, "phantom", values, **manifest)
    print(f"phantom {n}x{m} ({mode}): E[I] = {img.mean:.6g}, E[I^2] = {img.second_moment:.6g}")
    return 0


def _config(args, extra) -> ExperimentConfig:
    cfg = ExperimentConfig.from_mapping(resolve(args, extra))
    cfg.validate()
    return cfg


def execute(cfg: ExperimentConfig) -> tuple[list[tuple[str, ex.Run]], dict]:
    """Run the configured scheme; returns ``(prefix, run)`` pairs and extra manifest values."""
    threads = cfg.worker_threads
    image = load_target(cfg)
    extra: dict = {}
    scheme = cfg.scheme
    materialize = scheme.startswith("nnls") or scheme in ("ga-poisson", "filtered-poisson", "filtered")

    def basis(N=None):
        return make_basis(cfg.basis_spec(N), materialize=materialize, memory_cap=cfg.memory_cap,
                          chunk=cfg.chunk, threads=threads)

    if scheme in ("weighted", "weighted-shifted"):
        plain, shifted = ex.weighted_runs(basis(), image, "none" if scheme == "weighted" else cfg.shift,
                                          threads)
        return [("", plain if scheme == "weighted" else shifted)], extra
    if scheme in ("filtered", "filtered-linear"):
        stats = correlation_stats(make_basis(cfg.basis_spec(1)).moments, image)
        cut = stats.cutoff_at(PADE_X) if cfg.cutoff_sigmas is None else stats.cutoff_sigmas(cfg.cutoff_sigmas)
        N = cfg.N
        if cfg.n_kept is not None:
            N = ex.basis_size_for_kept(cfg.basis_spec(1), image, cut, cfg.n_kept)
            extra["N_grown"] = N
        b = basis(N)
        if scheme == "filtered":
            return [("", ex.filtered_run(b, image, cut, threads=threads))], extra
        return [("", ex.filtered_linear_run(b, image, cut, cfg.ratio, threads))], extra
    if scheme == "filtered-poisson":
        return [("", ex.poisson_filtered_run(basis(), image, cfg.photons, cfg.sqrt2x, cfg.noise_key,
                                             threads))], extra
    if scheme.startswith("color"):
        return [("", ex.color_runs(basis(), image, (scheme.split("-", 1)[1],), threads)[0])], extra
    if scheme.startswith("nnls"):
        b = basis()
        run, problem = ex.nnls_run(b, image)
        if scheme == "nnls":
            return [("", run)], extra
        photons = cfg.photons if scheme in ("nnls-poisson", "nnls-combined") else 0.0
        sigma = cfg.exposure_sigma if scheme in ("nnls-exposure", "nnls-combined") else 0.0
        noisy = ex.noisy_nnls_run(run.plan, b, run.image, photons, sigma, cfg.noise_key, threads)
        return [("noise_free_", run), ("", noisy)], extra
    if scheme == "ga-poisson":
        res = ex.gradient_ascent_run(basis(), image, cfg.photons, cfg.noise_key, threads)
        extra.update(gradient_error=res["gradient_error"], ga_iterations=res["iterations"])
        return [("nnls_", res["realized_nnls"]), ("", res["realized_ga"])], extra
    if scheme == "photocopy":
        model = NoiseModel(cfg.photons, cfg.exposure_sigma, cfg.noise_key)
        return [("", ex.photocopy(basis(), image, cfg.photocopy_scheme, model, threads=threads))], extra
    raise ValueError(f"unhandled scheme {scheme!r}")


def _finish(cfg: ExperimentConfig, command: str, runs, extra) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(extra)
    for prefix, run in runs:
        _write_run(out, run, cfg, manifest, prefix)
        _say(run)
    if cfg.scheme == "ga-poisson":
        start = runs[0][1].plan.exposures
        final = runs[1][1].plan.exposures
        io.write_csv_array(out / "weights_scatter.csv", np.column_stack([start, final]))
    _write_manifest(out, command, {k: v for k, v in asdict(cfg).items()}, **manifest)
    return 0


def cmd_run(args, extra) -> int:
    cfg = _config(args, extra)
    runs, more = execute(cfg)
    return _finish(cfg, "run", runs, more)


def cmd_photocopy(args, extra) -> int:
    values = resolve(args, extra)
    values.setdefault("scheme", "photocopy")
    if values["scheme"] != "photocopy":
        raise ValueError("the photocopy subcommand runs scheme = photocopy")
    cfg = ExperimentConfig.from_mapping(values)
    cfg.validate()
    runs, more = execute(cfg)
    return _finish(cfg, "photocopy", runs, more)


def cmd_cutoff_sweep(args, extra) -> int:
    values = resolve(args, extra, {"a_min": 1e-3, "a_max": 1e3, "points": 121, "out": "ghostproj-out"})
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = cutoff_mod.sweep(float(values["a_min"]), float(values["a_max"]), int(values["points"]))
    table = np.array([[r.a, r.solution_x, r.approx_x, r.solution_sigmas, r.approx_sigmas] for r in rows])
    with open(out / "cutoff_sweep.csv", "w") as fh:
        fh.write("a,x_solved,x_approx,sqrt2x_solved,sqrt2x_approx\n")
        np.savetxt(fh, table, delimiter=",", fmt=io.FLOAT_FMT)
    dev = float(np.max(np.abs(table[:, 3] - table[:, 4])))
    _write_manifest(out, "cutoff-sweep", values, max_sigmoid_deviation=dev)
    print(f"{len(rows)} cutoffs solved; largest sigmoid deviation {dev:.4f} standard deviations")
    return 0


def cmd_basis_size(args, extra) -> int:
    values = resolve(args, extra, {"snr": 5.0, "n": 40, "m": 40, "sigmas": 3.0, "exact": False,
                                   "out": "ghostproj-out"})
    plan = basis_size_estimate(float(values["snr"]), int(values["n"]) * int(values["m"]),
                               float(values["sigmas"]), exact=bool(values["exact"]))
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_kv(out / "basis_size.txt", asdict(plan))
    _write_manifest(out, "basis-size", values)
    print(f"N = {plan.n_required} ({plan.n_base:.1f} + {plan.surcharge:.1f} for "
          f"{plan.confidence_sigmas:g} sigma confidence)")
    return 0


def cmd_report(args, extra) -> int:
    values = resolve(args, extra, {"scale": 1.0, "out": "ghostproj-out"})
    for key in ("projection", "image"):
        if not values.get(key):
            raise ValueError(f"report needs --{key} PATH")
    proj = io.load_image(values["projection"])
    img = io.load_image(values["image"])
    rep = report(proj, img, values.get("predicted_variance"), values.get("predicted_pedestal"),
                 scale=float(values["scale"]))
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_report(out / "report", rep)
    manifest = {}
    _write_image(out, "snr_map", rep.snr_pixelwise, manifest)
    _write_manifest(out, "report", values, **manifest)
    print(f"SNR {rep.snr_global:.4g}, pedestal {rep.pedestal_observed:.6g}")
    return 0


COMMANDS = {
    "phantom": (cmd_phantom, "write the test pattern (--n, --m, --mode, --mean, --second_moment)"),
    "run": (cmd_run, "plan, realize and report one scheme"),
    "cutoff-sweep": (cmd_cutoff_sweep, "optimal cutoff X(a) and its sigmoid fit over a range of a"),
    "basis-size": (cmd_basis_size, "unfiltered basis size for a target SNR"),
    "photocopy": (cmd_photocopy, "copy an object through its bucket signals"),
    "report": (cmd_report, "compare a projection CSV with a target image CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostproj", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ghostproj {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    keys = ", ".join(f.name for f in fields(ExperimentConfig) if f.name not in ("seed", "threads", "out"))
    epilog = f"Any configuration key may also be given as --key value. Keys: {keys}. Schemes: {', '.join(SCHEMES)}."
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text,
                       epilog=epilog if name in ("run", "photocopy") else None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command][0](args, extra)
    except Exception as exc:  # noqa: BLE001 - report any library failure as a CLI error
        if args.verbose:
            log.exception("failed")
        print(f"ghostproj {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
