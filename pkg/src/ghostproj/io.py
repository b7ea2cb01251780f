"""Plain-text serialization: key=value files, full-precision CSV and 8-bit PGM."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .basis import BasisSpec, RandomBasis
from .correlate import FilterSelection
from .schemes import ExposurePlan

FLOAT_FMT = "%.17g"


def parse_value(text: str):
    """Interpret a config value as int, float, bool, ``None`` or string, in that order."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def read_kv(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def write_kv(path, values: dict) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_csv_array(path, values: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(values, dtype=float)), delimiter=",", fmt=FLOAT_FMT)


def read_csv_array(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(path, values: np.ndarray, lo: float | None = None, hi: float | None = None) -> tuple[float, float]:
    """Binary 8-bit PGM, min-max scaled unless ``lo``/``hi`` are given; returns the scaling used."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("PGM output needs a 2-D array")
    lo = float(v.min()) if lo is None else lo
    hi = float(v.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    pix = np.clip(np.rint((v - lo) / span * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    """8-bit binary PGM as values in ``[0, 1]``."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("only binary (P5) PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    pix = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pix.reshape(h, w).astype(float) / maxval


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    return read_csv_array(path)


def write_plan(path, plan: ExposurePlan) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "w"])
        for k, w in zip(plan.indices, plan.exposures):
            writer.writerow([int(k), FLOAT_FMT % w])


def read_plan(path, pedestal: float = 0.0, scheme: str = "loaded") -> ExposurePlan:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ExposurePlan(data[:, 0].astype(np.int64), data[:, 1], pedestal, scheme)


def write_correlations(path, correlations: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "C"])
        for k, c in enumerate(np.asarray(correlations).reshape(len(correlations), -1)):
            writer.writerow([k, *(FLOAT_FMT % v for v in c)])


def write_selection(prefix, selection: FilterSelection) -> None:
    """``prefix.txt`` holds the scalars, ``prefix_indices.txt`` the kept indices."""
    prefix = Path(prefix)
    write_kv(prefix.with_suffix(".txt"), {
        "cutoff": selection.cutoff, "x": selection.x, "kept_fraction": selection.kept_fraction,
        "n_kept": selection.n_kept, "n_total": selection.n_total, "gamma": selection.gamma,
        "gamma_predicted": selection.gamma_predicted, "xi": selection.xi,
    })
    np.savetxt(prefix.parent / f"{prefix.name}_indices.txt", selection.kept_indices, fmt="%d")


def export_masks(directory, basis: RandomBasis, indices, fmt: str = "csv") -> list[Path]:
    """One file per mask plus ``basis.txt`` carrying the basis parameters."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if basis.spec.channels != 1:
        raise ValueError("mask export supports single-channel bases")
    indices = [int(k) for k in indices]
    meta = dict(basis.spec.to_dict(), format=fmt, indices=indices)
    write_kv(directory / "basis.txt", meta)
    paths = []
    for k in indices:
        mask = basis.mask(k)
        if fmt == "csv":
            p = directory / f"mask_{k:08d}.csv"
            write_csv_array(p, mask)
        elif fmt == "pgm":
            p = directory / f"mask_{k:08d}.pgm"
            write_pgm(p, mask, 0.0, 1.0)
        else:
            raise ValueError(f"unknown mask format {fmt!r}")
        paths.append(p)
    return paths


def import_masks(directory) -> tuple[BasisSpec, list[int], np.ndarray]:
    directory = Path(directory)
    meta = read_kv(directory / "basis.txt")
    fmt = meta.pop("format")
    raw_idx = meta.pop("indices")
    indices = [] if raw_idx is None else [int(t) for t in str(raw_idx).split(",")]
    spec = BasisSpec(**{k: meta[k] for k in ("n", "m", "N", "distribution", "master_seed", "mu", "sigma", "channels")})
    masks = np.stack([load_image(directory / f"mask_{k:08d}.{fmt}") for k in indices]) if indices else np.empty((0, spec.n, spec.m))
    return spec, indices, masks


def write_histogram(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count", "observed_pdf", "predicted_pdf"])
        pdf = report.predicted_pdf if report.predicted_pdf is not None else [float("nan")] * report.counts.size
        for lo, hi, c, o, p in zip(report.bin_edges[:-1], report.bin_edges[1:], report.counts,
                                   report.observed_pdf, pdf):
            writer.writerow([FLOAT_FMT % lo, FLOAT_FMT % hi, int(c), FLOAT_FMT % o, FLOAT_FMT % p])


def write_report(prefix, report, extra: dict | None = None) -> None:
    """``prefix.txt`` key=value summary plus ``prefix_histogram.csv``."""
    prefix = Path(prefix)
    summary = report.summary()
    if extra:
        summary.update(extra)
    write_kv(prefix.with_suffix(".txt"), summary)
    write_histogram(prefix.parent / f"{prefix.name}_histogram.csv", report)
