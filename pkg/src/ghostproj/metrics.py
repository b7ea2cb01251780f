"""Pixel-wise SNR, pedestal estimation and residual histograms for a projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

MAX_BINS = 64


@dataclass
class ProjectionReport:
    snr_pixelwise: np.ndarray
    snr_global: float
    pedestal_observed: float
    pedestal_predicted: float | None
    residual_variance: float
    bin_edges: np.ndarray
    counts: np.ndarray
    predicted_pdf: np.ndarray | None
    predicted_variance: float | None
    scale: float
    snr_predicted: float | None = None

    @property
    def bin_centres(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def observed_pdf(self) -> np.ndarray:
        width = np.diff(self.bin_edges)
        return self.counts / (self.counts.sum() * width)

    def summary(self) -> dict:
        return {
            "snr_global": self.snr_global,
            "pedestal_observed": self.pedestal_observed,
            "pedestal_predicted": self.pedestal_predicted,
            "residual_variance": self.residual_variance,
            "predicted_variance": self.predicted_variance,
            "snr_predicted": self.snr_predicted,
            "scale": self.scale,
            "bins": int(self.counts.size),
        }


def freedman_diaconis_edges(values: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.array([lo - 0.5, lo + 0.5])
    edges = np.histogram_bin_edges(values, bins="fd")
    if edges.size - 1 > max_bins:
        edges = np.linspace(lo, hi, max_bins + 1)
    return edges


def report(projection, image, predicted_variance=None, predicted_pedestal: float | None = None,
           scale: float | None = None) -> ProjectionReport:
    """Compare ``projection`` with ``scale * image``.

    The observed pedestal is the spatial mean of ``P - scale I`` and the residual
    is what remains after removing it.  ``scale`` defaults to the projection's
    own (1 for exposures, photons per pixel for counts).  A zero residual gives
    an infinite SNR.
    """
    P = np.asarray(getattr(projection, "values", projection), dtype=float)
    target = np.asarray(getattr(image, "values", image), dtype=float)
    if P.shape != target.shape:
        raise ValueError(f"projection shape {P.shape} does not match image shape {target.shape}")
    if scale is None:
        scale = float(getattr(projection, "scale", 1.0))
    if predicted_pedestal is None:
        predicted_pedestal = getattr(projection, "pedestal", None)
    signal = scale * target
    diff = P - signal
    pedestal = float(diff.mean())
    residual = diff - pedestal
    var = float(np.mean(residual**2))
    if var == 0.0:
        snr_map = np.where(signal == 0, 0.0, np.inf * np.sign(signal))
        snr_global = float("inf")
    else:
        snr_map = signal / np.sqrt(var)
        snr_global = float(np.sqrt(np.mean(snr_map**2)))
    edges = freedman_diaconis_edges(residual)
    counts, _ = np.histogram(residual, bins=edges)
    pdf = None
    pred_var = None
    snr_pred = None
    if predicted_variance is not None:
        pred_var = float(np.mean(predicted_variance))
        centres = 0.5 * (edges[1:] + edges[:-1])
        pdf = sps.norm.pdf(centres, scale=np.sqrt(pred_var)) if pred_var > 0 else np.zeros_like(centres)
        snr_pred = float("inf") if pred_var == 0 else float(np.sqrt(np.mean(signal**2) / pred_var))
    return ProjectionReport(
        snr_pixelwise=snr_map, snr_global=snr_global, pedestal_observed=pedestal,
        pedestal_predicted=None if predicted_pedestal is None else float(predicted_pedestal),
        residual_variance=var, bin_edges=edges, counts=counts, predicted_pdf=pdf,
        predicted_variance=pred_var, scale=float(scale), snr_predicted=snr_pred,
    )
