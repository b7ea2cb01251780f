"""Deterministic four-quadrant test pattern and moment-matched variants of it.

Quadrants: dots of 1 to 4 pixels (peaks and troughs on a grey background),
binary bands that get finer left to right, two linear gradients, and a
sinusoid.  Values lie in ``[0, 1]`` before any rescaling.
"""

from __future__ import annotations

import numpy as np

from .correlate import ColorImage, Image

# (mean, second moment) targets used by the reproduction experiments
PRESETS = {
    "transmission": None,
    "weighted": (0.5, 0.376759),
    "filtered": (0.0, 0.3723652),
    "dwell": (0.0, 0.5),
    "photon": (0.0, 0.50757),
    "numeric": (0.0, 0.50757),
}

COLOR_SECOND_MOMENT = 0.1331503


def _dots(h: int, w: int) -> np.ndarray:
    q = np.full((h, w), 0.5)
    cell = 6
    k = 0
    for r0 in range(0, h, cell):
        for c0 in range(0, w, cell):
            s = min(1 + k % 4, h - r0, w - c0)
            q[r0:r0 + s, c0:c0 + s] = 1.0 if (k + r0 // cell) % 2 == 0 else 0.0
            k += 1
    return q


def _bands(h: int, w: int) -> np.ndarray:
    q = np.zeros((h, w))
    col, width, on = 0, max(1, w // 4), True
    while col < w:
        q[:, col:col + width] = 1.0 if on else 0.0
        col += width
        on = not on
        if on:
            width = max(1, width - 1)
    return q


def _gradients(h: int, w: int) -> np.ndarray:
    q = np.empty((h, w))
    top = h // 2
    q[:top] = np.linspace(0.0, 1.0, w)[None, :]
    q[top:] = np.linspace(1.0, 0.0, h - top)[:, None]
    return q


def _sinusoid(h: int, w: int) -> np.ndarray:
    r, c = np.mgrid[0:h, 0:w]
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * (r + c) / max(h, w))


def pattern(n: int, m: int) -> np.ndarray:
    if n < 8 or m < 8:
        raise ValueError("phantom needs n, m >= 8")
    h, w = n // 2, m // 2
    out = np.empty((n, m))
    out[:h, :w] = _dots(h, w)
    out[:h, w:] = _bands(h, m - w)
    out[h:, :w] = _gradients(n - h, w)
    out[h:, w:] = _sinusoid(n - h, m - w)
    return out


def match_moments(values: np.ndarray, mean: float, second_moment: float) -> np.ndarray:
    """Affine rescaling to the requested mean and second moment."""
    var_target = second_moment - mean**2
    if var_target <= 0:
        raise ValueError("second moment must exceed the squared mean")
    centred = values - values.mean()
    var = float(np.mean(centred**2))
    if var == 0:
        raise ValueError("cannot rescale a flat image")
    return mean + centred * np.sqrt(var_target / var)


def phantom(n: int, m: int, mode: str = "transmission", mean: float | None = None,
            second_moment: float | None = None) -> Image:
    """Test image.

    ``mode`` is ``"transmission"`` (raw pattern), ``"zero-centered"``, one of
    :data:`PRESETS`, or ``"custom"`` with explicit ``mean`` and ``second_moment``.
    """
    raw = pattern(n, m)
    if mode == "transmission":
        return Image(raw)
    if mode == "zero-centered":
        return Image(raw - raw.mean())
    if mode == "custom":
        if mean is None or second_moment is None:
            raise ValueError("custom phantom needs mean and second_moment")
        return Image(match_moments(raw, mean, second_moment))
    if mode not in PRESETS:
        raise ValueError(f"unknown phantom mode {mode!r}")
    return Image(match_moments(raw, *PRESETS[mode]))


def color_phantom(n: int, m: int, second_moment: float = COLOR_SECOND_MOMENT) -> ColorImage:
    """Three zero-mean, mutually orthogonal channels of equal energy.

    Orthogonal channels make the per-channel correlations of a random mask
    uncorrelated, which the independent filter's kept fraction relies on.
    """
    raw = pattern(n, m)
    seeds = [raw, np.rot90(raw, 2).copy(), raw.T.copy() if n == m else np.fliplr(raw).copy()]
    basis: list[np.ndarray] = []
    for s in seeds:
        v = s.reshape(-1) - s.mean()
        for b in basis:
            v = v - (v @ b) * b
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise ValueError("phantom channels are linearly dependent")
        basis.append(v / norm)
    # unit-norm channels give pooled E[I^2] = 1 / nm; rescale to the target
    scale = np.sqrt(second_moment * n * m)
    return ColorImage.from_array(np.stack([scale * b.reshape(n, m) for b in basis]))
