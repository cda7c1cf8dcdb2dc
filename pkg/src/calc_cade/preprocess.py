"""Quantum noise equalisation.

Noise in a photon-counting image is modelled as ``p = gain * P + offset``
with ``P`` Poisson. A robust line through (local mean, local noise
variance) pairs gives ``gain`` as its slope and ``offset`` as its root on
the mean axis. The generalised Anscombe transform then maps the image to
unit noise standard deviation.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .data import Mammogram

log = logging.getLogger(__name__)

TILE = 16
MAX_FIT_TILES = 2000


@dataclass(frozen=True)
class NoiseModel:
    gain_estimate: float
    offset_estimate: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if not (self.gain_estimate > 0 and np.isfinite(self.gain_estimate)):
            raise ValueError(f"gain must be positive, got {self.gain_estimate}")

    def to_dict(self) -> dict:
        return asdict(self)


def tile_statistics(pixels: np.ndarray, tile: int = TILE):
    """Per-tile mean, difference-based noise variance and gradient magnitude."""
    h, w = pixels.shape
    ty, tx = h // tile, w // tile
    t = pixels[: ty * tile, : tx * tile].reshape(ty, tile, tx, tile).transpose(0, 2, 1, 3)
    means = t.mean(axis=(2, 3))
    # first differences cancel the smooth background; each has variance 2 sigma^2
    dh = np.diff(t, axis=3)
    dv = np.diff(t, axis=2)
    # variance (not mean square) of the differences also cancels a linear ramp
    noise_var = 0.25 * (dh.var(axis=(2, 3)) + dv.var(axis=(2, 3)))
    if ty > 1 and tx > 1:
        gy, gx = np.gradient(means)
        grad = np.hypot(gx, gy)
    else:
        grad = np.zeros_like(means)
    return means.ravel(), noise_var.ravel(), grad.ravel()


def estimate_noise(image: Mammogram, tile: int = TILE) -> NoiseModel:
    """Fit the Poisson noise gain and dark offset of an image."""
    pixels = image.pixels
    if pixels.size < 10_000:
        raise ValueError(f"noise estimation needs at least 10^4 pixels, got {pixels.size}")
    means, var, grad = tile_statistics(pixels, tile)
    keep = grad <= np.median(grad)
    means, var = means[keep], var[keep]
    if means.size > MAX_FIT_TILES:
        idx = np.linspace(0, means.size - 1, MAX_FIT_TILES).round().astype(int)
        means, var = means[idx], var[idx]

    spread = np.ptp(means) if means.size else 0.0
    slope = intercept = np.nan
    if means.size >= 3 and spread > 1e-9 * max(1.0, abs(means.mean())):
        slope, intercept, _, _ = stats.theilslopes(var, means)
        if np.isfinite(slope) and slope > 0:
            slope, intercept = _refine(means, var, slope, intercept)
    if not (np.isfinite(slope) and slope > 0):
        mean = float(pixels.mean())
        gain = float(pixels.var()) / mean if mean > 0 else 0.0
        log.warning("%s: degenerate noise fit, falling back to global variance", image.image_id or "image")
        return NoiseModel(gain if gain > 0 else 1.0, 0.0, degenerate=True)
    offset = max(-intercept / slope, 0.0)
    return NoiseModel(float(slope), float(offset))


def _refine(means, var, slope, intercept, rounds: int = 5):
    """Reweighted least squares from a robust start.

    A tile's variance estimate has spread proportional to its variance, so
    weights go as ``1 / fitted**2``; tiles more than 50% off the current fit
    are left out. This pins the intercept far better than the median slope.
    """
    for _ in range(rounds):
        fitted = slope * means + intercept
        ok = (fitted > 0) & (np.abs(var - fitted) <= 0.5 * np.abs(fitted))
        if ok.sum() < 3:
            break
        sw = 1.0 / fitted[ok]
        A = np.stack([means[ok] * sw, sw], axis=1)
        s, i = np.linalg.lstsq(A, var[ok] * sw, rcond=None)[0]
        if not (np.isfinite(s) and s > 0):
            break
        slope, intercept = float(s), float(i)
    return slope, intercept


def anscombe(pixels, model: NoiseModel) -> np.ndarray:
    counts = np.maximum(np.asarray(pixels, dtype=np.float64) - model.offset_estimate, 0.0)
    return 2.0 * np.sqrt(counts / model.gain_estimate + 3.0 / 8.0)


def equalize(image: Mammogram, model: NoiseModel) -> Mammogram:
    """Variance-stabilised copy of ``image`` (noise std close to 1)."""
    return image.with_pixels(anscombe(image.pixels, model))


def preprocess(image: Mammogram) -> tuple[Mammogram, NoiseModel]:
    model = estimate_noise(image)
    return equalize(image, model), model
