"""Corner-aligned bicubic resampling of small patches."""

from __future__ import annotations

import numpy as np

CUBIC_A = -0.5


def cubic_kernel(t, a: float = CUBIC_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _weights(n_src: int, n_dst: int) -> np.ndarray:
    """``(n_dst, n_src)`` interpolation matrix with replicated edges."""
    W = np.zeros((n_dst, n_src))
    if n_src == 1:
        W[:, 0] = 1.0
        return W
    scale = (n_src - 1) / (n_dst - 1) if n_dst > 1 else 0.0
    for k in range(n_dst):
        s = k * scale
        base = int(np.floor(s))
        for tap in range(base - 1, base + 3):
            wgt = float(cubic_kernel(s - tap))
            if wgt != 0.0:
                W[k, min(max(tap, 0), n_src - 1)] += wgt
    return W


def resize_patch_bicubic(subimage, target: tuple[int, int] = (12, 12)) -> np.ndarray:
    """Resample ``subimage`` to ``target`` (rows, cols) with the a=-0.5 cubic kernel.

    Source and destination corners coincide, so a ramp keeps its end values.
    """
    src = np.asarray(subimage, dtype=np.float64)
    if src.ndim != 2 or src.size == 0:
        raise ValueError("resize_patch_bicubic needs a non-empty 2-D array")
    if src.shape == tuple(target):
        return src.copy()
    return _weights(src.shape[0], target[0]) @ src @ _weights(src.shape[1], target[1]).T
