"""Dense M x M windows around every pixel, evaluated through one integral image.

The window of pixel ``(r, c)`` spans rows ``r - M//2 .. r + M - 1 - M//2``
(likewise for columns); pixels beyond the border are replicated.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .features.haar import enumerate_haar_bank, window_integrals


def _taps(M: int):
    return [d.corners() for d in enumerate_haar_bank(M)]


_TAP_CACHE: dict[int, list] = {}


def haar_taps(M: int = 12):
    if M not in _TAP_CACHE:
        _TAP_CACHE[M] = _taps(M)
    return _TAP_CACHE[M]


class WindowGrid:
    def __init__(self, pixels, M: int = 12):
        pixels = np.asarray(pixels, dtype=np.float64)
        self.M = M
        self.shape = pixels.shape
        before, after = M // 2, M - 1 - M // 2
        padded = np.pad(pixels, ((before, after), (before, after)), mode="edge")
        # Haar weights are balanced, so removing a constant keeps every feature
        # and keeps the running sums small.
        self.padded = padded - padded.mean()
        ii = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
        np.cumsum(np.cumsum(self.padded, axis=0), axis=1, out=ii[1:, 1:])
        self.ii = ii
        self.taps = haar_taps(M)

    def feature_at(self, j: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Haar feature ``j`` for the windows of the given pixels."""
        out = np.zeros(rows.shape, dtype=np.float64)
        for dy, dx, c in self.taps[j]:
            out += c * self.ii[rows + dy, cols + dx]
        return out

    def feature_map(self, j: int) -> np.ndarray:
        """Haar feature ``j`` for every pixel of the image."""
        H, W = self.shape
        out = np.zeros(self.shape, dtype=np.float64)
        for dy, dx, c in self.taps[j]:
            out += c * self.ii[dy : dy + H, dx : dx + W]
        return out

    def patches(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        view = sliding_window_view(self.padded, (self.M, self.M))
        return view[rows, cols]

    def local_integrals(self, rows, cols, chunk: int = 20_000) -> np.ndarray:
        rows, cols = np.asarray(rows), np.asarray(cols)
        out = np.empty((rows.size, (self.M + 1) ** 2))
        for s in range(0, rows.size, chunk):
            out[s : s + chunk] = window_integrals(self.patches(rows[s : s + chunk], cols[s : s + chunk]))
        return out


def stage_scores(stage, grid: WindowGrid, rows, cols) -> np.ndarray:
    score = np.zeros(rows.shape, dtype=np.float64)
    for st in stage.stumps:
        score += st.alpha * st.predict(grid.feature_at(st.feature_index, rows, cols))
    return score


def scan(stages, grid: WindowGrid, stride: int = 1):
    """Run cascade stages densely over the image.

    Returns ``(accepted, margin)``: a boolean map of pixels accepted by every
    stage and the margin of the last stage each pixel reached (NaN for
    pixels skipped by the stride).
    """
    H, W = grid.shape
    rr, cc = np.meshgrid(np.arange(0, H, stride), np.arange(0, W, stride), indexing="ij")
    rows, cols = rr.ravel(), cc.ravel()
    margin = np.full(grid.shape, np.nan)
    margin[rows, cols] = np.inf
    for stage in stages:
        if rows.size == 0:
            break
        m = stage_scores(stage, grid, rows, cols) - stage.stage_threshold
        margin[rows, cols] = m
        keep = m >= 0
        rows, cols = rows[keep], cols[keep]
    accepted = np.zeros(grid.shape, dtype=bool)
    accepted[rows, cols] = True
    return accepted, margin
