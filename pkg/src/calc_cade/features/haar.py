"""Integral images and the Haar-like feature bank for the 12x12 window."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

KINDS = (
    "two-rect-horizontal",
    "two-rect-vertical",
    "three-rect-horizontal",
    "three-rect-vertical",
    "four-rect-checker",
)

# (cells across, cells down) for each kind
_CELLS = {
    "two-rect-horizontal": (2, 1),
    "two-rect-vertical": (1, 2),
    "three-rect-horizontal": (3, 1),
    "three-rect-vertical": (1, 3),
    "four-rect-checker": (2, 2),
}

BANK_SIZE = 1697


def integral_image(image) -> np.ndarray:
    """Summed-area table with a leading row and column of zeros.

    ``ii[y, x]`` is the sum of ``image[:y, :x]``, so the table has shape
    ``(height + 1, width + 1)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("integral_image expects a 2-D array")
    ii = np.zeros((image.shape[0] + 1, image.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(image, axis=0), axis=1, out=ii[1:, 1:])
    return ii


def rect_sum(ii: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> float:
    """Sum of pixels in the half-open rectangle ``[x0, x1) x [y0, y1)``."""
    h, w = ii.shape[0] - 1, ii.shape[1] - 1
    if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
        raise IndexError(f"rectangle ({x0},{y0})-({x1},{y1}) outside {w}x{h} image")
    return float(ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0])


@dataclass(frozen=True)
class HaarFeatureDescriptor:
    """One Haar-like feature in window coordinates.

    ``w`` and ``h`` are the size of a single cell; the feature spans
    ``cells_x * w`` by ``cells_y * h`` pixels starting at ``(x, y)``.
    """

    kind: str
    x: int
    y: int
    w: int
    h: int

    @property
    def extent(self) -> tuple[int, int]:
        cx, cy = _CELLS[self.kind]
        return cx * self.w, cy * self.h

    def rects(self) -> list[tuple[int, int, int, int, float]]:
        """Weighted rectangles ``(x0, y0, x1, y1, weight)``, half-open.

        White cells carry positive weight, black cells negative, and the
        weights balance so a constant window scores zero.
        """
        x, y, w, h = self.x, self.y, self.w, self.h
        if self.kind == "two-rect-horizontal":
            return [(x, y, x + w, y + h, 1.0), (x + w, y, x + 2 * w, y + h, -1.0)]
        if self.kind == "two-rect-vertical":
            return [(x, y, x + w, y + h, 1.0), (x, y + h, x + w, y + 2 * h, -1.0)]
        if self.kind == "three-rect-horizontal":
            return [
                (x, y, x + w, y + h, 1.0),
                (x + w, y, x + 2 * w, y + h, -2.0),
                (x + 2 * w, y, x + 3 * w, y + h, 1.0),
            ]
        if self.kind == "three-rect-vertical":
            return [
                (x, y, x + w, y + h, 1.0),
                (x, y + h, x + w, y + 2 * h, -2.0),
                (x, y + 2 * h, x + w, y + 3 * h, 1.0),
            ]
        if self.kind == "four-rect-checker":
            return [
                (x, y, x + w, y + h, 1.0),
                (x + w, y, x + 2 * w, y + h, -1.0),
                (x, y + h, x + w, y + 2 * h, -1.0),
                (x + w, y + h, x + 2 * w, y + 2 * h, 1.0),
            ]
        raise ValueError(f"unknown Haar kind {self.kind!r}")

    def corners(self) -> list[tuple[int, int, float]]:
        """Integral-image taps ``(dy, dx, coef)`` with duplicate corners merged."""
        taps: dict[tuple[int, int], float] = {}
        for x0, y0, x1, y1, wgt in self.rects():
            for dy, dx, s in ((y1, x1, 1.0), (y0, x1, -1.0), (y1, x0, -1.0), (y0, x0, 1.0)):
                taps[(dy, dx)] = taps.get((dy, dx), 0.0) + s * wgt
        return [(dy, dx, c) for (dy, dx), c in sorted(taps.items()) if c != 0.0]


def _enumerate(M: int, size_start: int, size_step: int, pos_step: int):
    for kind in KINDS:
        cx, cy = _CELLS[kind]
        for w in range(size_start, M + 1, size_step):
            for h in range(size_start, M + 1, size_step):
                if cx * w > M or cy * h > M:
                    continue
                for y in range(0, M - cy * h + 1, pos_step):
                    for x in range(0, M - cx * w + 1, pos_step):
                        yield HaarFeatureDescriptor(kind, x, y, w, h)


@lru_cache(maxsize=4)
def _bank(M: int, size: int) -> tuple[HaarFeatureDescriptor, ...]:
    # Coarse grid first: cells of odd size 1, 3, 5, ... at even offsets.
    base = list(_enumerate(M, 1, 2, 2))
    if len(base) >= size:
        return tuple(base[:size])
    seen = set(base)
    rest = [d for d in _enumerate(M, 1, 1, 1) if d not in seen]
    # Fill up with the smallest remaining cells first.
    rest.sort(key=lambda d: (d.w, d.h, KINDS.index(d.kind), d.y, d.x))
    if len(base) + len(rest) < size:
        raise ValueError(f"a {M}x{M} window holds fewer than {size} Haar features")
    return tuple(base + rest[: size - len(base)])


def enumerate_haar_bank(M: int = 12, size: int = BANK_SIZE) -> list[HaarFeatureDescriptor]:
    """The fixed, ordered Haar bank for an ``M x M`` window."""
    return list(_bank(M, size))


@lru_cache(maxsize=4)
def haar_weight_matrix(M: int = 12, size: int = BANK_SIZE) -> np.ndarray:
    """Dense ``(size, (M+1)**2)`` map from a window's integral image to features.

    ``local_ii.reshape(n, -1) @ W.T`` gives every bank feature for ``n``
    windows at once.
    """
    W = np.zeros((size, (M + 1) * (M + 1)), dtype=np.float64)
    for i, d in enumerate(_bank(M, size)):
        for dy, dx, c in d.corners():
            W[i, dy * (M + 1) + dx] += c
    W.setflags(write=False)
    return W


def haar_value(ii: np.ndarray, window_origin: tuple[int, int], d: HaarFeatureDescriptor) -> float:
    """Weighted rectangle-sum difference of ``d`` for the window at ``(x, y)``."""
    ox, oy = window_origin
    ew, eh = d.extent
    H, W = ii.shape[0] - 1, ii.shape[1] - 1
    if ox < 0 or oy < 0 or ox + d.x + ew > W or oy + d.y + eh > H:
        raise IndexError(f"window at {window_origin} does not contain feature {d}")
    total = 0.0
    for x0, y0, x1, y1, wgt in d.rects():
        total += wgt * rect_sum(ii, ox + x0, oy + y0, ox + x1, oy + y1)
    return total


def window_integrals(patches: np.ndarray) -> np.ndarray:
    """Flattened local integral images for a stack of ``(n, M, M)`` patches."""
    patches = np.asarray(patches, dtype=np.float64)
    n, M = patches.shape[0], patches.shape[1]
    out = np.zeros((n, M + 1, M + 1), dtype=np.float64)
    np.cumsum(np.cumsum(patches, axis=1), axis=2, out=out[:, 1:, 1:])
    return out.reshape(n, -1)


def haar_features(patches: np.ndarray, M: int = 12) -> np.ndarray:
    """All bank features for ``(n, M, M)`` patches, shape ``(n, 1697)``."""
    return window_integrals(patches) @ haar_weight_matrix(M).T
