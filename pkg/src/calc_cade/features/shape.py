"""Geometric descriptors of a single candidate mask."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

SHAPE_NAMES = (
    "area",
    "perimeter",
    "perimeter_area_ratio",
    "rectangularity",
    "circularity",
    "eccentricity",
    "major_axis_length",
    "minor_axis_length",
    "solidity_proxy",
    "extent_x",
    "extent_y",
)

_HALF_DIAG = math.sqrt(2.0) / 2.0


def border_edge_count(mask: np.ndarray) -> int:
    """Number of unit pixel edges between foreground and background."""
    p = np.pad(mask.astype(np.int8), 1)
    return int(np.abs(np.diff(p, axis=0)).sum() + np.abs(np.diff(p, axis=1)).sum())


def contour_length(mask: np.ndarray) -> float:
    """Length of the iso-0.5 marching-squares contour of a binary mask.

    Each 2x2 cell contributes a straight unit segment, one half-diagonal,
    or two half-diagonals for the saddle case.
    """
    p = np.pad(mask.astype(np.int8), 1)
    a, b, c, d = p[:-1, :-1], p[:-1, 1:], p[1:, :-1], p[1:, 1:]
    s = a + b + c + d
    saddle = (a == d) & (b == c) & (a != b)
    corner = (s == 1) | (s == 3)
    straight = (s == 2) & ~saddle
    return float(
        corner.sum() * _HALF_DIAG + straight.sum() * 1.0 + saddle.sum() * 2 * _HALF_DIAG
    )


def shape_features(mask) -> np.ndarray:
    """The 11 shape values of a binary mask, in ``SHAPE_NAMES`` order."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2 or not mask.any():
        raise ValueError("shape_features needs a 2-D mask with at least one foreground pixel")
    ys, xs = np.nonzero(mask)
    area = float(ys.size)
    perimeter = float(border_edge_count(mask))
    extent_x = float(xs.max() - xs.min() + 1)
    extent_y = float(ys.max() - ys.min() + 1)
    rectangularity = area / (extent_x * extent_y)
    circularity = 4.0 * math.pi * area / contour_length(mask) ** 2

    dy, dx = ys - ys.mean(), xs - xs.mean()
    cov = np.array([[np.mean(dx * dx), np.mean(dx * dy)], [np.mean(dx * dy), np.mean(dy * dy)]])
    lam_minor, lam_major = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    eccentricity = math.sqrt(1.0 - lam_minor / lam_major) if lam_major > 0 else 0.0
    filled = float(ndimage.binary_fill_holes(mask).sum())

    return np.array(
        [
            area,
            perimeter,
            perimeter / area,
            rectangularity,
            circularity,
            eccentricity,
            4.0 * math.sqrt(lam_major),
            4.0 * math.sqrt(lam_minor),
            area / filled,
            extent_x,
            extent_y,
        ]
    )
