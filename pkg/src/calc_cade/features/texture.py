"""Co-occurrence (SGLD) statistics and local binary patterns for small patches."""

from __future__ import annotations

import numpy as np

GRAY_LEVELS = 16
SGLD_OFFSETS = ((1, 0), (0, 1), (1, 1))  # (dx, dy)
SGLD_STAT_NAMES = (
    "energy",
    "entropy",
    "inertia",
    "correlation",
    "inverse_difference_moment",
    "sum_average",
    "sum_entropy",
    "difference_entropy",
    "cluster_shade",
)

# Clockwise from the top-left neighbour; bit k has weight 2**k.
LBP_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def quantize(patch, levels: int = GRAY_LEVELS) -> np.ndarray:
    """Min-max scale a patch onto integer levels ``0 .. levels-1``."""
    patch = np.asarray(patch, dtype=np.float64)
    lo, hi = patch.min(), patch.max()
    if hi <= lo:
        return np.zeros(patch.shape, dtype=np.intp)
    q = np.floor((patch - lo) / (hi - lo) * levels).astype(np.intp)
    return np.clip(q, 0, levels - 1)


def cooccurrence(q: np.ndarray, offset: tuple[int, int], levels: int = GRAY_LEVELS) -> np.ndarray:
    """Symmetrised, normalised co-occurrence matrix of a quantised patch."""
    dx, dy = offset
    h, w = q.shape
    a = q[: h - dy, : w - dx].ravel()
    b = q[dy:, dx:].ravel()
    counts = np.zeros((levels, levels), dtype=np.float64)
    np.add.at(counts, (a, b), 1.0)
    counts += counts.T
    return counts / counts.sum()


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def haralick_stats(P: np.ndarray) -> np.ndarray:
    """Nine statistics of a normalised symmetric co-occurrence matrix."""
    G = P.shape[0]
    i, j = np.indices(P.shape)
    mu = float((i * P).sum())
    var = float(((i - mu) ** 2 * P).sum())
    # zero variance: correlation is 0 by convention
    corr = float(((i - mu) * (j - mu) * P).sum() / var) if var > 0 else 0.0
    p_sum = np.bincount((i + j).ravel(), weights=P.ravel(), minlength=2 * G - 1)
    p_diff = np.bincount(np.abs(i - j).ravel(), weights=P.ravel(), minlength=G)
    return np.array(
        [
            float((P * P).sum()),
            _entropy(P),
            float(((i - j) ** 2 * P).sum()),
            corr,
            float((P / (1.0 + (i - j) ** 2)).sum()),
            float((np.arange(2 * G - 1) * p_sum).sum()),
            _entropy(p_sum),
            _entropy(p_diff),
            float(((i + j - 2 * mu) ** 3 * P).sum()),
        ]
    )


def sgld_features(patch) -> np.ndarray:
    """27 SGLD values: nine statistics for each offset, offset-major."""
    q = quantize(patch)
    return np.concatenate([haralick_stats(cooccurrence(q, off)) for off in SGLD_OFFSETS])


def lbp_codes(patch) -> np.ndarray:
    """8-neighbour LBP code of every interior pixel (bit set when neighbour >= centre)."""
    p = np.asarray(patch, dtype=np.float64)
    h, w = p.shape
    centre = p[1 : h - 1, 1 : w - 1]
    codes = np.zeros(centre.shape, dtype=np.intp)
    for bit, (dy, dx) in enumerate(LBP_NEIGHBOURS):
        nb = p[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        codes |= (nb >= centre).astype(np.intp) << bit
    return codes


def lbp_histogram(patch) -> np.ndarray:
    """Normalised 256-bin histogram of interior LBP codes."""
    codes = lbp_codes(patch)
    hist = np.bincount(codes.ravel(), minlength=256).astype(np.float64)
    return hist / hist.sum()
