"""Feature extractors used by both detection stages.

The candidate feature vector is the concatenation
``shape[11] | sgld[27] | haar[1697] | lbp[256]`` (1,991 values).
"""

from __future__ import annotations

import numpy as np

from .haar import (
    BANK_SIZE,
    KINDS,
    HaarFeatureDescriptor,
    enumerate_haar_bank,
    haar_features,
    haar_value,
    haar_weight_matrix,
    integral_image,
    rect_sum,
    window_integrals,
)
from .resize import resize_patch_bicubic
from .shape import SHAPE_NAMES, shape_features
from .texture import lbp_codes, lbp_histogram, sgld_features

N_SHAPE = 11
N_SGLD = 27
N_HAAR = BANK_SIZE
N_LBP = 256
FEATURE_LENGTH = N_SHAPE + N_SGLD + N_HAAR + N_LBP

SLICES = {
    "shape": slice(0, N_SHAPE),
    "sgld": slice(N_SHAPE, N_SHAPE + N_SGLD),
    "haar": slice(N_SHAPE + N_SGLD, N_SHAPE + N_SGLD + N_HAAR),
    "lbp": slice(N_SHAPE + N_SGLD + N_HAAR, FEATURE_LENGTH),
}


def feature_vector(patch, mask) -> np.ndarray:
    """Candidate descriptor from a 12x12 appearance patch and its original mask."""
    patch = np.asarray(patch, dtype=np.float64)
    if not np.all(np.isfinite(patch)):
        raise ValueError("patch holds non-finite pixels")
    z = np.concatenate(
        [
            shape_features(mask),
            sgld_features(patch),
            haar_features(patch[None]).ravel(),
            lbp_histogram(patch),
        ]
    )
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite feature value")
    return z


__all__ = [
    "BANK_SIZE",
    "FEATURE_LENGTH",
    "KINDS",
    "HaarFeatureDescriptor",
    "SHAPE_NAMES",
    "SLICES",
    "enumerate_haar_bank",
    "feature_vector",
    "haar_features",
    "haar_value",
    "haar_weight_matrix",
    "integral_image",
    "lbp_codes",
    "lbp_histogram",
    "rect_sum",
    "resize_patch_bicubic",
    "sgld_features",
    "shape_features",
    "window_integrals",
]
