"""Candidate detection, candidate classification and proximity clustering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .boosting import CascadeModel
from .data import EIGHT_CONNECTED, Mammogram
from .features import feature_vector, resize_patch_bicubic
from .windows import WindowGrid, scan

log = logging.getLogger(__name__)

MACRO_SIZE_MM = 1.0
CLUSTER_DIST_MM = 10.0
MIN_CLUSTER_SIZE = 3


@dataclass
class CandidateDetection:
    """A connected group of accepted pixels.

    ``mask`` is cropped to ``bbox = (x0, y0, x1, y1)`` (inclusive corners).
    ``p1_score`` is the best cascade margin inside the component; ``score``
    is the candidate classifier margin once it has been computed.
    """

    mask: np.ndarray
    bbox: tuple[int, int, int, int]
    centroid_mm: tuple[float, float]
    p1_score: float = 0.0
    score: float | None = None

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def ranking_score(self) -> float:
        return self.p1_score if self.score is None else self.score


def is_macro(width_px: int, height_px: int, pixel_spacing_mm: float, size_mm: float = MACRO_SIZE_MM, rule: str = "and") -> bool:
    """Whether a component is too large to be a micro-calcification.

    ``rule="and"`` needs both box sides above ``size_mm``; ``"or"`` needs one.
    """
    wide = width_px * pixel_spacing_mm > size_mm
    tall = height_px * pixel_spacing_mm > size_mm
    if rule == "and":
        return wide and tall
    if rule == "or":
        return wide or tall
    raise ValueError(f"macro rule must be 'and' or 'or', got {rule!r}")


def components(accepted: np.ndarray, margin: np.ndarray, pixel_spacing_mm: float):
    labels, _ = ndimage.label(accepted, structure=EIGHT_CONNECTED)
    out = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        crop = labels[sl] == k
        ys, xs = np.nonzero(crop)
        y0, x0 = sl[0].start, sl[1].start
        centroid = ((xs.mean() + x0) * pixel_spacing_mm, (ys.mean() + y0) * pixel_spacing_mm)
        out.append(
            CandidateDetection(
                crop,
                (x0, y0, sl[1].stop - 1, sl[0].stop - 1),
                (float(centroid[0]), float(centroid[1])),
                float(margin[sl][crop].max()),
            )
        )
    return out


def detect_candidates(
    image: Mammogram,
    model: CascadeModel,
    stride: int = 1,
    macro_size_mm: float = MACRO_SIZE_MM,
    macro_rule: str = "and",
) -> list[CandidateDetection]:
    """Pixel-wise cascade, 8-connected grouping, macro-calcification removal."""
    grid = WindowGrid(image.pixels, model.window_size)
    accepted, margin = scan(model.stages, grid, stride)
    cands = components(accepted, margin, image.pixel_spacing_mm)
    kept = [
        c
        for c in cands
        if not is_macro(c.width, c.height, image.pixel_spacing_mm, macro_size_mm, macro_rule)
    ]
    if len(kept) < len(cands):
        log.debug("%s: removed %d macro-calcifications", image.image_id, len(cands) - len(kept))
    return kept


def candidate_patch(image: Mammogram, cand: CandidateDetection, size: int = 12) -> np.ndarray:
    x0, y0, x1, y1 = cand.bbox
    return resize_patch_bicubic(image.pixels[y0 : y1 + 1, x0 : x1 + 1], (size, size))


def candidate_features(image: Mammogram, cand: CandidateDetection) -> np.ndarray:
    return feature_vector(candidate_patch(image, cand), cand.mask)


def feature_matrix(image: Mammogram, candidates) -> tuple[np.ndarray, list[int]]:
    """Feature rows for the candidates that yield finite features, with their indices."""
    rows, ok = [], []
    for i, c in enumerate(candidates):
        try:
            rows.append(candidate_features(image, c))
        except ValueError as exc:
            log.warning("%s: dropping candidate %s: %s", image.image_id, c.bbox, exc)
            continue
        ok.append(i)
    X = np.vstack(rows) if rows else np.zeros((0, 1991))
    return X, ok


def score_candidates(image: Mammogram, candidates, model: CascadeModel) -> list[CandidateDetection]:
    """Candidates that survive feature extraction, with classifier margins attached."""
    X, ok = feature_matrix(image, candidates)
    stage = model.stages[0]
    margins = stage.score_matrix(X) - stage.stage_threshold if len(ok) else np.zeros(0)
    return [replace(candidates[i], score=float(m)) for i, m in zip(ok, margins)]


def classify_candidates(image: Mammogram, candidates, model: CascadeModel, threshold: float = 0.0):
    """Keep candidates whose classifier margin is at least ``threshold``."""
    return [c for c in score_candidates(image, candidates, model) if c.score >= threshold]


@dataclass
class Cluster:
    members: list[int]
    edges: list[tuple[int, int, float]] = field(default_factory=list)


@dataclass
class ClusterSet:
    clusters: list[Cluster] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def member_sets(self) -> list[frozenset]:
        return [frozenset(c.members) for c in self.clusters]

    def assignment(self, n: int) -> np.ndarray:
        """Cluster index per item, -1 when unclustered."""
        out = np.full(n, -1, dtype=int)
        for k, c in enumerate(self.clusters):
            out[c.members] = k
        return out


def _centroids(items) -> np.ndarray:
    pts = [c.centroid_mm if hasattr(c, "centroid_mm") else c for c in items]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def cluster_candidates(candidates, max_dist_mm: float = CLUSTER_DIST_MM, min_size: int = MIN_CLUSTER_SIZE) -> ClusterSet:
    """Connected components of the graph joining centroids closer than ``max_dist_mm``.

    ``candidates`` may be detections or plain ``(x, y)`` points in mm.
    Components with fewer than ``min_size`` members are dropped.
    """
    pts = _centroids(candidates)
    n = len(pts)
    if n == 0:
        return ClusterSet([])
    pairs = cKDTree(pts).query_pairs(max_dist_mm, output_type="ndarray")
    if pairs.size:
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        strict = d < max_dist_mm
        pairs, d = pairs[strict], d[strict]
    else:
        d = np.zeros(0)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    edges_of: dict[int, list] = {}
    for (i, j), dist in zip(pairs.tolist(), d.tolist()):
        a, b = min(i, j), max(i, j)
        edges_of.setdefault(int(labels[a]), []).append((a, b, float(dist)))
    clusters = [
        Cluster(members, sorted(edges_of.get(lab, [])))
        for lab, members in groups.items()
        if len(members) >= min_size
    ]
    clusters.sort(key=lambda c: c.members[0])
    return ClusterSet(clusters)
