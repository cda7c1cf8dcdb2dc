"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def rect_sum_loop(img, x0, y0, x1, y1) -> float:
    total = 0.0
    for y in range(y0, y1):
        for x in range(x0, x1):
            total += float(img[y][x])
    return total


def haar_loop(window, kind, x, y, w, h) -> float:
    """Haar value from plain pixel loops, written independently of the library."""
    s = lambda cx, cy: rect_sum_loop(window, x + cx * w, y + cy * h, x + (cx + 1) * w, y + (cy + 1) * h)  # noqa: E731
    if kind == "two-rect-horizontal":
        return s(0, 0) - s(1, 0)
    if kind == "two-rect-vertical":
        return s(0, 0) - s(0, 1)
    if kind == "three-rect-horizontal":
        return s(0, 0) - 2 * s(1, 0) + s(2, 0)
    if kind == "three-rect-vertical":
        return s(0, 0) - 2 * s(0, 1) + s(0, 2)
    if kind == "four-rect-checker":
        return s(0, 0) - s(1, 0) - s(0, 1) + s(1, 1)
    raise ValueError(kind)


def cooccurrence_pairs(q, dx, dy, levels=16) -> np.ndarray:
    """Count every (p, p + offset) pair in both directions, then normalise."""
    h, w = q.shape
    C = np.zeros((levels, levels))
    for y in range(h):
        for x in range(w):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                C[q[y, x], q[yy, xx]] += 1
                C[q[yy, xx], q[y, x]] += 1
    return C / C.sum()


def lbp_loop(patch) -> np.ndarray:
    """Clockwise from the top-left neighbour, bit k worth 2**k, bit set when neighbour >= centre."""
    ring = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    h, w = patch.shape
    out = np.zeros((h - 2, w - 2), dtype=int)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            code = 0
            for k, (dy, dx) in enumerate(ring):
                if patch[y + dy][x + dx] >= patch[y][x]:
                    code += 2**k
            out[y - 1, x - 1] = code
    return out


def shape_loop(mask) -> dict:
    """Area, edge perimeter, extents and second moments by explicit loops."""
    h, w = mask.shape
    pts = [(x, y) for y in range(h) for x in range(w) if mask[y, x]]
    area = len(pts)
    perim = 0
    for x, y in pts:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            xx, yy = x + dx, y + dy
            if not (0 <= xx < w and 0 <= yy < h and mask[yy, xx]):
                perim += 1
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    mx, my = sum(xs) / area, sum(ys) / area
    cxx = sum((x - mx) ** 2 for x in xs) / area
    cyy = sum((y - my) ** 2 for y in ys) / area
    cxy = sum((x - mx) * (y - my) for x, y in pts) / area
    # closed-form eigenvalues of the 2x2 covariance
    tr, det = cxx + cyy, cxx * cyy - cxy * cxy
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    l1, l2 = tr / 2 + disc, max(tr / 2 - disc, 0.0)
    ext_x = max(xs) - min(xs) + 1
    ext_y = max(ys) - min(ys) + 1
    return {
        "area": area,
        "perimeter": perim,
        "extent_x": ext_x,
        "extent_y": ext_y,
        "rectangularity": area / (ext_x * ext_y),
        "major_axis_length": 4 * math.sqrt(l1),
        "minor_axis_length": 4 * math.sqrt(l2),
        "eccentricity": math.sqrt(1 - l2 / l1) if l1 > 0 else 0.0,
    }


def union_find_clusters(points, max_dist, min_size) -> set:
    """Member sets of the < max_dist proximity graph components, by union-find."""
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(points[i], points[j]) < max_dist:
                parent[find(i)] = find(j)
    groups: dict = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return {frozenset(g) for g in groups.values() if len(g) >= min_size}


def exhaustive_match_count(O, min_overlap=0.5):
    """Best lexicographic assignment: maximal sorted overlap vector over all one-to-one matchings.

    With distinct overlaps, greedy descending-overlap matching picks exactly
    this assignment, so the test compares pair sets.
    """
    n_det, n_ann = O.shape
    best_key, best_pairs = None, set()
    dets = list(range(n_det))
    for k in range(0, min(n_det, n_ann) + 1):
        for ds in itertools.combinations(dets, k):
            for ans in itertools.permutations(range(n_ann), k):
                pairs = list(zip(ds, ans))
                if any(O[d, a] < min_overlap for d, a in pairs):
                    continue
                key = sorted((O[d, a] for d, a in pairs), reverse=True)
                if best_key is None or key > best_key:
                    best_key, best_pairs = key, set(pairs)
    return best_pairs


def roc_bruteforce(labels, scores):
    """(fpr, tpr) at every threshold in the score set, plus the trivial end points."""
    labels = np.asarray(labels, bool)
    scores = np.asarray(scores, float)
    pts = {(0.0, 0.0), (1.0, 1.0)}
    for t in set(scores.tolist()):
        hit = scores >= t
        pts.add(((hit & ~labels).sum() / (~labels).sum(), (hit & labels).sum() / labels.sum()))
    return pts


def auc_rank(labels, scores) -> float:
    """Mann-Whitney estimate of the ROC area with tie correction."""
    from scipy.stats import rankdata

    labels = np.asarray(labels, bool)
    r = rankdata(scores)
    n1, n0 = labels.sum(), (~labels).sum()
    return float((r[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))
