"""Detection matching, FROC and case-level ROC curves, fold aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import CLUSTER_DIST_MM, MIN_CLUSTER_SIZE, cluster_candidates


def fpi_grid(lo: float = 1e-2, hi: float = 1e2, n: int = 32) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def fpr_grid(n: int = 51) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


# ---------------------------------------------------------------------------
# matching


def overlap(det, ann, metric: str = "iou") -> float:
    """Overlap of two bbox-cropped masks.

    ``iou`` is intersection over union; ``ioa`` is intersection over the
    annotation area.
    """
    dx0, dy0, dx1, dy1 = det.bbox
    ax0, ay0, ax1, ay1 = ann.bbox
    ix0, iy0, ix1, iy1 = max(dx0, ax0), max(dy0, ay0), min(dx1, ax1), min(dy1, ay1)
    inter = 0
    if ix0 <= ix1 and iy0 <= iy1:
        dm = det.mask[iy0 - dy0 : iy1 - dy0 + 1, ix0 - dx0 : ix1 - dx0 + 1]
        am = ann.mask[iy0 - ay0 : iy1 - ay0 + 1, ix0 - ax0 : ix1 - ax0 + 1]
        inter = int((dm & am).sum())
    a_area = int(ann.mask.sum())
    if metric == "iou":
        union = int(det.mask.sum()) + a_area - inter
        return inter / union if union else 0.0
    if metric == "ioa":
        return inter / a_area if a_area else 0.0
    raise ValueError(f"overlap metric must be 'iou' or 'ioa', got {metric!r}")


def overlap_matrix(dets, annots, metric: str = "iou") -> np.ndarray:
    out = np.zeros((len(dets), len(annots)))
    for i, d in enumerate(dets):
        for j, a in enumerate(annots):
            out[i, j] = overlap(d, a, metric)
    return out


@dataclass
class MatchResult:
    tp_pairs: list = field(default_factory=list)  # (detection, annotation, overlap or shared count)
    fp_detections: list = field(default_factory=list)
    fn_annotations: list = field(default_factory=list)

    @property
    def n_tp(self) -> int:
        return len(self.tp_pairs)

    def det_to_ann(self) -> dict:
        return {d: a for d, a, _ in self.tp_pairs}


def greedy_match(O: np.ndarray, scores=None, min_overlap: float = 0.5) -> MatchResult:
    """One-to-one greedy matching on an overlap matrix (detections x annotations).

    Pairs are taken by descending overlap; ties prefer the higher detection
    score, then the lower detection index, then the lower annotation index.
    Only pairs at or above ``min_overlap`` are matched.
    """
    n_det, n_ann = O.shape
    scores = np.zeros(n_det) if scores is None else np.asarray(scores, dtype=np.float64)
    di, aj = np.nonzero(O >= min_overlap)
    order = sorted(range(len(di)), key=lambda k: (-O[di[k], aj[k]], -scores[di[k]], di[k], aj[k]))
    used_d, used_a, pairs = set(), set(), []
    for k in order:
        d, a = int(di[k]), int(aj[k])
        if d in used_d or a in used_a:
            continue
        used_d.add(d)
        used_a.add(a)
        pairs.append((d, a, float(O[d, a])))
    return MatchResult(
        pairs,
        [d for d in range(n_det) if d not in used_d],
        [a for a in range(n_ann) if a not in used_a],
    )


def match_individual(dets, annots, min_overlap: float = 0.5, metric: str = "iou") -> MatchResult:
    scores = [d.ranking_score() if hasattr(d, "ranking_score") else getattr(d, "score", 0.0) or 0.0 for d in dets]
    return greedy_match(overlap_matrix(dets, list(annots), metric), scores, min_overlap)


def match_clusters(det_clusters, gt_clusters, individual: MatchResult, min_shared: int = 2) -> MatchResult:
    """Match detected clusters to ground-truth clusters through individual matches.

    A detected cluster is a true positive when at least ``min_shared`` of its
    members are matched to members of one ground-truth cluster. Clusters are
    given as iterables of member indices (detections and annotations).
    """
    det_sets = [list(c.members if hasattr(c, "members") else c) for c in det_clusters]
    gt_sets = [set(c.members if hasattr(c, "members") else c) for c in gt_clusters]
    d2a = individual.det_to_ann()
    shared = np.zeros((len(det_sets), len(gt_sets)), dtype=int)
    for i, members in enumerate(det_sets):
        for m in members:
            a = d2a.get(m)
            if a is None:
                continue
            for g, gset in enumerate(gt_sets):
                if a in gset:
                    shared[i, g] += 1
    used_d, used_g, pairs = set(), set(), []
    cand = [(int(shared[i, g]), i, g) for i in range(shared.shape[0]) for g in range(shared.shape[1]) if shared[i, g] >= min_shared]
    for s, i, g in sorted(cand, key=lambda t: (-t[0], t[1], t[2])):
        if i in used_d or g in used_g:
            continue
        used_d.add(i)
        used_g.add(g)
        pairs.append((i, g, s))
    return MatchResult(
        pairs,
        [i for i in range(len(det_sets)) if i not in used_d],
        [g for g in range(len(gt_sets)) if g not in used_g],
    )


# ---------------------------------------------------------------------------
# curves


@dataclass
class Curve:
    """Operating points of a threshold sweep, in sweep order (threshold descending)."""

    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    def interpolate(self, grid) -> np.ndarray:
        """Linear interpolation of y at ``grid``; held flat past the last point."""
        x, y = np.asarray(self.x, float), np.asarray(self.y, float)
        order = np.lexsort((y, x))
        x, y = x[order], y[order]
        # best y at each distinct x, as a function of x
        last = np.r_[x[1:] != x[:-1], True]
        xu, yu = x[last], np.maximum.accumulate(y)[last]
        return np.interp(np.asarray(grid, float), xu, yu, left=yu[0], right=yu[-1])

    def y_at(self, x0: float) -> float:
        return float(self.interpolate([x0])[0])

    def x_at(self, y0: float) -> float:
        """Smallest x (on the interpolated curve) reaching y0; inf if never."""
        x, y = np.asarray(self.x, float), np.asarray(self.y, float)
        order = np.lexsort((y, x))
        x, y = x[order], np.maximum.accumulate(y[order])
        hit = np.flatnonzero(y >= y0)
        if hit.size == 0:
            return float("inf")
        k = hit[0]
        if k == 0 or y[k] == y[k - 1]:
            return float(x[k])
        return float(x[k - 1] + (y0 - y[k - 1]) * (x[k] - x[k - 1]) / (y[k] - y[k - 1]))


@dataclass
class FrocCurve(Curve):
    n_images: int = 0
    n_targets: int = 0

    @property
    def fpi(self):
        return self.x

    @property
    def tpr(self):
        return self.y


@dataclass
class RocCurve(Curve):
    @property
    def fpr(self):
        return self.x

    @property
    def tpr(self):
        return self.y


def _prefix_tp_counts(dets, annots, min_overlap, metric):
    """TP count for each score-sorted prefix of an image's detections."""
    if not dets:
        return np.zeros(0), np.zeros(0, dtype=int)
    scores = np.array([d.ranking_score() for d in dets])
    order = np.argsort(-scores, kind="stable")
    O = overlap_matrix([dets[i] for i in order], list(annots), metric)
    s_sorted = scores[order]
    tp = np.zeros(len(dets), dtype=int)
    for k in range(len(dets)):
        # only prefixes ending at a distinct score are operating points
        if k + 1 < len(dets) and s_sorted[k + 1] == s_sorted[k]:
            continue
        tp[k] = greedy_match(O[: k + 1], s_sorted[: k + 1], min_overlap).n_tp
    return s_sorted, tp


def froc(per_image, min_overlap: float = 0.5, metric: str = "iou") -> FrocCurve:
    """Individual-detection FROC over all distinct scores.

    ``per_image`` is a sequence of ``(detections, annotations)`` pairs;
    detections rank by ``ranking_score()``.
    """
    per_image = list(per_image)
    if not per_image:
        raise ValueError("FROC needs at least one image")
    n_targets = sum(len(a) for _, a in per_image)
    if n_targets == 0:
        raise ValueError("FROC needs at least one annotation")
    events = []  # (score, delta_tp, delta_det)
    for dets, annots in per_image:
        s_sorted, tp = _prefix_tp_counts(list(dets), annots, min_overlap, metric)
        prev_tp, prev_n = 0, 0
        for k in range(len(s_sorted)):
            if k + 1 < len(s_sorted) and s_sorted[k + 1] == s_sorted[k]:
                continue
            events.append((s_sorted[k], tp[k] - prev_tp, k + 1 - prev_n))
            prev_tp, prev_n = tp[k], k + 1
    events.sort(key=lambda e: -e[0])
    thr, fpi, tpr = [np.inf], [0.0], [0.0]
    tp_total = det_total = 0
    n_img = len(per_image)
    i = 0
    while i < len(events):
        s = events[i][0]
        while i < len(events) and events[i][0] == s:
            tp_total += events[i][1]
            det_total += events[i][2]
            i += 1
        thr.append(s)
        fpi.append((det_total - tp_total) / n_img)
        tpr.append(tp_total / n_targets)
    return FrocCurve(np.array(fpi), np.array(tpr), np.array(thr), n_img, n_targets)


def sweep_thresholds(scores, max_points: int | None = 256) -> np.ndarray:
    """Distinct scores, descending, thinned to at most ``max_points``."""
    s = np.unique(np.asarray(scores, dtype=np.float64))[::-1]
    if max_points is not None and s.size > max_points:
        s = s[np.unique(np.linspace(0, s.size - 1, max_points).round().astype(int))]
    return s


def gt_clusters(annots, pixel_spacing_mm: float, max_dist_mm: float = CLUSTER_DIST_MM, min_size: int = MIN_CLUSTER_SIZE):
    """Reference clusters from the annotations, by the same proximity rule."""
    pts = [tuple(v * pixel_spacing_mm for v in a.centroid_px()) for a in annots]
    return cluster_candidates(pts, max_dist_mm, min_size)


def cluster_froc(
    per_image,
    pixel_spacing_mm: float,
    max_dist_mm: float = CLUSTER_DIST_MM,
    min_size: int = MIN_CLUSTER_SIZE,
    min_overlap: float = 0.5,
    metric: str = "iou",
    max_points: int | None = 256,
) -> FrocCurve:
    """Cluster-level FROC, re-clustering the detections kept at each threshold."""
    per_image = [(list(d), a) for d, a in per_image]
    if not per_image:
        raise ValueError("FROC needs at least one image")
    refs = [gt_clusters(a, pixel_spacing_mm, max_dist_mm, min_size) for _, a in per_image]
    n_targets = sum(len(r) for r in refs)
    if n_targets == 0:
        raise ValueError("cluster FROC needs at least one reference cluster")
    all_scores = [d.ranking_score() for dets, _ in per_image for d in dets]
    overlaps = [overlap_matrix(dets, list(a), metric) for dets, a in per_image]
    thr, fpi, tpr = [np.inf], [0.0], [0.0]
    n_img = len(per_image)
    for t in sweep_thresholds(all_scores, max_points):
        tp = fp = 0
        for (dets, annots), O, ref in zip(per_image, overlaps, refs):
            keep = [i for i, d in enumerate(dets) if d.ranking_score() >= t]
            if len(keep) < min_size:
                continue
            kept = [dets[i] for i in keep]
            m = greedy_match(O[keep], [d.ranking_score() for d in kept], min_overlap)
            clusters = cluster_candidates(kept, max_dist_mm, min_size)
            cm = match_clusters(clusters, ref, m)
            tp += cm.n_tp
            fp += len(cm.fp_detections)
        thr.append(t)
        fpi.append(fp / n_img)
        tpr.append(tp / n_targets)
    return FrocCurve(np.array(fpi), np.array(tpr), np.array(thr), n_img, n_targets)


def case_scores(case_of_image: dict, per_image_clusters: dict) -> dict:
    """Highest cluster score per case (cluster score = mean member score).

    ``per_image_clusters`` maps image id to a list of member-score lists.
    """
    out = {c: -np.inf for c in case_of_image.values()}
    for image_id, clusters in per_image_clusters.items():
        case = case_of_image[image_id]
        for member_scores in clusters:
            out[case] = max(out[case], float(np.mean(member_scores)))
    return out


def case_roc(case_labels: dict, scores: dict) -> RocCurve:
    """ROC over cases: positive cases hold at least one reference cluster."""
    cases = sorted(case_labels)
    y = np.array([bool(case_labels[c]) for c in cases])
    s = np.array([scores.get(c, -np.inf) for c in cases], dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("case ROC needs both positive and negative cases")
    thr, fpr, tpr = [np.inf], [0.0], [0.0]
    for t in np.unique(s)[::-1]:
        hit = s >= t
        thr.append(t)
        fpr.append(float((hit & ~y).sum()) / n_neg)
        tpr.append(float((hit & y).sum()) / n_pos)
    if thr[-1] != -np.inf:
        thr.append(-np.inf)
        fpr.append(1.0)
        tpr.append(1.0)
    return RocCurve(np.array(fpr), np.array(tpr), np.array(thr))


def aggregate(curves, grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std of the curves interpolated on ``grid``."""
    Y = np.vstack([c.interpolate(grid) for c in curves])
    return Y.mean(axis=0), Y.std(axis=0)


def write_curve_csv(path, grid, mean, std) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_value", "mean_tpr", "std_tpr"])
        for g, m, s in zip(grid, mean, std):
            w.writerow([f"{g:.10g}", f"{m:.10g}", f"{s:.10g}"])


def read_curve_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return tuple(np.array([float(r[k]) for r in rows]) for k in ("grid_value", "mean_tpr", "std_tpr"))


def write_curve_svg(path, grid, mean, std, xlabel: str, logx: bool = True) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "calc-cade"}):  # stable element ids
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.errorbar(grid, mean, yerr=std, color="tab:red", capsize=2, lw=1)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("TPR")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(Path(path), format="svg", metadata={"Date": None})
        plt.close(fig)
