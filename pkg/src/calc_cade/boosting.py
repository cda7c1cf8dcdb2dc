"""Decision stumps, RUSBoost, and attentional cascades of boosted stages."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features.haar import haar_weight_matrix
from .windows import WindowGrid, scan

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EPS_FLOOR = 1e-10
HAAR_WINDOW = "haar-window"
CANDIDATE_VECTOR = "candidate-featurevector"


class TrainingError(Exception):
    """Training could not produce a usable model."""


@dataclass(frozen=True)
class DecisionStump:
    feature_index: int
    threshold: float
    polarity: int
    alpha: float

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")

    def predict(self, values) -> np.ndarray:
        """+1 where ``polarity * (x - threshold) > 0``, else -1."""
        values = np.asarray(values, dtype=np.float64)
        if self.polarity == 1:
            return np.where(values > self.threshold, 1.0, -1.0)
        return np.where(values < self.threshold, 1.0, -1.0)


@dataclass(frozen=True)
class BoostedStage:
    stumps: tuple = ()
    stage_threshold: float = 0.0
    measured_d: float = 1.0
    measured_f: float = 1.0

    def score(self, feature_accessor) -> float:
        total = 0.0
        for st in self.stumps:
            total += st.alpha * float(st.predict(feature_accessor(st.feature_index)))
        return total

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for st in self.stumps:
            out += st.alpha * st.predict(X[:, st.feature_index])
        return out


@dataclass
class CascadeModel:
    stages: list = field(default_factory=list)
    feature_space_tag: str = HAAR_WINDOW
    window_size: int = 12
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_stumps(self) -> int:
        return sum(len(s.stumps) for s in self.stages)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "feature_space_tag": self.feature_space_tag,
            "M": self.window_size,
            "stages": [
                {
                    "stage_threshold": s.stage_threshold,
                    "measured_d": s.measured_d,
                    "measured_f": s.measured_f,
                    "stumps": [
                        {
                            "feature_index": st.feature_index,
                            "threshold": st.threshold,
                            "polarity": st.polarity,
                            "alpha": st.alpha,
                        }
                        for st in s.stumps
                    ],
                }
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        stages = [
            BoostedStage(
                tuple(
                    DecisionStump(int(st["feature_index"]), float(st["threshold"]), int(st["polarity"]), float(st["alpha"]))
                    for st in s["stumps"]
                ),
                float(s["stage_threshold"]),
                float(s["measured_d"]),
                float(s["measured_f"]),
            )
            for s in d["stages"]
        ]
        return cls(stages, d["feature_space_tag"], int(d["M"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "CascadeModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def cascade_rates(per_stage_d, per_stage_f) -> tuple[float, float]:
    """Overall detection and false-positive rates of a cascade."""
    d, f = list(per_stage_d), list(per_stage_f)
    if not d or len(d) != len(f):
        raise ValueError("need equal, non-empty lists of stage rates")
    if any(not 0 <= r <= 1 for r in d + f):
        raise ValueError("stage rates must lie in [0, 1]")
    return math.prod(d), math.prod(f)


def cascade_score(model: CascadeModel, feature_accessor) -> tuple[bool, float]:
    """Evaluate a sample, stopping at the first rejecting stage.

    Returns acceptance and the margin (score minus threshold) of the last
    stage evaluated; an empty cascade accepts with margin ``inf``.
    """
    margin = math.inf
    for stage in model.stages:
        margin = stage.score(feature_accessor) - stage.stage_threshold
        if margin < 0:
            return False, margin
    return True, margin


# ---------------------------------------------------------------------------
# sample containers


class ArraySamples:
    """Samples given as a dense ``(n, n_features)`` matrix."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=np.float64)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def rows(self, idx):
        return self.X[idx]

    def column(self, j, idx=None):
        return self.X[:, j] if idx is None else self.X[idx, j]

    def concat(self, other):
        return ArraySamples(np.vstack([self.X, other.X]))


class HaarSamples:
    """Windows stored as flattened local integral images; features on demand."""

    def __init__(self, local_ii, M: int = 12):
        self.local_ii = np.asarray(local_ii, dtype=np.float64)
        self.M = M
        self.W = haar_weight_matrix(M)

    def __len__(self):
        return self.local_ii.shape[0]

    @property
    def n_features(self):
        return self.W.shape[0]

    def rows(self, idx):
        return self.local_ii[idx] @ self.W.T

    def column(self, j, idx=None):
        ii = self.local_ii if idx is None else self.local_ii[idx]
        return ii @ self.W[j]

    def concat(self, other):
        return HaarSamples(np.vstack([self.local_ii, other.local_ii]), self.M)


def as_samples(x):
    return x if hasattr(x, "column") else ArraySamples(x)


# ---------------------------------------------------------------------------
# weak learner


def fit_stump(X: np.ndarray, y: np.ndarray, w: np.ndarray, chunk: int = 256):
    """Weighted-error-optimal stump over all features.

    ``y`` holds +1/-1 labels and ``w`` non-negative weights. Thresholds are
    midpoints between consecutive distinct values. Ties go to the lowest
    feature index, then the lowest threshold, then polarity +1.
    A constant stump is returned when no split beats it.
    Returns ``(feature_index, threshold, polarity, weighted_error)``.
    """
    n, F = X.shape
    wp_all = np.where(y > 0, w, 0.0)
    wn_all = np.where(y > 0, 0.0, w)
    Wp, Wn = wp_all.sum(), wn_all.sum()
    best = None
    for start in range(0, F, chunk):
        Xc = X[:, start : start + chunk]
        order = np.argsort(Xc, axis=0, kind="stable")
        xs = np.take_along_axis(Xc, order, axis=0)
        cp = np.cumsum(wp_all[order], axis=0)[:-1]
        cn = np.cumsum(wn_all[order], axis=0)[:-1]
        err_plus = cp + (Wn - cn)
        err_minus = (Wp - cp) + cn
        valid = xs[1:] > xs[:-1]
        err = np.where(valid, np.minimum(err_plus, err_minus), np.inf).T
        if err.size == 0:
            continue
        k = int(np.argmin(err))
        e = float(err.flat[k])
        if not math.isfinite(e) or (best is not None and e >= best[3]):
            continue
        f_local, pos = divmod(k, err.shape[1])
        lo, hi = xs[pos, f_local], xs[pos + 1, f_local]
        thr = 0.5 * (lo + hi)
        if not lo <= thr < hi:
            thr = lo
        polarity = 1 if err_plus[pos, f_local] <= err_minus[pos, f_local] else -1
        best = (start + f_local, float(thr), polarity, e)
    # the constant stump (every sample on one side) wins only when strictly better
    if best is None or min(Wp, Wn) < best[3]:
        col = X[:, 0] if n else np.zeros(1)
        if Wp > Wn:
            return 0, float(col.min()) - 1.0, 1, float(Wn)
        return 0, float(col.max()), 1, float(Wp)
    return best


def stump_alpha(error: float) -> float:
    eps = min(max(error, EPS_FLOOR), 1.0 - EPS_FLOOR)
    return max(0.5 * math.log((1.0 - eps) / eps), 0.0)


class RUSBoostTrainer:
    """Round-by-round RUSBoost.

    Each round keeps every positive, draws negatives without replacement
    with probability proportional to their boosting weight until the
    negative:positive ratio is ``neg_pos_ratio``, fits a stump on the
    subsample (positives at their boosting weight, the drawn negatives
    sharing the total negative weight equally), then reweights the full
    training set.
    """

    def __init__(self, samples, labels, neg_pos_ratio: float = 1.0, seed=0):
        self.samples = as_samples(samples)
        self.labels = np.asarray(labels, dtype=bool)
        self.y = np.where(self.labels, 1.0, -1.0)
        self.pos_idx = np.flatnonzero(self.labels)
        self.neg_idx = np.flatnonzero(~self.labels)
        if self.pos_idx.size == 0 or self.neg_idx.size == 0:
            raise TrainingError("RUSBoost needs at least one positive and one negative sample")
        self.ratio = neg_pos_ratio
        self.rng = np.random.default_rng(seed)
        self.weights = np.full(len(self.labels), 1.0 / len(self.labels))
        self.stumps: list[DecisionStump] = []
        self.last_error = None

    def _subsample(self) -> np.ndarray:
        k = int(round(self.ratio * self.pos_idx.size))
        k = min(max(k, 1), self.neg_idx.size)
        if k == self.neg_idx.size:
            neg = self.neg_idx
        else:
            p = self.weights[self.neg_idx]
            neg = np.sort(self.rng.choice(self.neg_idx, size=k, replace=False, p=p / p.sum()))
        return np.concatenate([self.pos_idx, neg])

    def step(self) -> DecisionStump:
        idx = self._subsample()
        w = self.weights[idx].copy()
        n_pos = self.pos_idx.size
        if idx.size - n_pos < self.neg_idx.size:
            # negatives were drawn in proportion to weight; the draw already
            # carries that emphasis, so each one gets an equal share
            w[n_pos:] = self.weights[self.neg_idx].sum() / (idx.size - n_pos)
        w = w / w.sum()
        j, thr, pol, err = fit_stump(self.samples.rows(idx), self.y[idx], w)
        stump = DecisionStump(int(j), float(thr), int(pol), stump_alpha(err))
        h = stump.predict(self.samples.column(j))
        self.weights = self.weights * np.exp(-stump.alpha * self.y * h)
        self.weights /= self.weights.sum()
        self.last_error = err
        self.stumps.append(stump)
        return stump


def train_rusboost(pos, neg, n_weak: int, neg_pos_ratio_per_round: float = 1.0, seed=0, callback=None):
    """Boost ``n_weak`` stumps on positive and negative samples.

    ``pos`` and ``neg`` are feature matrices or sample containers of the
    same kind. ``callback(round, trainer)`` runs after every round.
    """
    if n_weak < 1:
        raise ValueError("n_weak must be >= 1")
    pos, neg = as_samples(pos), as_samples(neg)
    if len(pos) == 0 or len(neg) == 0:
        raise TrainingError("RUSBoost needs at least one positive and one negative sample")
    labels = np.r_[np.ones(len(pos), bool), np.zeros(len(neg), bool)]
    trainer = RUSBoostTrainer(pos.concat(neg), labels, neg_pos_ratio_per_round, seed)
    for t in range(n_weak):
        trainer.step()
        if callback is not None:
            callback(t, trainer)
    return list(trainer.stumps)


# ---------------------------------------------------------------------------
# stage calibration


def calibrate_stage_threshold(stage: BoostedStage, val_pos_scores, val_neg_scores, d_target: float = 0.99) -> BoostedStage:
    """Highest threshold keeping at least ``d_target`` of validation positives."""
    pos = np.sort(np.asarray(val_pos_scores, dtype=np.float64))
    neg = np.asarray(val_neg_scores, dtype=np.float64)
    if pos.size < 10:
        raise TrainingError(f"calibration needs >= 10 validation positives, got {pos.size}")
    k = int(math.floor((1.0 - d_target) * pos.size + 1e-9))
    while k > 0 and np.mean(pos >= pos[k]) < d_target:
        k -= 1
    thr = float(pos[k])
    d = float(np.mean(pos >= thr))
    f = float(np.mean(neg >= thr)) if neg.size else 0.0
    return replace(stage, stage_threshold=thr, measured_d=d, measured_f=f)


# ---------------------------------------------------------------------------
# cascade training


def _positive_pixels(records):
    for i, (_, annots) in enumerate(records):
        rows, cols = np.nonzero(annots.union_mask())
        yield i, rows, cols


def _pool_integrals(grids, picks):
    """Local integrals for ``picks`` = (image index, row, col) arrays."""
    img, rows, cols = picks
    M = grids[0].M if grids else 12
    out = np.empty((img.size, (M + 1) ** 2))
    for i in np.unique(img):
        sel = img == i
        out[sel] = grids[i].local_integrals(rows[sel], cols[sel])
    return out


def _sample_pixels(masks, size, rng):
    """Uniform sample without replacement over the True pixels of ``masks``."""
    counts = np.array([int(m.sum()) for m in masks])
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    flat = np.arange(total) if total <= size else np.sort(rng.choice(total, size=size, replace=False))
    bounds = np.r_[0, np.cumsum(counts)]
    img = np.searchsorted(bounds, flat, side="right") - 1
    rows = np.empty(flat.size, int)
    cols = np.empty(flat.size, int)
    for i in np.unique(img):
        sel = img == i
        r, c = np.nonzero(masks[i])
        rows[sel] = r[flat[sel] - bounds[i]]
        cols[sel] = c[flat[sel] - bounds[i]]
    return img, rows, cols


def _stage_scores_on(stage, samples: HaarSamples):
    out = np.zeros(len(samples))
    for st in stage.stumps:
        out += st.alpha * st.predict(samples.column(st.feature_index))
    return out


def train_cascade(
    train,
    validation,
    stage_budgets=(2, 3, 5, 12, 40),
    d_target: float = 0.99,
    f_target: float = 0.30,
    neg_pool_size: int = 100_000,
    seed=0,
    M: int = 12,
    neg_pos_ratio: float = 1.0,
) -> CascadeModel:
    """Train the pixel cascade on preprocessed ``(Mammogram, AnnotationSet)`` records.

    Stage ``s`` sees only the negatives that stages ``1..s-1`` still accept,
    mined afresh from the training images. Each stage grows one stump at a
    time, recalibrated on the validation windows that reach it, and stops
    as soon as its false-positive rate meets ``f_target``.
    """
    rng = np.random.default_rng(seed)
    grids = [WindowGrid(img.pixels, M) for img, _ in train]
    val_grids = [WindowGrid(img.pixels, M) for img, _ in validation]
    pos_masks = [a.union_mask() for _, a in train]
    val_pos_masks = [a.union_mask() for _, a in validation]

    pos = HaarSamples(_pool_integrals(grids, _sample_pixels(pos_masks, 10**12, rng)), M)
    val_pos = HaarSamples(_pool_integrals(val_grids, _sample_pixels(val_pos_masks, 10**12, rng)), M)
    val_neg = HaarSamples(
        _pool_integrals(val_grids, _sample_pixels([~m for m in val_pos_masks], neg_pool_size, rng)), M
    )
    if len(pos) == 0:
        raise TrainingError("training images contain no annotated pixels")

    model = CascadeModel([], HAAR_WINDOW, M)
    for s, budget in enumerate(stage_budgets):
        accepted = [scan(model.stages, g)[0] & ~pm for g, pm in zip(grids, pos_masks)]
        picks = _sample_pixels(accepted, neg_pool_size, rng)
        if picks[0].size == 0:
            log.warning("no negatives survive to stage %d; cascade truncated at %d stages", s + 1, s)
            model.history.append({"stage": s + 1, "truncated": True})
            break
        neg = HaarSamples(_pool_integrals(grids, picks), M)
        trainer = RUSBoostTrainer(
            pos.concat(neg),
            np.r_[np.ones(len(pos), bool), np.zeros(len(neg), bool)],
            neg_pos_ratio,
            rng.integers(2**32),
        )
        vp_score = np.zeros(len(val_pos))
        vn_score = np.zeros(len(val_neg))
        for _ in range(budget):
            st = trainer.step()
            vp_score += st.alpha * st.predict(val_pos.column(st.feature_index))
            vn_score += st.alpha * st.predict(val_neg.column(st.feature_index))
            stage = calibrate_stage_threshold(BoostedStage(tuple(trainer.stumps)), vp_score, vn_score, d_target)
            if stage.measured_f <= f_target:
                break
        model.stages.append(stage)
        model.history.append(
            {
                "stage": s + 1,
                "n_pos": len(pos),
                "n_neg_pool": len(neg),
                "n_val_pos": len(val_pos),
                "n_val_neg": len(val_neg),
                "n_stumps": len(stage.stumps),
                "measured_d": stage.measured_d,
                "measured_f": stage.measured_f,
            }
        )
        log.info("stage %d: %d stumps, d=%.4f f=%.4f", s + 1, len(stage.stumps), stage.measured_d, stage.measured_f)
        # survivors feed the next stage
        keep = vp_score >= stage.stage_threshold
        val_pos = HaarSamples(val_pos.local_ii[keep], M)
        val_neg = HaarSamples(val_neg.local_ii[vn_score >= stage.stage_threshold], M)
        keep_pos = _stage_scores_on(stage, pos) >= stage.stage_threshold
        pos = HaarSamples(pos.local_ii[keep_pos], M)
        if len(pos) == 0:
            log.warning("no training positives survive stage %d", s + 1)
            break
    return model


def train_single_stage(pos, neg, n_weak: int = 1000, seed=0, neg_pos_ratio: float = 1.0) -> CascadeModel:
    """One boosted ensemble over candidate feature vectors; threshold left at 0."""
    stumps = train_rusboost(pos, neg, n_weak, neg_pos_ratio, seed)
    return CascadeModel([BoostedStage(tuple(stumps), 0.0)], CANDIDATE_VECTOR, 12)
