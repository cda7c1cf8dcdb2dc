"""Fold-wise training, detection and evaluation runs driven by one config."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .boosting import CascadeModel, TrainingError, train_cascade, train_single_stage
from .data import DEFAULT_PIXEL_SPACING_MM, load_dataset, split_cases, write_dataset
from .phantom import PhantomDatasetSpec, generate_phantom_dataset
from .pipeline import (
    CandidateDetection,
    candidate_features,
    cluster_candidates,
    detect_candidates,
    feature_matrix,
    score_candidates,
)
from .preprocess import preprocess

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CURVES = ("froc-individual", "froc-individual-p1", "froc-cluster", "roc-case")


@dataclass
class ExperimentConfig:
    dataset_root: str | None = None
    phantom: dict | None = None
    pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM
    window: int = 12
    stage_budgets: tuple = (2, 3, 5, 12, 40)
    d_target: float = 0.99
    f_target: float = 0.30
    stage2_weak_learners: int = 1000
    neg_pool_size: int = 100_000
    neg_pos_ratio: float = 1.0
    cluster_dist_mm: float = 10.0
    min_cluster_size: int = 3
    macro_size_mm: float = 1.0
    macro_rule: str = "and"
    overlap_metric: str = "iou"
    min_overlap: float = 0.5
    n_folds: int = 5
    split_ratios: tuple = (0.6, 0.2, 0.2)
    scan_stride: int = 1
    stage2_threshold: float = 0.0
    fpi_grid: tuple = (1e-2, 1e2, 32)
    roc_grid_points: int = 51
    seed: int = 0

    def __post_init__(self):
        self.stage_budgets = tuple(int(b) for b in self.stage_budgets)
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        self.fpi_grid = (float(self.fpi_grid[0]), float(self.fpi_grid[1]), int(self.fpi_grid[2]))
        if not self.stage_budgets or min(self.stage_budgets) < 1:
            raise ValueError("stage budgets must be positive")
        if not (0 < self.d_target <= 1 and 0 < self.f_target <= 1):
            raise ValueError("d_target and f_target must lie in (0, 1]")
        if self.stage2_weak_learners < 1 or self.neg_pool_size < 1 or self.n_folds < 1:
            raise ValueError("stage2_weak_learners, neg_pool_size and n_folds must be positive")
        if self.pixel_spacing_mm <= 0 or self.cluster_dist_mm <= 0 or self.macro_size_mm <= 0:
            raise ValueError("spacings and distances must be positive")
        if self.min_cluster_size < 1 or self.window < 2 or self.scan_stride < 1:
            raise ValueError("bad cluster size, window or stride")
        if self.macro_rule not in ("and", "or"):
            raise ValueError("macro_rule must be 'and' or 'or'")
        if self.overlap_metric not in ("iou", "ioa"):
            raise ValueError("overlap_metric must be 'iou' or 'ioa'")
        if not 0 < self.min_overlap <= 1:
            raise ValueError("min_overlap must lie in (0, 1]")
        if self.dataset_root is None and self.phantom is None:
            self.phantom = PhantomDatasetSpec().to_dict()
        if self.phantom is not None:
            try:
                self.phantom = PhantomDatasetSpec.from_dict(self.phantom).to_dict()
            except TypeError as exc:
                raise ValueError(f"bad phantom spec: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        d = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def load_records(config: ExperimentConfig, data_dir: Path | None = None):
    if config.dataset_root is not None:
        return load_dataset(config.dataset_root, config.pixel_spacing_mm, config.window)
    spec = PhantomDatasetSpec.from_dict(config.phantom)
    records = generate_phantom_dataset(spec)
    if data_dir is not None:
        write_dataset(records, data_dir)
    return records


def stage2_training_set(records, candidates, config: ExperimentConfig):
    """Matched candidates and the reference masks are positives; the rest negatives."""
    pos, neg = [], []
    for (image, annots), cands in zip(records, candidates):
        X, ok = feature_matrix(image, cands)
        if ok:
            m = ev.match_individual([cands[i] for i in ok], annots, config.min_overlap, config.overlap_metric)
            is_tp = np.zeros(len(ok), dtype=bool)
            is_tp[[d for d, _, _ in m.tp_pairs]] = True
            pos.append(X[is_tp])
            neg.append(X[~is_tp])
        for a in annots:
            ref = CandidateDetection(a.mask, a.bbox, (0.0, 0.0))
            pos.append(candidate_features(image, ref)[None, :])
    if not sum(len(x) for x in neg):
        raise TrainingError("candidate classifier needs both positive and negative candidates")
    return np.vstack(pos), np.vstack(neg)


def train_models(train, validation, config: ExperimentConfig, seed: int):
    """Pixel cascade on ``train`` (calibrated on ``validation``), then the candidate classifier."""
    m1 = train_cascade(
        train,
        validation,
        config.stage_budgets,
        config.d_target,
        config.f_target,
        config.neg_pool_size,
        seed,
        config.window,
        config.neg_pos_ratio,
    )
    cands = [
        detect_candidates(im, m1, config.scan_stride, config.macro_size_mm, config.macro_rule) for im, _ in train
    ]
    P, N = stage2_training_set(train, cands, config)
    m2 = train_single_stage(P, N, config.stage2_weak_learners, seed + 1, config.neg_pos_ratio)
    return m1, m2, {"n_stage2_train": [int(len(P)), int(len(N))]}


def write_detections(path, per_image, threshold: float = 0.0, max_dist_mm: float = 10.0, min_size: int = 3):
    """Detections CSV for ``(image_id, scored candidates)`` pairs; cluster_id is -1 when unclustered."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "x0", "y0", "x1", "y1", "score", "cluster_id"])
        for image_id, cands in per_image:
            kept = [c for c in cands if c.score >= threshold]
            assign = cluster_candidates(kept, max_dist_mm, min_size).assignment(len(kept))
            for c, k in zip(kept, assign):
                w.writerow([image_id, *c.bbox, f"{c.score:.10g}", int(k)])


def _write_points(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "x", "tpr"])
        for t, x, y in zip(curve.thresholds, curve.x, curve.y):
            w.writerow([f"{t:.10g}", f"{x:.10g}", f"{y:.10g}"])


def run_fold(records, split, config: ExperimentConfig, out_dir: Path) -> dict:
    """Train both classifiers on one split and evaluate on its test cases."""
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = fold_seed(config.seed, split.fold_index)
    by_case = lambda cases: [r for r in records if r[0].case_id in set(cases)]  # noqa: E731
    train, val, test = by_case(split.train_cases), by_case(split.validation_cases), by_case(split.test_cases)

    m1, m2, stats = train_models(train, val, config, seed)
    m1.save(out_dir / "model1.json")
    m2.save(out_dir / "model2.json")
    test_cands = [
        detect_candidates(im, m1, config.scan_stride, config.macro_size_mm, config.macro_rule) for im, _ in test
    ]
    scored = [score_candidates(im, cs, m2) for (im, _), cs in zip(test, test_cands)]
    write_detections(
        out_dir / "detections.csv",
        [(im.image_id, sc) for (im, _), sc in zip(test, scored)],
        config.stage2_threshold,
        config.cluster_dist_mm,
        config.min_cluster_size,
    )

    annots = [a for _, a in test]
    curves: dict = {}
    curves["froc-individual"] = ev.froc(zip(scored, annots), config.min_overlap, config.overlap_metric)
    p1 = ev.froc(zip(test_cands, annots), config.min_overlap, config.overlap_metric)
    curves["froc-individual-p1"] = p1
    spacing = test[0][0].pixel_spacing_mm
    try:
        curves["froc-cluster"] = ev.cluster_froc(
            zip(scored, annots), spacing, config.cluster_dist_mm, config.min_cluster_size,
            config.min_overlap, config.overlap_metric,
        )
    except ValueError as exc:
        log.warning("fold %d: no cluster FROC (%s)", split.fold_index, exc)
    case_labels: dict = {}
    per_image_clusters = {}
    case_of = {}
    for (im, a), sc in zip(test, scored):
        ref = ev.gt_clusters(a, im.pixel_spacing_mm, config.cluster_dist_mm, config.min_cluster_size)
        case_labels[im.case_id] = case_labels.get(im.case_id, False) or len(ref) > 0
        kept = [c for c in sc if c.score >= config.stage2_threshold]
        cl = cluster_candidates(kept, config.cluster_dist_mm, config.min_cluster_size)
        per_image_clusters[im.image_id] = [[kept[i].score for i in c.members] for c in cl]
        case_of[im.image_id] = im.case_id
    try:
        curves["roc-case"] = ev.case_roc(case_labels, ev.case_scores(case_of, per_image_clusters))
    except ValueError as exc:
        log.warning("fold %d: no case ROC (%s)", split.fold_index, exc)
    for name, c in curves.items():
        _write_points(out_dir / f"points-{name}.csv", c)

    f2 = curves["froc-individual"]
    p1_fpi, p1_tpr = float(p1.fpi[-1]), float(p1.tpr[-1])
    summary = {
        "fold": split.fold_index,
        "status": "ok",
        "n_cases": [len(split.train_cases), len(split.validation_cases), len(split.test_cases)],
        "n_images": [len(train), len(val), len(test)],
        "n_test_annotations": int(sum(len(a) for a in annots)),
        "cascade": m1.history,
        "n_stage2_train": stats["n_stage2_train"],
        "curves": sorted(curves),
        "p1_candidates": int(sum(len(c) for c in test_cands)),
        "p1_output": {"fpi": p1_fpi, "tpr": p1_tpr},
        "p2_fpi_at_p1_tpr": f2.x_at(p1_tpr),
        "tpr_at_fpi": {str(x): f2.y_at(x) for x in (0.1, 1.0, 10.0)},
        "p1_ranked_tpr_at_fpi": {str(x): p1.y_at(x) for x in (0.1, 1.0, 10.0)},
        "seconds": round(time.time() - t0, 1),
    }
    return {"summary": summary, "curves": curves}


def _run_fold_safe(args):
    records, split, config, out_dir = args
    try:
        return run_fold(records, split, config, out_dir)
    except Exception as exc:  # a failed fold must not stop the others
        log.error("fold %d failed: %s", split.fold_index, exc)
        return {
            "summary": {
                "fold": split.fold_index,
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(),
            },
            "curves": {},
        }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def prepare_run_dir(run_dir, force: bool = False) -> Path:
    run_dir = Path(run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{run_dir} is not empty; pass force=True / --force to overwrite")
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def run_experiment(config: ExperimentConfig, run_dir, force: bool = False, parallel_folds: int = 1) -> dict:
    """Run every fold, aggregate curves, and write the report and manifest."""
    run_dir = prepare_run_dir(run_dir, force)
    t0 = time.time()
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")

    raw = load_records(config, run_dir / "data" if config.dataset_root is None else None)
    records, noise = [], {}
    for image, annots in raw:
        eq, model = preprocess(image)
        records.append((eq, annots))
        noise[image.image_id] = model.to_dict()

    splits = split_cases([im.case_id for im, _ in records], config.n_folds, config.split_ratios, config.seed)
    for s in splits:
        log.info("fold %d: %d/%d/%d cases", s.fold_index, len(s.train_cases), len(s.validation_cases), len(s.test_cases))
    jobs = [(records, s, config, run_dir / f"fold_{s.fold_index}") for s in splits]
    if parallel_folds > 1:
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            results = list(pool.map(_run_fold_safe, jobs))
    else:
        results = [_run_fold_safe(j) for j in jobs]

    curves_dir = run_dir / "curves"
    curves_dir.mkdir()
    grids = {
        "froc-individual": ev.fpi_grid(*config.fpi_grid),
        "froc-individual-p1": ev.fpi_grid(*config.fpi_grid),
        "froc-cluster": ev.fpi_grid(*config.fpi_grid),
        "roc-case": ev.fpr_grid(config.roc_grid_points),
    }
    aggregated = {}
    for name in CURVES:
        per_fold = [r["curves"][name] for r in results if name in r["curves"]]
        if not per_fold:
            continue
        mean, std = ev.aggregate(per_fold, grids[name])
        ev.write_curve_csv(curves_dir / f"{name}.csv", grids[name], mean, std)
        aggregated[name] = {"n_folds": len(per_fold)}

    ok = [r for r in results if r["summary"]["status"] == "ok"]
    metrics = {}
    if ok:
        f2 = [r["curves"]["froc-individual"] for r in ok]
        metrics = {
            "mean_tpr_at_fpi_1": float(np.mean([c.y_at(1.0) for c in f2])),
            "mean_tpr_at_fpi_10": float(np.mean([c.y_at(10.0) for c in f2])),
            "mean_p1_output_fpi": float(np.mean([r["summary"]["p1_output"]["fpi"] for r in ok])),
            "mean_p1_output_tpr": float(np.mean([r["summary"]["p1_output"]["tpr"] for r in ok])),
            "mean_p2_fpi_at_p1_tpr": float(np.mean([r["summary"]["p2_fpi_at_p1_tpr"] for r in ok])),
        }
    report = {
        "config": config.to_dict(),
        "splits": [
            {"fold": s.fold_index, "train": list(s.train_cases), "validation": list(s.validation_cases), "test": list(s.test_cases)}
            for s in splits
        ],
        "noise_models": noise,
        "folds": [r["summary"] for r in results],
        "curves": aggregated,
        "metrics": metrics,
        "n_failed_folds": len(results) - len(ok),
        "seconds": round(time.time() - t0, 1),
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=1, default=_json_default) + "\n")
    manifest = {
        str(p.relative_to(run_dir)): {"bytes": p.stat().st_size, "sha256": _sha256(p)}
        for p in sorted(run_dir.rglob("*"))
        if p.is_file()
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return report


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
