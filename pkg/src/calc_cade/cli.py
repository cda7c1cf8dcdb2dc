"""``calc-cade`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluation as ev
from .boosting import CascadeModel, TrainingError
from .data import (
    DEFAULT_PIXEL_SPACING_MM,
    DataError,
    Mammogram,
    load_dataset,
    read_image,
    split_cases,
    write_dataset,
    write_image,
)
from .experiment import ExperimentConfig, load_records, prepare_run_dir, run_experiment, train_models, write_detections
from .features import SLICES, feature_vector
from .phantom import PhantomDatasetSpec, PhantomSpec, generate_phantom_dataset
from .pipeline import CandidateDetection, cluster_candidates, detect_candidates, score_candidates
from .preprocess import preprocess

log = logging.getLogger("calc_cade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config


def _config_from_args(args) -> ExperimentConfig:
    overrides = {
        "dataset_root": getattr(args, "data", None),
        "seed": args.seed,
        "n_folds": getattr(args, "n_folds", None),
        "stage2_weak_learners": args.stage2_weak_learners,
        "neg_pool_size": args.neg_pool_size,
        "scan_stride": args.scan_stride,
        "overlap_metric": args.overlap,
        "macro_rule": args.macro_rule,
        "pixel_spacing_mm": args.pixel_spacing,
    }
    if args.stage_budgets is not None:
        overrides["stage_budgets"] = [int(v) for v in args.stage_budgets.split(",")]
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _add_config_flags(p):
    p.add_argument("--config", help="JSON or TOML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--stage-budgets", help="comma-separated stump budgets per cascade stage")
    p.add_argument("--stage2-weak-learners", type=int)
    p.add_argument("--neg-pool-size", type=int)
    p.add_argument("--scan-stride", type=int)
    p.add_argument("--overlap", choices=("iou", "ioa"))
    p.add_argument("--macro-rule", choices=("and", "or"))
    p.add_argument("--pixel-spacing", type=float)


# ---------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    image = PhantomSpec(image_size=args.size, photon_gain=args.gain)
    spec = PhantomDatasetSpec(n_images=args.n_images, images_per_case=args.images_per_case, image=image, seed=args.seed)
    write_dataset(generate_phantom_dataset(spec), args.out)
    (Path(args.out) / "phantom.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    print(f"wrote {spec.n_images} phantom images to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    image = Mammogram(read_image(args.inp), args.pixel_spacing)
    eq, model = preprocess(image)
    if Path(args.out).suffix.lower() not in (".tif", ".tiff"):
        log.warning("%s is an integer format; equalized values will be rounded (use .tif to keep them)", args.out)
    write_image(args.out, eq.pixels)
    sidecar = Path(args.out).with_suffix(".noise.json")
    sidecar.write_text(json.dumps(model.to_dict(), indent=1) + "\n")
    if model.degenerate:
        log.warning("noise fit was degenerate; fell back to global statistics")
    print(f"gain={model.gain_estimate:.6g} offset={model.offset_estimate:.6g} -> {args.out}, {sidecar}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args)
    out = prepare_run_dir(args.out_dir, args.force)
    records = [(preprocess(im)[0], a) for im, a in load_records(config)]
    # the whole set is used: the test share joins training, validation calibrates the cascade
    split = split_cases([im.case_id for im, _ in records], 1, config.split_ratios, config.seed)[0]
    val_cases = set(split.validation_cases)
    train = [r for r in records if r[0].case_id not in val_cases]
    val = [r for r in records if r[0].case_id in val_cases]
    m1, m2, stats = train_models(train, val, config, config.seed)
    m1.save(out / "model1.json")
    m2.save(out / "model2.json")
    (out / "train.json").write_text(
        json.dumps({"config": config.to_dict(), "cascade": m1.history, **stats}, indent=1) + "\n"
    )
    print(f"cascade: {len(m1.stages)} stages, {m1.n_stumps} stumps; classifier: {m2.n_stumps} stumps -> {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    m1, m2 = CascadeModel.load(args.model1), CascadeModel.load(args.model2)
    image = Mammogram(read_image(args.inp), args.pixel_spacing, image_id=args.image_id or Path(args.inp).stem)
    if not args.preprocessed:
        image, _ = preprocess(image)
    cands = detect_candidates(image, m1, args.stride, args.macro_size_mm, args.macro_rule)
    scored = score_candidates(image, cands, m2)
    write_detections(args.out_csv, [(image.image_id, scored)], args.threshold, args.cluster_dist_mm, args.min_cluster_size)
    kept = [c for c in scored if c.score >= args.threshold]
    if args.out_mask:
        labels = np.zeros(image.pixels.shape, dtype=np.uint16)
        for k, c in enumerate(kept, start=1):
            x0, y0, x1, y1 = c.bbox
            labels[y0 : y1 + 1, x0 : x1 + 1][c.mask] = k
        Image.fromarray(labels).save(args.out_mask)
    n_clusters = len(cluster_candidates(kept, args.cluster_dist_mm, args.min_cluster_size))
    print(f"{len(cands)} candidates, {len(kept)} kept, {n_clusters} clusters -> {args.out_csv}")
    return EXIT_OK


def read_detections(path, pred_masks=None) -> dict:
    """Detections CSV grouped by image: ``image_id -> [(CandidateDetection, cluster_id)]``.

    Without ``pred_masks`` each detection's mask is its full box.
    """
    out = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"image_id", "x0", "y0", "x1", "y1", "score", "cluster_id"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must be {','.join(sorted(need))}")
        for row in reader:
            x0, y0, x1, y1 = (int(row[k]) for k in ("x0", "y0", "x1", "y1"))
            if x1 < x0 or y1 < y0:
                raise DataError(f"{path}: empty box {(x0, y0, x1, y1)}")
            mask = np.ones((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
            image_id = row["image_id"]
            if pred_masks is not None:
                labels = _label_png(Path(pred_masks), image_id)
                k = len(out[image_id]) + 1
                mask = labels[y0 : y1 + 1, x0 : x1 + 1] == k
                if not mask.any():
                    raise DataError(f"{pred_masks}/{image_id}.png has no label {k} inside {(x0, y0, x1, y1)}")
            det = CandidateDetection(mask, (x0, y0, x1, y1), (0.0, 0.0), score=float(row["score"]))
            out[image_id].append((det, int(row["cluster_id"])))
    return out


_label_cache: dict = {}


def _label_png(root: Path, image_id: str) -> np.ndarray:
    key = (root, image_id)
    if key not in _label_cache:
        path = root / f"{image_id}.png"
        if not path.exists():
            raise DataError(f"missing predicted mask {path}")
        _label_cache[key] = read_image(path).astype(np.int64)
    return _label_cache[key]


def cmd_evaluate(args) -> int:
    spacing = args.pixel_spacing
    gt = load_dataset(args.gt, spacing)
    preds = read_detections(args.pred, args.pred_masks)
    unknown = set(preds) - {im.image_id for im, _ in gt}
    if unknown:
        raise DataError(f"detections for images not in {args.gt}: {sorted(unknown)[:5]}")
    per_image = []
    for im, annots in gt:
        dets = [d for d, _ in preds.get(im.image_id, [])]
        for d in dets:
            x0, y0, x1, y1 = d.bbox
            ys, xs = np.nonzero(d.mask)
            d.centroid_mm = ((xs.mean() + x0) * spacing, (ys.mean() + y0) * spacing)
        per_image.append((dets, annots))

    if args.curve == "froc-individual":
        curve = ev.froc(per_image, args.min_overlap, args.overlap)
        grid = ev.fpi_grid()
    elif args.curve == "froc-cluster":
        curve = ev.cluster_froc(per_image, spacing, args.cluster_dist_mm, args.min_cluster_size, args.min_overlap, args.overlap)
        grid = ev.fpi_grid()
    else:
        case_of = {im.image_id: im.case_id for im, _ in gt}
        labels: dict = {}
        clusters = {}
        for im, annots in gt:
            ref = ev.gt_clusters(annots, spacing, args.cluster_dist_mm, args.min_cluster_size)
            labels[im.case_id] = labels.get(im.case_id, False) or len(ref) > 0
            groups = defaultdict(list)
            for d, k in preds.get(im.image_id, []):
                if k >= 0:
                    groups[k].append(d.score)
            clusters[im.image_id] = [groups[k] for k in sorted(groups)]
        curve = ev.case_roc(labels, ev.case_scores(case_of, clusters))
        grid = ev.fpr_grid()
    mean = curve.interpolate(grid)
    std = np.zeros_like(mean)
    ev.write_curve_csv(args.out, grid, mean, std)
    if args.svg:
        ev.write_curve_svg(args.svg, grid, mean, std, "FPR" if args.curve == "roc-case" else "FPI", args.curve != "roc-case")
    for x in (0.1, 1.0, 10.0) if args.curve != "roc-case" else (0.1, 0.5):
        print(f"TPR at {'FPR' if args.curve == 'roc-case' else 'FPI'} {x:g}: {curve.y_at(x):.4f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config, args.run_dir, force=args.force, parallel_folds=args.parallel_folds)
    for f in report["folds"]:
        if f["status"] == "ok":
            print(
                f"fold {f['fold']}: TPR@1={f['tpr_at_fpi']['1.0']:.3f} TPR@10={f['tpr_at_fpi']['10.0']:.3f} "
                f"P.1 output FPI={f['p1_output']['fpi']:.1f} at TPR={f['p1_output']['tpr']:.3f}"
            )
        else:
            print(f"fold {f['fold']}: FAILED {f['error']}")
    if report["metrics"]:
        print(json.dumps(report["metrics"], indent=1))
    return EXIT_OK if report["n_failed_folds"] < len(report["folds"]) else EXIT_TRAINING


def cmd_features(args) -> int:
    patch = read_image(args.patch).astype(np.float64)
    mask = read_image(args.mask) > 0
    if patch.shape != (12, 12):
        raise DataError(f"patch must be 12x12, got {patch.shape}")
    try:
        vec = feature_vector(patch, mask)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    names = []
    for group, sl in SLICES.items():
        names += [f"{group}_{i}" for i in range(sl.stop - sl.start)]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["name", "value"])
        for n, v in zip(names, vec):
            w.writerow([n, f"{v:.17g}"])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="calc-cade", description="Micro-calcification detection: train, detect, evaluate.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write a synthetic phantom dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-images", type=int, default=40)
    s.add_argument("--images-per-case", type=int, default=2)
    s.add_argument("--size", type=int, default=320)
    s.add_argument("--gain", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("preprocess", help="noise-equalize one image")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pixel-spacing", type=float, default=DEFAULT_PIXEL_SPACING_MM)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train the pixel cascade and the candidate classifier")
    s.add_argument("--data", help="dataset root (default: phantom from the config)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--force", action="store_true")
    _add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="run the detector on one image")
    s.add_argument("--model1", required=True)
    s.add_argument("--model2", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-mask", help="label PNG; label k is the k-th detection row")
    s.add_argument("--image-id")
    s.add_argument("--preprocessed", action="store_true", help="input is already noise-equalized")
    s.add_argument("--pixel-spacing", type=float, default=DEFAULT_PIXEL_SPACING_MM)
    s.add_argument("--threshold", type=float, default=0.0)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--macro-size-mm", type=float, default=1.0)
    s.add_argument("--macro-rule", choices=("and", "or"), default="and")
    s.add_argument("--cluster-dist-mm", type=float, default=10.0)
    s.add_argument("--min-cluster-size", type=int, default=3)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="FROC / ROC of a detections CSV against a dataset")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--curve", choices=("froc-individual", "froc-cluster", "roc-case"), required=True)
    s.add_argument("--out", required=True, help="curve CSV")
    s.add_argument("--svg")
    s.add_argument("--pred-masks", help="directory of label PNGs named <image_id>.png")
    s.add_argument("--overlap", choices=("iou", "ioa"), default="iou")
    s.add_argument("--min-overlap", type=float, default=0.5)
    s.add_argument("--pixel-spacing", type=float, default=DEFAULT_PIXEL_SPACING_MM)
    s.add_argument("--cluster-dist-mm", type=float, default=10.0)
    s.add_argument("--min-cluster-size", type=int, default=3)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="fold-wise train / detect / evaluate run")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--data", help="dataset root (default: phantom from the config)")
    s.add_argument("--n-folds", type=int)
    s.add_argument("--force", action="store_true")
    s.add_argument("--parallel-folds", type=int, default=1)
    _add_config_flags(s)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("features", help="dump the feature vector of a 12x12 patch")
    s.add_argument("--patch", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
