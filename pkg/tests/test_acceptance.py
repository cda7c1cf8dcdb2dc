"""Acceptance suite: one test per criterion, summarised as PASS/FAIL lines at the end of the run.

Each test attaches its measured numbers with ``record_property("detail", ...)``;
the terminal summary hook in ``conftest.py`` prints them.
"""

import math

import numpy as np
import pytest

import oracles
from calc_cade import evaluation as ev
from calc_cade.boosting import BoostedStage, cascade_rates, train_rusboost
from calc_cade.experiment import ExperimentConfig, run_experiment
from calc_cade.features import SHAPE_NAMES, enumerate_haar_bank, haar_features, lbp_codes, shape_features
from calc_cade.features.texture import SGLD_OFFSETS, cooccurrence, quantize
from calc_cade.pipeline import CandidateDetection, cluster_candidates
from calc_cade.windows import WindowGrid, scan

N_PATCHES = 1000

# the end-to-end configuration: 40 phantom images with about 150 injected objects
E2E = {
    "n_folds": 2,
    "stage_budgets": [2, 3, 5, 12, 40],
    "stage2_weak_learners": 200,
    "neg_pool_size": 100_000,
    "seed": 0,
}


def test_criterion_1_cascade_algebra(record_property):
    D, F = cascade_rates([0.99] * 5, [0.3] * 5)
    record_property("detail", f"D={D:.6f} F={F:.6g}")
    assert abs(D - 0.951) <= 1e-3
    assert abs(F - 0.00243) <= 1e-5


def _haar_slices(patches):
    """Every bank descriptor from numpy slice sums over the raw patches."""
    cols = []
    for d in enumerate_haar_bank(12):
        s = lambda cx, cy: patches[:, d.y + cy * d.h : d.y + (cy + 1) * d.h, d.x + cx * d.w : d.x + (cx + 1) * d.w].sum((1, 2))  # noqa: E731
        if d.kind == "two-rect-horizontal":
            v = s(0, 0) - s(1, 0)
        elif d.kind == "two-rect-vertical":
            v = s(0, 0) - s(0, 1)
        elif d.kind == "three-rect-horizontal":
            v = s(0, 0) - 2 * s(1, 0) + s(2, 0)
        elif d.kind == "three-rect-vertical":
            v = s(0, 0) - 2 * s(0, 1) + s(0, 2)
        else:
            v = s(0, 0) - s(1, 0) - s(0, 1) + s(1, 1)
        cols.append(v)
    return np.column_stack(cols)


def test_criterion_2_feature_oracles(record_property):
    rng = np.random.default_rng(2)
    # integer-valued patches keep every Haar sum exact in float64
    patches = rng.integers(0, 4096, (N_PATCHES, 12, 12)).astype(np.float64)
    H = haar_features(patches)
    haar_ok = np.array_equal(H, _haar_slices(patches))

    sgld_ok = lbp_ok = shape_ok = True
    for p in patches:
        q = quantize(p)
        for dx, dy in SGLD_OFFSETS:
            sgld_ok &= bool(np.array_equal(cooccurrence(q, (dx, dy)), oracles.cooccurrence_pairs(q, dx, dy)))
        lbp_ok &= bool(np.array_equal(lbp_codes(p), oracles.lbp_loop(p)))
        m = p > np.quantile(p, rng.uniform(0.1, 0.95))
        f = dict(zip(SHAPE_NAMES, shape_features(m)))
        ref = oracles.shape_loop(m)
        for k in ("area", "perimeter", "extent_x", "extent_y"):
            shape_ok &= f[k] == ref[k]
        for k in ("rectangularity", "major_axis_length", "minor_axis_length", "eccentricity"):
            shape_ok &= math.isclose(f[k], ref[k], rel_tol=1e-9, abs_tol=1e-12)
    record_property("detail", f"haar={haar_ok} sgld={sgld_ok} lbp={lbp_ok} shape={shape_ok} on {N_PATCHES} patches")
    assert haar_ok and sgld_ok and lbp_ok and shape_ok


def test_criterion_3_haar_bank(record_property):
    a, b = enumerate_haar_bank(12), enumerate_haar_bank(12)
    record_property("detail", f"{len(a)} descriptors, identical order: {a == b}")
    assert len(a) == 1697 and a == b


def _gaussian_benchmark(seed):
    r = np.random.default_rng(seed)
    return r.normal(2.0, 1.0, (50, 2)), r.normal(0.0, 1.0, (10_000, 2))


def test_criterion_4_rusboost(record_property):
    P, N = _gaussian_benchmark(0)
    Pt, Nt = _gaussian_benchmark(1)
    sums = []
    stumps = train_rusboost(P, N, 50, seed=0, callback=lambda k, t: sums.append(float(t.weights.sum())))
    stage = BoostedStage(tuple(stumps))
    labels = np.r_[np.ones(len(Pt), bool), np.zeros(len(Nt), bool)]
    auc = oracles.auc_rank(labels, stage.score_matrix(np.vstack([Pt, Nt])))
    worst = max(abs(s - 1.0) for s in sums)
    record_property("detail", f"AUC={auc:.4f} rounds={len(sums)} max|sum(w)-1|={worst:.2e}")
    assert len(stumps) == 50 and len(sums) == 50
    assert auc >= 0.95 and worst <= 1e-9


def test_criterion_5_cascade_consistency(small_cascade, record_property):
    model, _, val = small_cascade
    hist = [h for h in model.history if "measured_d" in h]
    D_prod, F_prod = cascade_rates([h["measured_d"] for h in hist], [h["measured_f"] for h in hist])
    hit_pos = n_pos = hit_neg = n_neg = 0
    for image, annots in val:
        accepted, _ = scan(model.stages, WindowGrid(image.pixels))
        pos = annots.union_mask()
        hit_pos += int(accepted[pos].sum())
        n_pos += int(pos.sum())
        hit_neg += int(accepted[~pos].sum())
        n_neg += int((~pos).sum())
    D, F = hit_pos / n_pos, hit_neg / n_neg
    record_property("detail", f"product D={D_prod:.4f} F={F_prod:.4f}; scanned D={D:.4f} F={F:.4f}")
    assert abs(D - D_prod) <= 0.05 and abs(F - F_prod) <= 0.05


def test_criterion_6_clustering_oracle(record_property):
    rng = np.random.default_rng(6)
    mismatches = small = 0
    for _ in range(1000):
        n = int(rng.integers(0, 201))
        scale = float(rng.choice([5.0, 20.0, 60.0, 200.0]))
        pts = [tuple(p) for p in rng.random((n, 2)) * scale]
        got = cluster_candidates(pts)
        sets = set(got.member_sets())
        mismatches += sets != oracles.union_find_clusters(pts, 10.0, 3)
        small += sum(len(c.members) < 3 for c in got.clusters)
    record_property("detail", f"{mismatches} mismatches, {small} clusters below 3 members")
    assert mismatches == 0 and small == 0


def _box(x0, y0, w, h, score=None):
    return CandidateDetection(np.ones((h, w), bool), (x0, y0, x0 + w - 1, y0 + h - 1), (0.0, 0.0), score=score)


def test_criterion_7_evaluation_fixtures(record_property):
    from calc_cade.data import Annotation

    ann = lambda x0, y0, w, h: Annotation(np.ones((h, w), bool), (x0, y0, x0 + w - 1, y0 + h - 1))  # noqa: E731
    c = ev.froc([([_box(0, 0, 3, 3, 0.9), _box(20, 20, 3, 3, 0.8)], [ann(0, 0, 3, 3), ann(10, 10, 3, 3)])])
    froc_ok = (c.fpi[-1], c.tpr[-1]) == (1.0, 0.5)

    two = ev.MatchResult([(0, 0, 1.0), (1, 1, 1.0)], [2], [2])
    one = ev.MatchResult([(0, 0, 1.0)], [1, 2], [1, 2])
    cl_ok = (
        ev.match_clusters([[0, 1, 2]], [[0, 1, 2]], two).n_tp == 1
        and ev.match_clusters([[0, 1, 2]], [[0, 1, 2]], one).fp_detections == [0]
        and ev.match_clusters([[0, 1, 2]], [], ev.MatchResult([], [0, 1, 2], [])).fp_detections == [0]
    )

    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(1000):
        dets = [_box(*rng.integers(0, 20, 2), *rng.integers(1, 6, 2), float(rng.random())) for _ in range(rng.integers(0, 10))]
        anns = [ann(*rng.integers(0, 20, 2), *rng.integers(1, 6, 2)) for _ in range(rng.integers(0, 10))]
        m = ev.match_individual(dets, anns)
        bad += m.n_tp + len(m.fn_annotations) != len(anns) or m.n_tp + len(m.fp_detections) != len(dets)
    record_property("detail", f"froc fixture={froc_ok} cluster fixtures={cl_ok} identity violations={bad}/1000")
    assert froc_ok and cl_ok and bad == 0


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    """The end-to-end phantom experiment, run twice with the same seed."""
    config = ExperimentConfig.from_dict(E2E)
    root = tmp_path_factory.mktemp("e2e")
    a = run_experiment(config, root / "a")
    b = run_experiment(config, root / "b")
    return root, a, b


@pytest.mark.slow
def test_criterion_8_phantom_experiment(e2e_runs, record_property):
    _, report, _ = e2e_runs
    m = report["metrics"]
    n_obj = sum(f["n_test_annotations"] for f in report["folds"] if f["status"] == "ok")
    record_property(
        "detail",
        f"mean TPR@FPI10={m['mean_tpr_at_fpi_10']:.3f} (TPR@FPI1={m['mean_tpr_at_fpi_1']:.3f}); "
        f"at P.1 output TPR={m['mean_p1_output_tpr']:.3f}: FPI {m['mean_p1_output_fpi']:.1f} -> "
        f"{m['mean_p2_fpi_at_p1_tpr']:.2f} after P.2; {n_obj} held-out objects; {report['seconds']:.0f}s",
    )
    assert report["n_failed_folds"] == 0
    assert m["mean_tpr_at_fpi_10"] >= 0.70
    for f in report["folds"]:
        assert f["p2_fpi_at_p1_tpr"] < f["p1_output"]["fpi"]


@pytest.mark.slow
def test_criterion_9_determinism(e2e_runs, record_property):
    root, a, _ = e2e_runs
    # aggregated curves plus the per-fold operating points behind them
    names = sorted(str(p.relative_to(root / "a")) for p in (root / "a").glob("**/*.csv") if "points-" in p.name or p.parent.name == "curves")
    same = [n for n in names if (root / "a" / n).read_bytes() == (root / "b" / n).read_bytes()]
    record_property("detail", f"{len(same)}/{len(names)} curve CSVs byte-identical")
    assert names and len(same) == len(names)
