import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image
from scipy import ndimage

from calc_cade.data import (
    Annotation,
    AnnotationSet,
    DataError,
    Mammogram,
    load_dataset,
    read_image,
    split_cases,
    split_sizes,
    write_image,
)


def _write_fixture(root, images, masks, cases):
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    with open(root / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "case_id"])
        for (iid, img), mask, case in zip(images.items(), masks, cases):
            w.writerow([iid, case])
            write_image(root / "images" / f"{iid}.png", img)
            if mask is not None:
                Image.fromarray(mask.astype(np.uint16)).save(root / "masks" / f"{iid}.png")


def test_load_two_images_one_empty_mask(tmp_path):
    m = np.zeros((20, 20), np.uint16)
    m[3:6, 3:6] = 1
    images = {"a": np.full((20, 20), 100.0), "b": np.full((20, 20), 50.0)}
    _write_fixture(tmp_path, images, [m, np.zeros((20, 20))], ["c1", "c2"])
    recs = load_dataset(tmp_path)
    assert len(recs) == 2
    assert len(recs[0][1]) == 1 and len(recs[1][1]) == 0
    assert recs[0][0].case_id == "c1" and recs[1][0].image_id == "b"
    assert recs[0][1][0].bbox == (3, 3, 5, 5)


def test_two_four_connected_blobs_give_two_annotations(tmp_path):
    m = np.zeros((20, 20), np.uint16)
    m[2:4, 2:5] = 1
    m[10:13, 8:10] = 1
    _write_fixture(tmp_path, {"a": np.ones((20, 20))}, [m], ["c"])
    (_, annots), = load_dataset(tmp_path)
    _, n = ndimage.label(m > 0, structure=np.ones((3, 3)))
    assert len(annots) == n == 2


def test_image_below_window_rejected(tmp_path):
    _write_fixture(tmp_path, {"a": np.ones((10, 10))}, [np.zeros((10, 10))], ["c"])
    with pytest.raises(DataError, match="below"):
        load_dataset(tmp_path, window=12)


def test_missing_mask_and_shape_mismatch(tmp_path):
    _write_fixture(tmp_path / "x", {"a": np.ones((20, 20))}, [None], ["c"])
    with pytest.raises(DataError, match="missing annotation mask"):
        load_dataset(tmp_path / "x")
    _write_fixture(tmp_path / "y", {"a": np.ones((20, 20))}, [np.zeros((21, 20))], ["c"])
    with pytest.raises(DataError, match="does not match"):
        load_dataset(tmp_path / "y")


def test_missing_cases_file(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)


@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), max_size=60))
def test_annotation_count_equals_components(pixels):
    m = np.zeros((20, 20), np.uint16)
    for y, x in pixels:
        m[y, x] = 1
    annots = AnnotationSet.from_label_mask(m)
    _, n = ndimage.label(m > 0, structure=np.ones((3, 3)))
    assert len(annots) == n
    assert annots.union_mask().sum() == (m > 0).sum()
    for a in annots:
        x0, y0, x1, y1 = a.bbox
        assert a.mask.shape == (y1 - y0 + 1, x1 - x0 + 1)
        assert a.mask[0].any() and a.mask[-1].any() and a.mask[:, 0].any() and a.mask[:, -1].any()


def test_distinct_labels_stay_separate():
    m = np.zeros((10, 10), np.uint16)
    m[2:4, 2:4] = 1
    m[2:4, 4:6] = 2  # touches label 1
    assert len(AnnotationSet.from_label_mask(m)) == 2


def test_mammogram_validation():
    with pytest.raises(DataError):
        Mammogram(np.ones((12, 12)), pixel_spacing_mm=0)
    with pytest.raises(DataError):
        Mammogram(-np.ones((12, 12)))
    with pytest.raises(DataError):
        Mammogram(np.ones((12, 12, 3)))
    img = Mammogram(np.ones((12, 30)), 0.05, "c", "i")
    assert (img.width, img.height) == (30, 12)
    assert img.with_pixels(np.zeros((12, 30))).pixel_spacing_mm == 0.05


def test_annotation_validation():
    with pytest.raises(DataError):
        Annotation(np.zeros((2, 2), bool), (0, 0, 1, 1))
    with pytest.raises(DataError):
        Annotation(np.ones((2, 2), bool), (0, 0, 2, 1))
    full = np.zeros((8, 8), bool)
    full[2:5, 3] = True
    a = Annotation.from_full_mask(full)
    assert a.bbox == (3, 2, 3, 4) and a.area == 3
    assert a.centroid_px() == (3.0, 3.0)


def test_image_roundtrip(tmp_path):
    img = np.arange(20 * 30, dtype=np.float64).reshape(20, 30)
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(read_image(tmp_path / "a.png"), img)
    frac = img / 7.0
    write_image(tmp_path / "a.tif", frac)
    assert np.allclose(read_image(tmp_path / "a.tif"), frac, rtol=1e-6)


@pytest.mark.parametrize("n, sizes", [(115, (69, 23, 23)), (5, (3, 1, 1)), (10, (6, 2, 2)), (7, (5, 1, 1))])
def test_split_sizes(n, sizes):
    assert split_sizes(n) == sizes
    for s in split_cases([f"c{i}" for i in range(n)], 5):
        assert (len(s.train_cases), len(s.validation_cases), len(s.test_cases)) == sizes


def test_splits_deterministic_and_leak_free():
    cases = [f"case{i:03d}" for i in range(115)]
    a, b = split_cases(cases, 5, seed=7), split_cases(cases, 5, seed=7)
    assert a == b
    assert split_cases(cases, 5, seed=8) != a
    for s in a:
        tr, va, te = set(s.train_cases), set(s.validation_cases), set(s.test_cases)
        assert not (te & tr) and not (te & va) and not (tr & va)
        assert tr | va | te == set(cases)


def test_split_errors():
    with pytest.raises(DataError):
        split_cases(["a", "b"], 5)
    with pytest.raises(ValueError):
        split_sizes(10, (0.5, 0.5, 0.5))
