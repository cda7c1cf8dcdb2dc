"""Mammogram records, annotation masks, dataset I/O and case-level splits.

Dataset layout on disk::

    root/cases.csv              image_id,case_id
    root/images/<image_id>.png  (or .pgm / .tif / .tiff), 8- or 16-bit grey
    root/masks/<image_id>.png   label or binary mask, 0 = background
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

MIN_SIZE = 12
DEFAULT_PIXEL_SPACING_MM = 0.07
IMAGE_SUFFIXES = (".png", ".pgm", ".tif", ".tiff")
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class DataError(Exception):
    """Bad or missing input data."""


@dataclass
class Mammogram:
    pixels: np.ndarray
    pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM
    case_id: str = ""
    image_id: str = ""
    min_size: int = field(default=MIN_SIZE, repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise DataError(f"{self.image_id}: expected a 2-D image, got shape {self.pixels.shape}")
        if self.height < self.min_size or self.width < self.min_size:
            raise DataError(
                f"{self.image_id}: {self.width}x{self.height} px is below the "
                f"{self.min_size}x{self.min_size} window"
            )
        if not self.pixel_spacing_mm > 0:
            raise DataError(f"{self.image_id}: pixel spacing must be positive")
        if self.pixels.min() < 0:
            raise DataError(f"{self.image_id}: negative intensities")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels) -> "Mammogram":
        return Mammogram(pixels, self.pixel_spacing_mm, self.case_id, self.image_id, self.min_size)


@dataclass
class Annotation:
    """One annotated object, stored as a mask cropped to its tight box.

    ``bbox`` is ``(x0, y0, x1, y1)`` with inclusive bottom-right corner.
    """

    mask: np.ndarray
    bbox: tuple[int, int, int, int]

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        x0, y0, x1, y1 = self.bbox
        if self.mask.shape != (y1 - y0 + 1, x1 - x0 + 1):
            raise DataError(f"mask shape {self.mask.shape} does not match bbox {self.bbox}")
        if not self.mask.any():
            raise DataError("annotation mask has no foreground pixels")

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def centroid_px(self) -> tuple[float, float]:
        ys, xs = np.nonzero(self.mask)
        return float(xs.mean() + self.bbox[0]), float(ys.mean() + self.bbox[1])

    @classmethod
    def from_full_mask(cls, full: np.ndarray) -> "Annotation":
        ys, xs = np.nonzero(full)
        if ys.size == 0:
            raise DataError("annotation mask has no foreground pixels")
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
        return cls(full[y0 : y1 + 1, x0 : x1 + 1].copy(), (int(x0), int(y0), int(x1), int(y1)))


@dataclass
class AnnotationSet:
    annotations: list[Annotation]
    shape: tuple[int, int]

    def __post_init__(self):
        h, w = self.shape
        for a in self.annotations:
            x0, y0, x1, y1 = a.bbox
            if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
                raise DataError(f"annotation bbox {a.bbox} outside {w}x{h} image")

    def __len__(self) -> int:
        return len(self.annotations)

    def __iter__(self):
        return iter(self.annotations)

    def __getitem__(self, i) -> Annotation:
        return self.annotations[i]

    def union_mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for a in self.annotations:
            x0, y0, x1, y1 = a.bbox
            out[y0 : y1 + 1, x0 : x1 + 1] |= a.mask
        return out

    def label_map(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.uint16)
        for k, a in enumerate(self.annotations, start=1):
            x0, y0, x1, y1 = a.bbox
            region = out[y0 : y1 + 1, x0 : x1 + 1]
            region[a.mask] = k
        return out

    @classmethod
    def from_label_mask(cls, mask: np.ndarray) -> "AnnotationSet":
        """One annotation per 8-connected component of each non-zero label."""
        mask = np.asarray(mask)
        annotations = []
        for value in np.unique(mask):
            if value == 0:
                continue
            labels, n = ndimage.label(mask == value, structure=EIGHT_CONNECTED)
            for k, sl in enumerate(ndimage.find_objects(labels), start=1):
                crop = labels[sl] == k
                annotations.append(Annotation(crop, (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)))
        annotations.sort(key=lambda a: (a.bbox[1], a.bbox[0]))
        return cls(annotations, tuple(mask.shape))


@dataclass(frozen=True)
class CaseSplit:
    fold_index: int
    train_cases: tuple
    validation_cases: tuple
    test_cases: tuple


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16", "I;16B", "I;16L", "F"):
                im = im.convert("L")
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single-channel image")
    return arr


def write_image(path, pixels) -> None:
    """Save as 16-bit PNG/PGM (values rounded and clipped) or float32 TIFF."""
    path = Path(path)
    pixels = np.asarray(pixels)
    if path.suffix.lower() in (".tif", ".tiff"):
        Image.fromarray(pixels.astype(np.float32)).save(path)
    else:
        arr = np.clip(np.rint(pixels), 0, 65535).astype(np.uint16)
        Image.fromarray(arr).save(path)


def _find_image(root: Path, image_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        p = root / "images" / f"{image_id}{suffix}"
        if p.exists():
            return p
    raise DataError(f"missing image file for {image_id!r} under {root / 'images'}")


def read_cases(root) -> list[tuple[str, str]]:
    path = Path(root) / "cases.csv"
    if not path.exists():
        raise DataError(f"missing {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "case_id"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain image_id,case_id")
        return [(row["image_id"], row["case_id"]) for row in reader]


def load_dataset(root, pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM, window: int = MIN_SIZE):
    """Read every image listed in ``cases.csv`` with its annotation mask."""
    root = Path(root)
    records = []
    for image_id, case_id in read_cases(root):
        pixels = read_image(_find_image(root, image_id))
        mask_path = root / "masks" / f"{image_id}.png"
        if not mask_path.exists():
            raise DataError(f"missing annotation mask {mask_path}")
        mask = read_image(mask_path)
        if mask.shape != pixels.shape:
            raise DataError(
                f"{mask_path}: mask shape {mask.shape} does not match image shape {pixels.shape}"
            )
        image = Mammogram(pixels, pixel_spacing_mm, case_id, image_id, min_size=window)
        records.append((image, AnnotationSet.from_label_mask(mask)))
    log.info("loaded %d images from %s", len(records), root)
    return records


def write_dataset(records, root) -> None:
    """Write ``(Mammogram, AnnotationSet)`` records in the dataset layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / "cases.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "case_id"])
        for image, annots in records:
            writer.writerow([image.image_id, image.case_id])
            write_image(root / "images" / f"{image.image_id}.png", image.pixels)
            Image.fromarray(annots.label_map()).save(root / "masks" / f"{image.image_id}.png")


def split_sizes(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Floor the validation and test shares; the remainder goes to train."""
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9) or min(ratios) < 0:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_cases(case_ids, n_folds: int = 5, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> list[CaseSplit]:
    """Independent random case-level partitions, one per fold."""
    cases = sorted(set(case_ids))
    if len(cases) < n_folds:
        raise DataError(f"{len(cases)} cases cannot fill {n_folds} folds")
    n_train, n_val, _ = split_sizes(len(cases), ratios)
    rng = np.random.default_rng(seed)
    splits = []
    for k in range(n_folds):
        order = [cases[i] for i in rng.permutation(len(cases))]
        splits.append(
            CaseSplit(
                k,
                tuple(order[:n_train]),
                tuple(order[n_train : n_train + n_val]),
                tuple(order[n_train + n_val :]),
            )
        )
    return splits
