"""Synthetic mammogram phantoms with clustered micro-calcifications.

The clean image is a smooth background with power-law tissue texture,
a few bright curvilinear structures (duct-like distractors) and
plateau-shaped calcifications.
Quantum noise is simulated as ``gain * Poisson(clean / gain)``, so the
variance at a pixel is ``gain`` times its mean.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .data import Annotation, AnnotationSet, DataError, Mammogram

MAX_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int = 320
    pixel_spacing_mm: float = 0.07
    background_smoothness: float = 2.0  # correlation length of the background, mm
    background_level: float = 800.0
    background_variation: float = 0.25  # relative std of the smooth background
    texture_amplitude: float = 0.06  # relative std of the power-law tissue texture
    texture_exponent: float = 3.0
    photon_gain: float = 2.0
    n_clusters: int = 1
    mc_per_cluster_range: tuple[int, int] = (3, 5)
    mc_diameter_range_mm: tuple[float, float] = (0.25, 0.7)
    mc_contrast_range: tuple[float, float] = (0.15, 0.35)
    cluster_radius_mm: float = 2.5
    n_distractors: int = 4
    distractor_contrast: float = 0.12
    rng_seed: int = 0
    case_id: str = "case"
    image_id: str = "image"

    def __post_init__(self):
        lo, hi = self.mc_diameter_range_mm
        if not 0.05 <= lo <= hi <= 1.5:
            raise ValueError(f"mc_diameter_range_mm must lie in [0.05, 1.5], got {self.mc_diameter_range_mm}")
        if self.image_size < 12 or self.pixel_spacing_mm <= 0 or self.photon_gain <= 0:
            raise ValueError("invalid phantom geometry or gain")
        a, b = self.mc_per_cluster_range
        if not 1 <= a <= b:
            raise ValueError(f"bad mc_per_cluster_range {self.mc_per_cluster_range}")
        if self.n_clusters < 0:
            raise ValueError("n_clusters must be >= 0")


@dataclass
class PhantomRender:
    clean: np.ndarray
    background: np.ndarray
    noisy: np.ndarray
    masks: list = field(default_factory=list)


def _smooth_background(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.image_size
    sigma_px = spec.background_smoothness / spec.pixel_spacing_mm
    field_ = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma_px, mode="reflect")
    field_ /= field_.std() or 1.0
    yy, xx = np.mgrid[0:n, 0:n] / n
    tilt = rng.uniform(-0.5, 0.5, size=2)
    trend = tilt[0] * (xx - 0.5) + tilt[1] * (yy - 0.5)
    texture = _power_law_texture(n, spec.texture_exponent, rng)
    bg = spec.background_level * (
        1.0 + spec.background_variation * field_ + spec.texture_amplitude * texture + 0.3 * trend
    )
    return np.clip(bg, 0.2 * spec.background_level, None)


def _power_law_texture(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with power spectrum falling as ``1 / f**exponent``."""
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.rfftfreq(n)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = np.inf
    spectrum = np.fft.rfft2(rng.standard_normal((n, n))) * f ** (-exponent / 2.0)
    tex = np.fft.irfft2(spectrum, s=(n, n))
    return tex / (tex.std() or 1.0)


def _draw_distractors(spec: PhantomSpec, bg: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Faint curved ridges roughly 2 px wide crossing the image."""
    n = spec.image_size
    ridges = np.zeros_like(bg)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    for _ in range(spec.n_distractors):
        x0, y0 = rng.uniform(0, n, size=2)
        angle = rng.uniform(0, math.pi)
        bend = rng.uniform(-1.5, 1.5) / n
        c, s = math.cos(angle), math.sin(angle)
        u = (xx - x0) * c + (yy - y0) * s
        v = -(xx - x0) * s + (yy - y0) * c - bend * u * u
        width = rng.uniform(0.8, 1.4)
        ridges += np.exp(-0.5 * (v / width) ** 2)
    return bg * spec.distractor_contrast * np.clip(ridges, 0, 1.5)


def _disk_mask(n: int, cx: float, cy: float, radius: float) -> np.ndarray:
    yy, xx = np.ogrid[0:n, 0:n]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    if not mask.any():
        mask[int(round(cy)), int(round(cx))] = True
    return mask


def _place_cluster(spec: PhantomSpec, rng: np.random.Generator, taken: np.ndarray) -> list[np.ndarray]:
    n = spec.image_size
    px = spec.pixel_spacing_mm
    r_cluster = spec.cluster_radius_mm / px
    margin = r_cluster + 1.0 / px
    if 2 * margin >= n:
        raise DataError(f"phantom of {n} px cannot hold a {spec.cluster_radius_mm} mm cluster")
    count = int(rng.integers(spec.mc_per_cluster_range[0], spec.mc_per_cluster_range[1] + 1))
    for _ in range(MAX_PLACEMENT_TRIES):
        cx, cy = rng.uniform(margin, n - margin, size=2)
        masks, occupied = [], taken.copy()
        for _ in range(count):
            for _ in range(MAX_PLACEMENT_TRIES):
                d_mm = rng.uniform(*spec.mc_diameter_range_mm)
                rho = r_cluster * math.sqrt(rng.uniform())
                phi = rng.uniform(0, 2 * math.pi)
                mx, my = cx + rho * math.cos(phi), cy + rho * math.sin(phi)
                m = _disk_mask(n, mx, my, 0.5 * d_mm / px)
                # keep a 3 px gap so calcifications never touch
                if not (ndimage.binary_dilation(m, iterations=3) & occupied).any():
                    masks.append(m)
                    occupied |= m
                    break
            else:
                break
        if len(masks) == count:
            taken |= occupied
            return masks
    raise DataError(
        f"could not place a cluster of {count} calcifications after {MAX_PLACEMENT_TRIES} tries "
        f"(image {n} px, cluster radius {spec.cluster_radius_mm} mm)"
    )


def render_phantom(spec: PhantomSpec) -> PhantomRender:
    rng = np.random.default_rng(spec.rng_seed)
    bg = _smooth_background(spec, rng)
    clean = bg + _draw_distractors(spec, bg, rng)
    taken = np.zeros(bg.shape, dtype=bool)
    masks = []
    for _ in range(spec.n_clusters):
        masks.extend(_place_cluster(spec, rng, taken))
    for m in masks:
        clean[m] += bg[m] * rng.uniform(*spec.mc_contrast_range)
    noisy = spec.photon_gain * rng.poisson(clean / spec.photon_gain)
    return PhantomRender(clean, bg, np.rint(noisy).astype(np.float64), masks)


def generate_phantom(spec: PhantomSpec) -> tuple[Mammogram, AnnotationSet]:
    """Seeded phantom image and its ground-truth calcification masks."""
    r = render_phantom(spec)
    annots = AnnotationSet([Annotation.from_full_mask(m) for m in r.masks], r.noisy.shape)
    image = Mammogram(r.noisy, spec.pixel_spacing_mm, spec.case_id, spec.image_id)
    return image, annots


@dataclass(frozen=True)
class PhantomDatasetSpec:
    """A population of phantoms grouped into cases.

    Normal cases get no clusters; every image of an abnormal case gets
    ``clusters_per_abnormal_image`` clusters.
    """

    n_images: int = 40
    images_per_case: int = 2
    normal_case_fraction: float = 0.25
    clusters_per_abnormal_image: int = 1
    image: PhantomSpec = field(default_factory=lambda: PhantomSpec(mc_per_cluster_range=(4, 6)))
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomDatasetSpec":
        d = dict(d)
        image = d.pop("image", {})
        if isinstance(image, dict):
            image = {k: tuple(v) if isinstance(v, list) else v for k, v in image.items()}
            image = PhantomSpec(**image)
        return cls(image=image, **d)


def generate_phantom_dataset(spec: PhantomDatasetSpec | None = None):
    """Records ``(Mammogram, AnnotationSet)`` for a whole phantom dataset."""
    spec = spec or PhantomDatasetSpec()
    n_cases = math.ceil(spec.n_images / spec.images_per_case)
    n_normal = int(round(spec.normal_case_fraction * n_cases))
    rng = np.random.default_rng(spec.seed)
    normal = set(rng.choice(n_cases, size=n_normal, replace=False).tolist())
    seeds = rng.integers(0, 2**31 - 1, size=spec.n_images)
    records = []
    for i in range(spec.n_images):
        case = i // spec.images_per_case
        img_spec = PhantomSpec(
            **{
                **asdict(spec.image),
                "n_clusters": 0 if case in normal else spec.clusters_per_abnormal_image,
                "rng_seed": int(seeds[i]),
                "case_id": f"case{case:03d}",
                "image_id": f"img{i:03d}",
            }
        )
        records.append(generate_phantom(img_spec))
    return records
