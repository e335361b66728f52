"""Training-bag construction.

Positive bags: randomly displaced windows around each annotation at 2x, 2.5x,
or 3x the annotation's larger side, keeping the image's aspect ratio; window
overlap with the annotations yields per-region degrees, normalized into
weights over the positive sub-bag.  Negative bags reuse the fixed 11-region
test layout with all weights zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import BBox, clamp_to_image, degree_of_interest
from .imaging import Image
from .infer import test_regions


@dataclass(frozen=True)
class BagSpec:
    """Knobs for positive-bag generation.

    displacement_frac scales the uniform window displacement (default half
    the window size per axis); 0 disables displacement entirely.
    """

    scale_factors: tuple[float, ...] = (2.0, 2.5, 3.0)
    regions_per_positive: int = 100
    rng_seed: int = 0
    displacement_frac: float = 0.5

    def __post_init__(self) -> None:
        if not self.scale_factors or any(f <= 1.0 for f in self.scale_factors):
            raise ValueError(f"scale factors must all exceed 1, got {self.scale_factors}")
        if self.regions_per_positive < 1:
            raise ValueError("regions_per_positive must be >= 1")
        if self.displacement_frac < 0:
            raise ValueError("displacement_frac must be >= 0")


@dataclass
class Bag:
    """All regions of one image plus their weights and raw degrees.

    weights are 0 for negative-sub-bag members and sum to 1 over the rest;
    degrees keep the unnormalized overlap for supervision variants.
    """

    image_id: str
    label: str  # "pos" | "neg"
    regions: list[BBox]
    weights: np.ndarray
    degrees: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.regions)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.degrees = np.asarray(self.degrees, dtype=np.float64)
        if self.weights.shape != (n,) or self.degrees.shape != (n,):
            raise ValueError("regions, weights, and degrees must be aligned")

    @property
    def n(self) -> int:
        return len(self.regions)

    @property
    def n_pos(self) -> int:
        return int((self.weights > 0).sum())

    @property
    def n_neg(self) -> int:
        return self.n - self.n_pos


def _window_shape(ann: BBox, img_w: float, img_h: float, factor: float) -> tuple[float, float]:
    # The annotation's larger side picks the window side the factor applies
    # to; the other side follows the image's aspect ratio.
    if ann.w >= ann.h:
        w = factor * ann.w
        h = w * img_h / img_w
    else:
        h = factor * ann.h
        w = h * img_w / img_h
    return w, h


def generate_positive_bag(
    img: Image, annotations: Sequence[BBox], spec: BagSpec, image_id: str = ""
) -> Bag:
    """Sample regions_per_positive windows around the annotations.

    Regions are split as evenly as possible across annotations.  Windows too
    large for the frame degrade to the full frame; all others are displaced
    around the annotation center and translated back inside the image.
    """
    if not annotations:
        raise ValueError("positive bag generation requires at least one annotation")
    rng = np.random.default_rng(spec.rng_seed)
    img_w, img_h = float(img.width), float(img.height)
    factors = np.asarray(spec.scale_factors, dtype=np.float64)

    total = spec.regions_per_positive
    n_ann = len(annotations)
    counts = [total // n_ann + (1 if i < total % n_ann else 0) for i in range(n_ann)]

    regions: list[BBox] = []
    for ann, count in zip(annotations, counts):
        f = rng.choice(factors, size=count)
        ux = rng.uniform(-1.0, 1.0, size=count)
        uy = rng.uniform(-1.0, 1.0, size=count)
        cx, cy = ann.center
        for j in range(count):
            w, h = _window_shape(ann, img_w, img_h, float(f[j]))
            if w > img_w or h > img_h:
                regions.append(BBox(0.0, 0.0, img_w, img_h))
                continue
            dx = ux[j] * w * spec.displacement_frac
            dy = uy[j] * h * spec.displacement_frac
            box = BBox(cx + dx - w / 2.0, cy + dy - h / 2.0, w, h)
            regions.append(clamp_to_image(box, img_w, img_h))

    degrees = np.array([degree_of_interest(r, annotations) for r in regions])
    weights = np.zeros(len(regions))
    pos = degrees > 0
    if pos.any():
        weights[pos] = degrees[pos] / degrees[pos].sum()
    return Bag(image_id=image_id, label="pos", regions=regions, weights=weights, degrees=degrees)


def generate_negative_bag(img: Image, image_id: str = "") -> Bag:
    """Negative bags mirror the test procedure: the 11-region layout, weight 0."""
    regions = test_regions(img.width, img.height)
    n = len(regions)
    return Bag(
        image_id=image_id,
        label="neg",
        regions=regions,
        weights=np.zeros(n),
        degrees=np.zeros(n),
    )


def subsample_bag(bag: Bag, k: int, rng_seed: int) -> Bag:
    """Stratified subsample of k regions, keeping both sub-bags represented.

    Sampling is proportional to sub-bag sizes with at least one region per
    non-empty sub-bag; surviving positive weights are renormalized to sum 1.
    k >= n returns the bag unchanged.
    """
    if k < 2:
        raise ValueError(f"subsample size must be >= 2, got {k}")
    n = bag.n
    if k >= n:
        return bag
    rng = np.random.default_rng(rng_seed)
    pos_idx = np.flatnonzero(bag.weights > 0)
    neg_idx = np.flatnonzero(bag.weights == 0)
    n_pos, n_neg = len(pos_idx), len(neg_idx)

    if n_pos == 0:
        chosen = rng.choice(neg_idx, size=k, replace=False)
    elif n_neg == 0:
        chosen = rng.choice(pos_idx, size=k, replace=False)
    else:
        k_pos = round(k * n_pos / n)
        k_pos = min(max(k_pos, 1), k - 1, n_pos)
        k_neg = k - k_pos
        if k_neg > n_neg:
            k_neg = n_neg
            k_pos = k - k_neg
        sel_pos = rng.choice(pos_idx, size=k_pos, replace=False)
        sel_neg = rng.choice(neg_idx, size=k_neg, replace=False)
        chosen = np.concatenate([sel_pos, sel_neg])
    chosen = np.sort(chosen)

    weights = bag.weights[chosen].copy()
    pos = weights > 0
    if pos.any():
        weights[pos] = weights[pos] / weights[pos].sum()
    return Bag(
        image_id=bag.image_id,
        label=bag.label,
        regions=[bag.regions[i] for i in chosen],
        weights=weights,
        degrees=bag.degrees[chosen].copy(),
    )
