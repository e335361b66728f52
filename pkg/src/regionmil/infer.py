"""Multi-scale test-time evaluation over a fixed 11-region layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox
from .imaging import Image, resize_regions
from .model import ModelParams, forward_batch, sigmoid_array


@dataclass
class Verdict:
    """Classification outcome for one image.

    score is the max region p_pos over the regions actually evaluated;
    triggering_region is the first region meeting the threshold, or None
    for a negative verdict.
    """

    label: str  # "pos" | "neg"
    score: float
    triggering_region: BBox | None
    regions_evaluated: int


def test_regions(img_w: int, img_h: int) -> list[BBox]:
    """The fixed evaluation layout: full frame, then 2/3-scale and 1/2-scale
    regions at the four corners and the center (11 regions total).

    Scaled sides are floored to integer pixels and clamped to at least 1.
    """
    w, h = int(img_w), int(img_h)
    if w < 1 or h < 1:
        raise ValueError(f"image dimensions must be >= 1, got {img_w}x{img_h}")
    regions = [BBox(0, 0, w, h)]
    for num, den in ((2, 3), (1, 2)):
        rw = max(1, (w * num) // den)
        rh = max(1, (h * num) // den)
        anchors = (
            (0, 0),
            (w - rw, 0),
            (0, h - rh),
            (w - rw, h - rh),
            ((w - rw) // 2, (h - rh) // 2),
        )
        regions.extend(BBox(ax, ay, rw, rh) for ax, ay in anchors)
    return regions


def classify(
    params: ModelParams, img: Image, threshold: float = 0.5, early_exit: bool = True
) -> Verdict:
    """Evaluate the 11 test regions in order and decide the image label.

    A region with p_pos >= threshold makes the image positive.  With
    early_exit the scan stops at the first such region; otherwise all 11
    regions are scored in one batch and the score is the max over all of
    them.  The two modes always agree on the label.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    regions = test_regions(img.width, img.height)
    s = params.input_size

    if early_exit:
        best = 0.0
        for i, region in enumerate(regions):
            x = resize_regions(img.pixels, [region], s, s).transpose(0, 3, 1, 2)
            h, _ = forward_batch(params, x)
            p = float(sigmoid_array(h)[0])
            best = max(best, p)
            if p >= threshold:
                return Verdict(
                    label="pos",
                    score=best,
                    triggering_region=region,
                    regions_evaluated=i + 1,
                )
        return Verdict(
            label="neg", score=best, triggering_region=None, regions_evaluated=len(regions)
        )

    x = resize_regions(img.pixels, regions, s, s).transpose(0, 3, 1, 2)
    h, _ = forward_batch(params, x)
    p = sigmoid_array(h)
    hits = np.flatnonzero(p >= threshold)
    if hits.size:
        first = int(hits[0])
        return Verdict(
            label="pos",
            score=float(p.max()),
            triggering_region=regions[first],
            regions_evaluated=len(regions),
        )
    return Verdict(
        label="neg", score=float(p.max()), triggering_region=None,
        regions_evaluated=len(regions),
    )
