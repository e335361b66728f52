"""Axis-aligned box arithmetic and the overlap-based interest measure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

# A region's interest degree: max coverage of any annotation, always in [0, 1].
Degree = float


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in pixel coordinates; sub-pixel values allowed."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box fields must be finite, got {self}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


def intersect_area(a: BBox, b: BBox) -> float:
    """Area of the geometric intersection of two boxes, 0 if disjoint.

    Symmetric in its arguments.
    """
    iw = min(a.right, b.right) - max(a.x, b.x)
    ih = min(a.bottom, b.bottom) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def degree_of_interest(region: BBox, annotations: Sequence[BBox]) -> Degree:
    """How much of any annotated key region the given region covers.

    The measure is the maximum over annotations of
    ``intersect_area(region, a) / a.area``.  Coverage rather than IoU:
    it reaches 1 exactly when some annotation lies entirely inside the
    region, and 0 when the region misses all of them.

    Args:
        region: candidate window.
        annotations: annotated key-content boxes; must be non-empty.

    Raises:
        ValueError: on an empty annotation list.  Callers dealing with
            unannotated images should use degree 0 directly.
    """
    if not annotations:
        raise ValueError("degree_of_interest requires at least one annotation")
    best = 0.0
    for a in annotations:
        if (
            region.x <= a.x
            and region.y <= a.y
            and region.right >= a.right
            and region.bottom >= a.bottom
        ):
            # full containment short-circuits to exactly 1; recomputing the
            # annotation extent as (a.x + a.w) - a.x would round off 1.0
            return 1.0
        best = max(best, min(1.0, intersect_area(region, a) / a.area))
    return best


def clamp_to_image(b: BBox, img_w: float, img_h: float) -> BBox:
    """Translate a box by the minimal offset so it lies inside the image.

    Size is preserved; a box that cannot fit raises.
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {img_w}x{img_h}")
    if b.w > img_w or b.h > img_h:
        raise ValueError(
            f"box {b.w}x{b.h} does not fit in image {img_w}x{img_h}"
        )
    x = min(max(b.x, 0.0), img_w - b.w)
    y = min(max(b.y, 0.0), img_h - b.h)
    return BBox(x, y, b.w, b.h)
