"""Deterministic synthetic corpus: textured backgrounds, ringed-disc key
glyphs with tight annotations, near-miss distractors, and the JSONL manifest.

Positives and negatives share one background distribution; only the glyph
(a filled disc wrapped in a contrasting ring) carries label signal, and
distractors (same-hue square, or a disc without the ring) force structure
over color.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as _PILImage

from .geometry import BBox
from .imaging import Image, resize_regions

DISC_RGB = (0.85, 0.45, 0.10)
RING_RGB = (0.10, 0.20, 0.80)

_BG_CELLS = 6
_BG_LO, _BG_HI = 0.15, 0.85
_BG_NOISE = 0.06
_MIN_GLYPH = 8


@dataclass(frozen=True)
class CorpusSpec:
    n_positive: int
    n_negative: int
    image_size: int = 128
    glyph_size_range: tuple[int, int] = (12, 32)
    glyphs_per_positive: tuple[int, int] = (1, 3)
    distractor_rate: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValueError("corpus needs at least one image per class")
        lo, hi = self.glyph_size_range
        if not (_MIN_GLYPH <= lo <= hi):
            raise ValueError(
                f"glyph_size_range must satisfy {_MIN_GLYPH} <= min <= max, got {self.glyph_size_range}"
            )
        glo, ghi = self.glyphs_per_positive
        if not (1 <= glo <= ghi):
            raise ValueError(f"glyphs_per_positive must satisfy 1 <= min <= max, got {self.glyphs_per_positive}")
        if not (0.0 <= self.distractor_rate <= 1.0):
            raise ValueError(f"distractor_rate must be in [0, 1], got {self.distractor_rate}")
        # largest glyph must be placeable with a small margin
        if self.image_size < 2 * (hi // 2 + 2) + 1:
            raise ValueError(
                f"image_size {self.image_size} too small for glyphs up to {hi}px"
            )


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(_BG_LO, _BG_HI, (_BG_CELLS, _BG_CELLS, 3))
    base = resize_regions(coarse, [BBox(0, 0, _BG_CELLS, _BG_CELLS)], size, size)[0]
    noise = rng.uniform(-_BG_NOISE, _BG_NOISE, base.shape)
    return np.clip(base + noise, 0.0, 1.0)


def glyph_geometry(size: int) -> tuple[float, float, float]:
    """(outer_radius, ring_thickness, disc_radius) for a glyph of given size.

    The ring is kept thin: it is the label-defining structure, but its hue
    appears only on positives, so its area must stay small enough that mean
    image color remains uninformative.
    """
    outer = size / 2.0
    ring_t = max(1.5, 0.11 * size)
    gap = max(1.0, 0.10 * size)
    return outer, ring_t, outer - ring_t - gap


def _draw_glyph(px: np.ndarray, cx: int, cy: int, size: int, bright: float) -> BBox:
    outer_r, ring_t, disc_r = glyph_geometry(size)
    n = px.shape[0]
    yy, xx = np.ogrid[:n, :n]
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    outer = d2 <= outer_r * outer_r
    ring = outer & (d2 > (outer_r - ring_t) ** 2)
    disc = d2 <= disc_r * disc_r
    px[disc] = np.clip(np.array(DISC_RGB) * bright, 0.0, 1.0)
    px[ring] = np.clip(np.array(RING_RGB) * bright, 0.0, 1.0)
    ys, xs = np.nonzero(ring | disc)
    return BBox(
        int(xs.min()),
        int(ys.min()),
        int(xs.max() - xs.min() + 1),
        int(ys.max() - ys.min() + 1),
    )


def _draw_distractor(
    px: np.ndarray, cx: int, cy: int, size: int, kind: str, hue: tuple, bright: float
) -> None:
    n = px.shape[0]
    yy, xx = np.ogrid[:n, :n]
    # Sized so expected distractor paint area roughly matches glyph paint
    # area; squares may carry either glyph hue.  Both choices deny the
    # mean-color shortcut while staying structurally distinct from a
    # ringed disc.
    half = 0.45 * size
    if kind == "square":
        mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
    else:
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= half * half
    px[mask] = np.clip(np.array(hue) * bright, 0.0, 1.0)


def render_image(spec: CorpusSpec, index: int) -> tuple[np.ndarray, str, list[BBox]]:
    """Render corpus image #index (positives first); returns (pixels, label, boxes).

    Each image owns an independent random stream derived from (seed, index),
    so any subset renders identically in any order.
    """
    if not (0 <= index < spec.n_positive + spec.n_negative):
        raise ValueError(f"index {index} outside corpus of {spec.n_positive + spec.n_negative}")
    label = "pos" if index < spec.n_positive else "neg"
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index)))
    size = spec.image_size
    px = _background(size, rng)
    boxes: list[BBox] = []
    if label == "pos":
        count = int(rng.integers(spec.glyphs_per_positive[0], spec.glyphs_per_positive[1] + 1))
        for _ in range(count):
            gsize = int(rng.integers(spec.glyph_size_range[0], spec.glyph_size_range[1] + 1))
            margin = gsize // 2 + 2
            cx = int(rng.integers(margin, size - margin + 1))
            cy = int(rng.integers(margin, size - margin + 1))
            bright = float(rng.uniform(0.9, 1.1))
            boxes.append(_draw_glyph(px, cx, cy, gsize, bright))
    elif rng.random() < spec.distractor_rate:
        gsize = int(rng.integers(spec.glyph_size_range[0], spec.glyph_size_range[1] + 1))
        margin = gsize // 2 + 2
        cx = int(rng.integers(margin, size - margin + 1))
        cy = int(rng.integers(margin, size - margin + 1))
        kind = "square" if rng.random() < 0.5 else "disc"
        hue_roll = rng.random()
        hue = RING_RGB if kind == "square" and hue_roll < 0.5 else DISC_RGB
        bright = float(rng.uniform(0.9, 1.1))
        _draw_distractor(px, cx, cy, gsize, kind, hue, bright)
    return px, label, boxes


@dataclass
class CorpusEntry:
    id: str
    path: Path
    label: str
    boxes: list[BBox]


def _box_json(b: BBox) -> list:
    return [int(v) if float(v).is_integer() else float(v) for v in (b.x, b.y, b.w, b.h)]


def write_manifest(entries: Sequence[CorpusEntry], manifest_path, base_dir) -> None:
    base = Path(base_dir)
    lines = []
    for e in entries:
        record = {
            "id": e.id,
            "path": str(Path(e.path).relative_to(base)),
            "label": e.label,
            "boxes": [_box_json(b) for b in e.boxes],
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    Path(manifest_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(manifest_path) -> list[CorpusEntry]:
    """Parse a JSONL manifest; relative paths resolve against its directory.

    Unknown record fields (e.g. a category tag) are ignored.
    """
    p = Path(manifest_path)
    if not p.is_file():
        raise FileNotFoundError(f"no such manifest: {p}")
    base = p.parent
    entries = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{p}:{lineno}: malformed manifest line") from exc
        try:
            label = rec["label"]
            if label not in ("pos", "neg"):
                raise ValueError(f"{p}:{lineno}: label must be 'pos' or 'neg', got {label!r}")
            boxes = [BBox(*map(float, box)) for box in rec.get("boxes", [])]
            path = Path(rec["path"])
            if not path.is_absolute():
                path = base / path
            entries.append(CorpusEntry(id=str(rec["id"]), path=path, label=label, boxes=boxes))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{p}:{lineno}: incomplete manifest record") from exc
    return entries


class Corpus:
    """Manifest entries plus image access with an 8-bit in-memory cache."""

    def __init__(self, entries: Sequence[CorpusEntry], images: dict[str, np.ndarray] | None = None):
        self.entries = list(entries)
        self._store: dict[str, np.ndarray] = dict(images) if images else {}

    @classmethod
    def from_manifest(cls, manifest_path) -> "Corpus":
        return cls(read_manifest(manifest_path))

    def image(self, entry: CorpusEntry) -> Image:
        arr = self._store.get(entry.id)
        if arr is None:
            with _PILImage.open(entry.path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            self._store[entry.id] = arr
        if arr.dtype == np.uint8:
            return Image(arr.astype(np.float64) / 255.0)
        return Image(arr)


def generate_corpus(spec: CorpusSpec, out_dir) -> Path:
    """Write PNGs plus manifest.jsonl under out_dir; returns the manifest path."""
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index in range(spec.n_positive + spec.n_negative):
        px, label, boxes = render_image(spec, index)
        ordinal = index if label == "pos" else index - spec.n_positive
        image_id = f"{label}_{ordinal:05d}"
        path = images_dir / f"{image_id}.png"
        arr = np.round(px * 255.0).astype(np.uint8)
        _PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")
        entries.append(CorpusEntry(id=image_id, path=path, label=label, boxes=boxes))
    manifest = out / "manifest.jsonl"
    write_manifest(entries, manifest, out)
    return manifest
