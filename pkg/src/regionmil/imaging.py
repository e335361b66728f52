"""Image container, bilinear crop-and-resize, grayscale conversion, and I/O."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as _PILImage

from .geometry import BBox

# Rec. 601 luma coefficients.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

# Slack for bounds checks on boxes produced by float arithmetic.
_EDGE_TOL = 1e-6


class Image:
    """Dense image, shape (height, width, channels), float64 values in [0, 1]."""

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.ascontiguousarray(pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixel array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must have at least one pixel, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("pixel values must be finite")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def resize_regions(
    pixels: np.ndarray, boxes: Sequence[BBox], out_w: int, out_h: int
) -> np.ndarray:
    """Bilinearly sample several boxes of one image into (N, out_h, out_w, C).

    Sampling uses the half-pixel-center convention: output pixel (i, j)
    reads the source at ``box.x + (j + 0.5) * box.w / out_w`` (same for y),
    with edge clamping.  This is the batched workhorse behind crop_resize;
    training and inference call it directly to amortize the index math.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    if len(boxes) == 0:
        raise ValueError("need at least one region to sample")
    src_h, src_w = pixels.shape[:2]
    bx = np.array([b.x for b in boxes], dtype=np.float64)
    by = np.array([b.y for b in boxes], dtype=np.float64)
    bw = np.array([b.w for b in boxes], dtype=np.float64)
    bh = np.array([b.h for b in boxes], dtype=np.float64)
    if ((bx < -_EDGE_TOL) | (by < -_EDGE_TOL)
            | (bx + bw > src_w + _EDGE_TOL) | (by + bh > src_h + _EDGE_TOL)).any():
        raise ValueError("region extends outside the image")

    # Source-space sample centers, shifted back by the half-pixel offset.
    ox = np.arange(out_w, dtype=np.float64) + 0.5
    oy = np.arange(out_h, dtype=np.float64) + 0.5
    u = bx[:, None] + ox[None, :] * (bw / out_w)[:, None] - 0.5  # (N, out_w)
    v = by[:, None] + oy[None, :] * (bh / out_h)[:, None] - 0.5  # (N, out_h)

    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    x0c = np.clip(x0, 0, src_w - 1)
    x1c = np.clip(x0 + 1, 0, src_w - 1)
    y0c = np.clip(y0, 0, src_h - 1)
    y1c = np.clip(y0 + 1, 0, src_h - 1)

    rows0 = y0c[:, :, None]  # (N, out_h, 1)
    rows1 = y1c[:, :, None]
    cols0 = x0c[:, None, :]  # (N, 1, out_w)
    cols1 = x1c[:, None, :]
    p00 = pixels[rows0, cols0]
    p01 = pixels[rows0, cols1]
    p10 = pixels[rows1, cols0]
    p11 = pixels[rows1, cols1]

    wx = fx[:, None, :, None]
    wy = fy[:, :, None, None]
    top = p00 * (1.0 - wx) + p01 * wx
    bottom = p10 * (1.0 - wx) + p11 * wx
    out = top * (1.0 - wy) + bottom * wy
    return np.clip(out, 0.0, 1.0)


def crop_resize(img: Image, region: BBox, out_w: int, out_h: int) -> Image:
    """Crop a region and resize it to out_w x out_h with bilinear sampling.

    Raises:
        ValueError: if the region extends outside the image or the output
            size is not positive.
    """
    return Image(resize_regions(img.pixels, [region], out_w, out_h)[0])


def to_grayscale(img: Image) -> Image:
    """Replace color with luminance 0.299R + 0.587G + 0.114B on all 3 channels.

    Kept 3-channel so downstream input shapes do not change.
    """
    if img.channels != 3:
        raise ValueError(f"to_grayscale expects 3 channels, got {img.channels}")
    px = img.pixels
    luma = px[:, :, 0] * LUMA_R + px[:, :, 1] * LUMA_G + px[:, :, 2] * LUMA_B
    luma = np.clip(luma, 0.0, 1.0)
    return Image(np.repeat(luma[:, :, None], 3, axis=2))


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; raster starts after the single whitespace
    # character that terminates maxval.
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    tokens: list[int] = []
    i = 2
    while len(tokens) < 3:
        if i >= len(data):
            raise ValueError(f"{path}: truncated PPM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < len(data) and data[j : j + 1].isdigit():
                j += 1
            tokens.append(int(data[i:j]))
            i = j
        else:
            raise ValueError(f"{path}: malformed PPM header")
    w, h, maxval = tokens
    if w < 1 or h < 1 or maxval != 255:
        raise ValueError(f"{path}: unsupported PPM geometry {w}x{h} maxval={maxval}")
    i += 1  # single whitespace after maxval
    raster = data[i : i + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError(f"{path}: truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def _write_ppm(arr: np.ndarray, path: Path) -> None:
    h, w = arr.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + arr.tobytes())


def load_image(path) -> Image:
    """Load a PNG (or binary PPM) file into a float image.

    Raises:
        FileNotFoundError: missing file.
        ValueError: undecodable or malformed content.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such image file: {p}")
    if p.suffix.lower() == ".ppm":
        arr = _read_ppm(p)
    else:
        try:
            with _PILImage.open(p) as im:
                if im.mode == "L":
                    arr = np.asarray(im, dtype=np.uint8)[:, :, None]
                else:
                    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise ValueError(f"{p}: cannot decode image ({exc})") from exc
    return Image(arr.astype(np.float64) / 255.0)


def save_image(img: Image, path) -> None:
    """Write an image as 8-bit PNG or PPM, chosen by file extension."""
    p = Path(path)
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    if p.suffix.lower() == ".ppm":
        if img.channels != 3:
            raise ValueError("PPM output requires 3 channels")
        _write_ppm(arr, p)
    else:
        if img.channels == 1:
            _PILImage.fromarray(arr[:, :, 0], mode="L").save(p, format="PNG")
        else:
            _PILImage.fromarray(arr, mode="RGB").save(p, format="PNG")
