"""Region scorer: a small convnet with exact manual forward and backward passes.

Three conv(3x3)+ReLU+maxpool(2x2) blocks (3->8->16->32 channels), global
average pooling, and a single affine output producing the region logit h.
Convolutions are valid (no padding); all math is float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .imaging import Image

CHANNELS = (3, 8, 16, 32)
KERNEL = 3
MIN_INPUT_SIZE = 22

_MAGIC = b"RGMILNET"
_VERSION = 1
_PARAM_FIELDS = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "fc_w", "fc_b",
)


def sigmoid(h: float) -> float:
    """Numerically stable logistic function for scalars."""
    if h >= 0:
        return 1.0 / (1.0 + math.exp(-h))
    z = math.exp(h)
    return z / (1.0 + z)


def sigmoid_array(h: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, elementwise."""
    h = np.asarray(h, dtype=np.float64)
    out = np.empty_like(h)
    pos = h >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-h[pos]))
    z = np.exp(h[~pos])
    out[~pos] = z / (1.0 + z)
    return out


@dataclass(frozen=True)
class InstanceOutput:
    """Scored region: logit h and its Bernoulli probabilities."""

    h: float
    p_pos: float
    p_neg: float

    @classmethod
    def from_logit(cls, h: float) -> "InstanceOutput":
        return cls(h=float(h), p_pos=sigmoid(h), p_neg=sigmoid(-h))


@dataclass
class ModelParams:
    """Flat parameter record; seed records init/training provenance."""

    input_size: int
    seed: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray


@dataclass
class ParamGradients:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray


@dataclass
class ActivationCache:
    """Intermediate activations retained by forward for the backward pass."""

    params: ModelParams
    x_shape: tuple
    cols: tuple          # im2col matrices per conv layer
    pre: tuple           # pre-ReLU conv outputs per layer
    pool_idx: tuple      # argmax index per 2x2 pool window, per layer
    feat: np.ndarray     # global-average-pooled features (N, 32)


def layer_dims(input_size: int) -> list[tuple[int, int]]:
    """(conv_out, pool_out) spatial sizes per block; validates input_size."""
    s = int(input_size)
    if s < MIN_INPUT_SIZE:
        raise ValueError(f"input_size must be >= {MIN_INPUT_SIZE}, got {input_size}")
    dims = []
    for _ in range(3):
        c = s - (KERNEL - 1)
        p = c // 2
        dims.append((c, p))
        s = p
    return dims


def init_params(input_size: int, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    layer_dims(input_size)
    rng = np.random.default_rng(seed)
    fields = {}
    for i in range(3):
        c_in, c_out = CHANNELS[i], CHANNELS[i + 1]
        fan_in = c_in * KERNEL * KERNEL
        fan_out = c_out * KERNEL * KERNEL
        s = math.sqrt(6.0 / (fan_in + fan_out))
        fields[f"conv{i + 1}_w"] = rng.uniform(-s, s, (c_out, c_in, KERNEL, KERNEL))
        fields[f"conv{i + 1}_b"] = np.zeros(c_out)
    s = math.sqrt(6.0 / (CHANNELS[3] + 1))
    fields["fc_w"] = rng.uniform(-s, s, CHANNELS[3])
    fields["fc_b"] = np.zeros(1)
    return ModelParams(input_size=int(input_size), seed=int(seed), **fields)


def _conv_forward(x, w, b):
    n, c_in, hh, ww = x.shape
    c_out = w.shape[0]
    oh, ow = hh - 2, ww - 2
    win = np.lib.stride_tricks.sliding_window_view(x, (KERNEL, KERNEL), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c_in * 9)
    cols = np.ascontiguousarray(cols)
    out = cols @ w.reshape(c_out, -1).T + b
    out = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    return out, cols


def _conv_backward(dout, cols, w, in_shape):
    n, c_in, hh, ww = in_shape
    c_out = w.shape[0]
    oh, ow = hh - 2, ww - 2
    dmat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = dmat @ w.reshape(c_out, -1)
    dc = dcols.reshape(n, oh, ow, c_in, KERNEL, KERNEL).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros(in_shape)
    for di in range(KERNEL):
        for dj in range(KERNEL):
            dx[:, :, di:di + oh, dj:dj + ow] += dc[:, :, di, dj]
    return dx, dw, db


def _maxpool_forward(x):
    n, c, hh, ww = x.shape
    oh, ow = hh // 2, ww // 2
    t = x[:, :, :2 * oh, :2 * ow].reshape(n, c, oh, 2, ow, 2)
    t = np.ascontiguousarray(t.transpose(0, 1, 2, 4, 3, 5)).reshape(n, c, oh, ow, 4)
    idx = t.argmax(axis=-1)  # first occurrence wins ties, deterministically
    out = np.take_along_axis(t, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout, idx, in_shape):
    n, c, hh, ww = in_shape
    oh, ow = hh // 2, ww // 2
    flat = np.zeros((n, c, oh, ow, 4))
    np.put_along_axis(flat, idx[..., None], np.asarray(dout)[..., None], axis=-1)
    dx = np.zeros(in_shape)
    dx[:, :, :2 * oh, :2 * ow] = (
        flat.reshape(n, c, oh, ow, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * oh, 2 * ow)
    )
    return dx


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ActivationCache]:
    """Score a batch of regions; x has shape (N, 3, s, s) with s = input_size.

    Returns the logits (N,) and the cache consumed by backward_batch.
    """
    x = np.asarray(x, dtype=np.float64)
    s = params.input_size
    if x.ndim != 4 or x.shape[1] != CHANNELS[0] or x.shape[2] != s or x.shape[3] != s:
        raise ValueError(
            f"expected input of shape (N, {CHANNELS[0]}, {s}, {s}), got {x.shape}"
        )
    cols, pre, idx = [], [], []
    cur = x
    for i in range(3):
        w = getattr(params, f"conv{i + 1}_w")
        b = getattr(params, f"conv{i + 1}_b")
        a, c = _conv_forward(cur, w, b)
        cols.append(c)
        pre.append(a)
        r = np.maximum(a, 0.0)
        cur, ix = _maxpool_forward(r)
        idx.append(ix)
    feat = cur.mean(axis=(2, 3))
    h = feat @ params.fc_w + params.fc_b[0]
    cache = ActivationCache(
        params=params,
        x_shape=x.shape,
        cols=tuple(cols),
        pre=tuple(pre),
        pool_idx=tuple(idx),
        feat=feat,
    )
    return h, cache


def forward(params: ModelParams, region_pixels: Image) -> tuple[InstanceOutput, ActivationCache]:
    """Score one region image of the configured input size."""
    if region_pixels.channels != CHANNELS[0]:
        raise ValueError(f"expected 3-channel input, got {region_pixels.channels}")
    s = params.input_size
    if region_pixels.height != s or region_pixels.width != s:
        raise ValueError(
            f"expected {s}x{s} input, got "
            f"{region_pixels.width}x{region_pixels.height}"
        )
    x = np.moveaxis(region_pixels.pixels, 2, 0)[None]
    h, cache = forward_batch(params, x)
    return InstanceOutput.from_logit(float(h[0])), cache


def backward_batch(params: ModelParams, cache: ActivationCache, dl_dh: np.ndarray) -> ParamGradients:
    """Gradients of sum_i dl_dh[i] * h_i with respect to every parameter."""
    if cache.params is not params:
        raise ValueError("activation cache was produced by different parameters")
    dl_dh = np.asarray(dl_dh, dtype=np.float64)
    n = cache.x_shape[0]
    if dl_dh.shape != (n,):
        raise ValueError(f"dl_dh must have shape ({n},), got {dl_dh.shape}")

    grads = {}
    grads["fc_w"] = cache.feat.T @ dl_dh
    grads["fc_b"] = np.array([dl_dh.sum()])
    dfeat = dl_dh[:, None] * params.fc_w[None, :]

    pool_h = cache.pre[2].shape[2] // 2
    pool_w = cache.pre[2].shape[3] // 2
    dcur = np.broadcast_to(
        (dfeat / (pool_h * pool_w))[:, :, None, None],
        (n, CHANNELS[3], pool_h, pool_w),
    )
    for i in (2, 1, 0):
        pre = cache.pre[i]
        dr = _maxpool_backward(dcur, cache.pool_idx[i], pre.shape)
        da = dr * (pre > 0)
        if i == 0:
            in_shape = cache.x_shape
        else:
            prev = cache.pre[i - 1]
            in_shape = (n, CHANNELS[i], prev.shape[2] // 2, prev.shape[3] // 2)
        w = getattr(params, f"conv{i + 1}_w")
        dcur, dw, db = _conv_backward(da, cache.cols[i], w, in_shape)
        grads[f"conv{i + 1}_w"] = dw
        grads[f"conv{i + 1}_b"] = db
    return ParamGradients(**grads)


def backward(params: ModelParams, cache: ActivationCache, dl_dh: float) -> ParamGradients:
    """Single-region backward: gradients of dl_dh * h for a cache from forward."""
    return backward_batch(params, cache, np.array([float(dl_dh)]))


def zero_gradients(params: ModelParams) -> ParamGradients:
    return ParamGradients(**{f: np.zeros_like(getattr(params, f)) for f in _PARAM_FIELDS})


def save_params(params: ModelParams, path) -> None:
    """Serialize parameters: magic, version, JSON descriptor, raw float64 LE."""
    descriptor = {
        "input_size": params.input_size,
        "channels": list(CHANNELS),
        "kernel": KERNEL,
        "seed": params.seed,
    }
    header = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(header)), header]
    for name in _PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        chunks.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _param_shapes(input_size: int) -> list[tuple[str, tuple]]:
    shapes = []
    for i in range(3):
        shapes.append((f"conv{i + 1}_w", (CHANNELS[i + 1], CHANNELS[i], KERNEL, KERNEL)))
        shapes.append((f"conv{i + 1}_b", (CHANNELS[i + 1],)))
    shapes.append(("fc_w", (CHANNELS[3],)))
    shapes.append(("fc_b", (1,)))
    return shapes


def load_params(path) -> ModelParams:
    """Load a checkpoint written by save_params; bit-exact round trip.

    Raises:
        FileNotFoundError: missing file.
        ValueError: wrong magic, unsupported version, or corrupt layout.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(_MAGIC) + 8 or data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + hlen > len(data):
        raise ValueError(f"{path}: truncated checkpoint header")
    try:
        descriptor = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt checkpoint descriptor") from exc
    off += hlen
    if descriptor.get("channels") != list(CHANNELS) or descriptor.get("kernel") != KERNEL:
        raise ValueError(f"{path}: checkpoint architecture does not match this model")
    input_size = int(descriptor["input_size"])
    fields = {}
    for name, shape in _param_shapes(input_size):
        count = int(np.prod(shape))
        nbytes = count * 8
        if off + nbytes > len(data):
            raise ValueError(f"{path}: truncated checkpoint data")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        fields[name] = arr.astype(np.float64, copy=True)
        off += nbytes
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    params = ModelParams(input_size=input_size, seed=int(descriptor.get("seed", 0)), **fields)
    for name in _PARAM_FIELDS:
        if not np.isfinite(getattr(params, name)).all():
            raise ValueError(f"{path}: non-finite values in {name}")
    return params
