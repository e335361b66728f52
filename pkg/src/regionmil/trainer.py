"""Momentum-SGD training over bags: the weighted objective plus the three
baseline modes (uniform weights, per-region supervision, whole image).

Each image's bag is regenerated every epoch from a seed derived from
(config seed, bag seed, epoch, image id), so runs are bit-reproducible and
independent of iteration order.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baggen import Bag, BagSpec, generate_negative_bag, generate_positive_bag, subsample_bag
from .geometry import BBox
from .imaging import resize_regions
from .infer import classify
from .milloss import PROB_FLOOR, bag_loss_arrays
from .model import (
    ModelParams,
    _PARAM_FIELDS,
    backward_batch,
    forward_batch,
    init_params,
    load_params,
    save_params,
    sigmoid_array,
    zero_gradients,
)
from .synthdata import Corpus, CorpusEntry

MIL_MODES = ("weighted_mil", "unweighted_mil")
MODES = MIL_MODES + ("region_supervised", "whole_image")

_VAL_FRACTION_DENOM = 10  # hold out ids hashing to 0 mod 10

_STATE_MAGIC = b"RGMILST1"


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainConfig:
    mode: str = "weighted_mil"
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_bags: int = 8
    subsample_k: int | None = None
    input_size: int = 64
    seed: int = 0
    checkpoint_every: int = 0
    bag_spec: BagSpec = field(default_factory=BagSpec)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_bags < 1:
            raise ValueError("batch_bags must be >= 1")
        if self.subsample_k is not None and self.subsample_k < 2:
            raise ValueError("subsample_k must be >= 2 or none")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    val_detection_rate: float
    wall_seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats]

    def write_csv(self, path) -> None:
        lines = ["epoch,mean_loss,val_detection_rate,wall_seconds"]
        for s in self.epochs:
            lines.append(
                f"{s.epoch},{s.mean_loss!r},{s.val_detection_rate!r},{s.wall_seconds!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary labeled parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2s(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _is_validation(image_id: str, seed: int) -> bool:
    return derive_seed(seed, "valsplit", image_id) % _VAL_FRACTION_DENOM == 0


def _build_bag(img, entry: CorpusEntry, config: TrainConfig, epoch: int) -> Bag:
    if config.mode == "whole_image":
        region = BBox(0.0, 0.0, float(img.width), float(img.height))
        w = 1.0 if entry.label == "pos" else 0.0
        return Bag(entry.id, entry.label, [region], np.array([w]), np.array([w]))
    bag_seed = derive_seed(config.seed, config.bag_spec.rng_seed, epoch, entry.id)
    if entry.label == "pos":
        spec = replace(config.bag_spec, rng_seed=bag_seed)
        bag = generate_positive_bag(img, entry.boxes, spec, image_id=entry.id)
    else:
        bag = generate_negative_bag(img, image_id=entry.id)
    if config.subsample_k is not None:
        bag = subsample_bag(bag, config.subsample_k, derive_seed(bag_seed, "subsample"))
    return bag


def _bag_objective(mode: str, bag: Bag, p_pos: np.ndarray, p_neg: np.ndarray):
    if mode in ("weighted_mil", "whole_image"):
        res = bag_loss_arrays(p_pos, p_neg, bag.weights)
        return res.loss, res.grad_h
    if mode == "unweighted_mil":
        w = np.zeros(bag.n)
        members = bag.weights > 0
        if members.any():
            w[members] = 1.0 / members.sum()
        res = bag_loss_arrays(p_pos, p_neg, w)
        return res.loss, res.grad_h
    # region_supervised: independent sigmoid cross-entropy per region,
    # positive label when the region covers more than half an annotation
    y = (bag.degrees > 0.5).astype(np.float64)
    p_true = np.where(y == 1.0, p_pos, p_neg)
    loss = float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())
    grad = np.where(p_true >= PROB_FLOOR, (p_pos - y) / bag.n, 0.0)
    return loss, grad


def _save_state(path, velocity, next_epoch: int) -> None:
    header = json.dumps({"next_epoch": next_epoch}, sort_keys=True).encode("utf-8")
    chunks = [_STATE_MAGIC, struct.pack("<I", len(header)), header]
    for name in _PARAM_FIELDS:
        chunks.append(np.ascontiguousarray(getattr(velocity, name), dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _load_state(path, velocity) -> int:
    data = Path(path).read_bytes()
    if not data.startswith(_STATE_MAGIC):
        raise ValueError(f"{path}: not a trainer state file")
    off = len(_STATE_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    for name in _PARAM_FIELDS:
        arr = getattr(velocity, name)
        count = arr.size
        loaded = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(arr.shape)
        arr[...] = loaded
        off += count * 8
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in state file")
    return int(header["next_epoch"])


def detection_rate(
    params: ModelParams, corpus: Corpus, entries: Sequence[CorpusEntry], threshold: float = 0.5
) -> float:
    """Fraction of entries whose verdict label matches the manifest label."""
    if not entries:
        return float("nan")
    hits = 0
    for entry in entries:
        # exhaustive mode batches all 11 regions into one forward pass and
        # agrees with early exit on the label
        verdict = classify(params, corpus.image(entry), threshold=threshold, early_exit=False)
        hits += verdict.label == entry.label
    return hits / len(entries)


def train(
    corpus: Corpus,
    config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
    resume_from=None,
) -> tuple[ModelParams, TrainLog]:
    """Train a region scorer on the corpus; returns final params and the log.

    10% of images (by seeded id hash) are held out for the per-epoch
    validation detection rate and never trained on.  checkpoint_path gets
    the final parameters plus a .state sidecar (optimizer state), written
    every checkpoint_every epochs along the way; resume_from continues a
    checkpointed run bit-exactly.

    Raises:
        ValueError: empty corpus, a MIL mode with no positive training
            images, or positives lacking annotations.
        NumericalError: non-finite loss.
    """
    if not corpus.entries:
        raise ValueError("corpus is empty")
    train_entries = [e for e in corpus.entries if not _is_validation(e.id, config.seed)]
    val_entries = [e for e in corpus.entries if _is_validation(e.id, config.seed)]
    if not train_entries:
        raise ValueError("validation holdout consumed the whole corpus")
    if config.mode in MIL_MODES and not any(e.label == "pos" for e in train_entries):
        raise ValueError(f"mode {config.mode} needs at least one positive training image")
    if config.mode != "whole_image":
        for e in train_entries:
            if e.label == "pos" and not e.boxes:
                raise ValueError(f"positive image {e.id} has no annotation boxes")

    if resume_from is not None:
        params = load_params(resume_from)
        if params.input_size != config.input_size:
            raise ValueError(
                f"checkpoint input_size {params.input_size} != config {config.input_size}"
            )
        velocity = zero_gradients(params)
        start_epoch = _load_state(str(resume_from) + ".state", velocity)
    else:
        params = init_params(config.input_size, config.seed)
        velocity = zero_gradients(params)
        start_epoch = 0

    s = config.input_size
    lr, mom = config.learning_rate, config.momentum
    stats: list[EpochStats] = []
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            derive_seed(config.seed, "shuffle", epoch)
        ).permutation(len(train_entries))
        bag_losses: list[float] = []
        for start in range(0, len(order), config.batch_bags):
            batch_idx = order[start : start + config.batch_bags]
            bags: list[Bag] = []
            xs: list[np.ndarray] = []
            for idx in batch_idx:
                entry = train_entries[int(idx)]
                img = corpus.image(entry)
                bag = _build_bag(img, entry, config, epoch)
                bags.append(bag)
                xs.append(resize_regions(img.pixels, bag.regions, s, s).transpose(0, 3, 1, 2))
            x = xs[0] if len(xs) == 1 else np.concatenate(xs)
            h, cache = forward_batch(params, x)
            p_pos = sigmoid_array(h)
            p_neg = sigmoid_array(-h)
            dl_dh = np.empty_like(h)
            offset = 0
            for bag in bags:
                sl = slice(offset, offset + bag.n)
                loss, grad = _bag_objective(config.mode, bag, p_pos[sl], p_neg[sl])
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, image {bag.image_id!r}"
                    )
                bag_losses.append(loss)
                dl_dh[sl] = grad
                offset += bag.n
            dl_dh /= len(bags)
            grads = backward_batch(params, cache, dl_dh)
            for name in _PARAM_FIELDS:
                v = getattr(velocity, name)
                v *= mom
                v -= lr * getattr(grads, name)
                getattr(params, name)[...] += v

        mean_loss = float(np.mean(bag_losses))
        if not np.isfinite(mean_loss):
            raise NumericalError(f"non-finite mean loss at epoch {epoch}")
        val_rate = detection_rate(params, corpus, val_entries)
        stats.append(
            EpochStats(
                epoch=epoch,
                mean_loss=mean_loss,
                val_detection_rate=val_rate,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        last = epoch + 1 == config.epochs
        if checkpoint_path is not None and (
            last or (config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0)
        ):
            save_params(params, checkpoint_path)
            _save_state(str(checkpoint_path) + ".state", velocity, epoch + 1)

    log = TrainLog(epochs=stats)
    if log_path is not None:
        log.write_csv(log_path)
    return params, log
