"""Shared test helpers."""

from __future__ import annotations

import math

import numpy as np

from regionmil.model import ModelParams, _PARAM_FIELDS, init_params
from regionmil.synthdata import Corpus, CorpusEntry, CorpusSpec, render_image


def make_constant_params(input_size: int, p: float) -> ModelParams:
    """Params whose network outputs sigmoid^-1(p) for every input.

    All weights and biases are zeroed, so the feature vector is zero and the
    head bias alone determines the logit.
    """
    params = init_params(input_size, seed=0)
    for name in _PARAM_FIELDS:
        getattr(params, name)[...] = 0.0
    params.fc_b[0] = math.log(p / (1.0 - p))
    return params


def make_jittered_params(input_size: int, seed: int) -> ModelParams:
    """Freshly initialised params with a randomised head bias.

    Glorot init alone scores near 0.5 for every region; the bias jitter
    spreads scores across both sides of common thresholds.
    """
    params = init_params(input_size, seed=seed)
    rng = np.random.default_rng(seed + 1)
    params.fc_b[0] = rng.uniform(-1.5, 1.5)
    params.fc_w[...] *= rng.uniform(0.5, 4.0)
    return params


def render_corpus_in_memory(spec: CorpusSpec) -> Corpus:
    """Materialise a corpus without touching the filesystem."""
    entries = []
    images = {}
    for index in range(spec.n_positive + spec.n_negative):
        pixels, label, boxes = render_image(spec, index)
        ordinal = index if label == "pos" else index - spec.n_positive
        entry_id = f"{label}_{ordinal:05d}"
        entries.append(CorpusEntry(id=entry_id, path=entry_id + ".png", label=label, boxes=boxes))
        images[entry_id] = pixels
    return Corpus(entries=entries, images=images)
