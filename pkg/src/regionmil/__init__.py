"""Weighted multiple-instance learning for region-based image classification."""

from .baggen import Bag, BagSpec, generate_negative_bag, generate_positive_bag, subsample_bag
from .geometry import BBox, clamp_to_image, degree_of_interest, intersect_area
from .imaging import Image, crop_resize, load_image, save_image, to_grayscale
from .infer import Verdict, classify, test_regions
from .metrics import (
    MetricsReport,
    detection_rates,
    kfold_split,
    mean_average_precision,
    roc,
)
from .milloss import BagLossResult, bag_loss, grad_check
from .model import (
    InstanceOutput,
    ModelParams,
    backward,
    forward,
    init_params,
    load_params,
    save_params,
)
from .synthdata import Corpus, CorpusSpec, generate_corpus, read_manifest
from .trainer import NumericalError, TrainConfig, TrainLog, train

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BagLossResult",
    "BagSpec",
    "BBox",
    "Corpus",
    "CorpusSpec",
    "Image",
    "InstanceOutput",
    "MetricsReport",
    "ModelParams",
    "NumericalError",
    "TrainConfig",
    "TrainLog",
    "Verdict",
    "backward",
    "bag_loss",
    "classify",
    "clamp_to_image",
    "crop_resize",
    "degree_of_interest",
    "detection_rates",
    "forward",
    "generate_corpus",
    "generate_negative_bag",
    "generate_positive_bag",
    "grad_check",
    "init_params",
    "intersect_area",
    "kfold_split",
    "load_image",
    "load_params",
    "mean_average_precision",
    "read_manifest",
    "roc",
    "save_image",
    "save_params",
    "subsample_bag",
    "test_regions",
    "to_grayscale",
    "train",
]
