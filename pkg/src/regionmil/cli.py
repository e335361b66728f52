"""Command-line surface: corpus generation, training, evaluation, prediction,
cross-validation, and ROC export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .baggen import BagSpec
from .imaging import load_image, to_grayscale
from .infer import classify
from .metrics import (
    MetricsReport,
    detection_rates,
    kfold_split,
    mean_average_precision,
    roc,
)
from .model import load_params
from .synthdata import Corpus, CorpusSpec, generate_corpus
from .trainer import MODES, NumericalError, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise _UsageError(message)


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such config file: {p}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{p}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _to_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"config key {key}: expected integer, got {value!r}") from None


def _to_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"config key {key}: expected number, got {value!r}") from None


def _to_float_tuple(value: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ValueError(f"config key {key}: expected comma-separated numbers, got {value!r}") from None


def _to_int_pair(value: str, key: str) -> tuple[int, int]:
    parts = [v for v in value.split(",") if v.strip()]
    if len(parts) != 2:
        raise ValueError(f"config key {key}: expected two comma-separated integers, got {value!r}")
    return (_to_int(parts[0], key), _to_int(parts[1], key))


_BAG_KEYS = {f.name for f in dataclass_fields(BagSpec)}
_TRAIN_KEYS = {f.name for f in dataclass_fields(TrainConfig)} - {"bag_spec"}


def train_config_from_dict(raw: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig (with nested BagSpec) from flat config keys."""
    unknown = set(raw) - _TRAIN_KEYS - _BAG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    bag_kwargs = {}
    if "scale_factors" in raw:
        bag_kwargs["scale_factors"] = _to_float_tuple(raw["scale_factors"], "scale_factors")
    if "regions_per_positive" in raw:
        bag_kwargs["regions_per_positive"] = _to_int(raw["regions_per_positive"], "regions_per_positive")
    if "rng_seed" in raw:
        bag_kwargs["rng_seed"] = _to_int(raw["rng_seed"], "rng_seed")
    if "displacement_frac" in raw:
        bag_kwargs["displacement_frac"] = _to_float(raw["displacement_frac"], "displacement_frac")
    cfg_kwargs = {"bag_spec": BagSpec(**bag_kwargs)}
    if "mode" in raw:
        cfg_kwargs["mode"] = raw["mode"]
    if "learning_rate" in raw:
        cfg_kwargs["learning_rate"] = _to_float(raw["learning_rate"], "learning_rate")
    if "momentum" in raw:
        cfg_kwargs["momentum"] = _to_float(raw["momentum"], "momentum")
    for key in ("epochs", "batch_bags", "input_size", "seed", "checkpoint_every"):
        if key in raw:
            cfg_kwargs[key] = _to_int(raw[key], key)
    if "subsample_k" in raw:
        value = raw["subsample_k"].lower()
        cfg_kwargs["subsample_k"] = None if value in ("none", "") else _to_int(value, "subsample_k")
    return TrainConfig(**cfg_kwargs)


def corpus_spec_from_dict(raw: dict[str, str]) -> CorpusSpec:
    known = {f.name for f in dataclass_fields(CorpusSpec)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown corpus spec keys: {', '.join(sorted(unknown))}")
    for required in ("n_positive", "n_negative"):
        if required not in raw:
            raise ValueError(f"corpus spec missing required key {required}")
    kwargs = {
        "n_positive": _to_int(raw["n_positive"], "n_positive"),
        "n_negative": _to_int(raw["n_negative"], "n_negative"),
    }
    if "image_size" in raw:
        kwargs["image_size"] = _to_int(raw["image_size"], "image_size")
    if "glyph_size_range" in raw:
        kwargs["glyph_size_range"] = _to_int_pair(raw["glyph_size_range"], "glyph_size_range")
    if "glyphs_per_positive" in raw:
        kwargs["glyphs_per_positive"] = _to_int_pair(raw["glyphs_per_positive"], "glyphs_per_positive")
    if "distractor_rate" in raw:
        kwargs["distractor_rate"] = _to_float(raw["distractor_rate"], "distractor_rate")
    if "seed" in raw:
        kwargs["seed"] = _to_int(raw["seed"], "seed")
    return CorpusSpec(**kwargs)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _cmd_gen_data(args) -> int:
    spec = corpus_spec_from_dict(parse_config_file(args.spec))
    manifest = generate_corpus(spec, args.out)
    print(manifest)
    return EXIT_OK


def _cmd_train(args) -> int:
    config = train_config_from_dict(parse_config_file(args.config))
    if args.mode:
        raw = {f.name: getattr(config, f.name) for f in dataclass_fields(TrainConfig)}
        raw["mode"] = args.mode
        config = TrainConfig(**raw)
    corpus = Corpus.from_manifest(args.manifest)
    log_path = args.log if args.log else str(args.out) + ".log.csv"
    params, log = train(
        corpus,
        config,
        checkpoint_path=args.out,
        log_path=log_path,
        resume_from=args.resume_from,
    )
    if log.epochs:
        final = log.epochs[-1]
        print(
            f"trained {config.mode} for {len(log.epochs)} epochs: "
            f"final loss {final.mean_loss:.4f}, val rate {final.val_detection_rate:.4f}"
        )
    print(args.out)
    return EXIT_OK


def _score_corpus(params, corpus, threshold, gray):
    verdicts = []
    scored = []
    for entry in corpus.entries:
        img = corpus.image(entry)
        if gray:
            img = to_grayscale(img)
        verdict = classify(params, img, threshold=threshold, early_exit=False)
        verdicts.append((entry.label, verdict))
        scored.append((entry.label, verdict.score))
    return verdicts, scored


def _build_report(verdicts, scored, fpr_targets) -> MetricsReport:
    rate_pos, rate_neg, rate_all = detection_rates(verdicts)
    labels = {lab for lab, _ in scored}
    roc_points = auc = None
    tpr_at = {}
    if labels == {"pos", "neg"}:
        result = roc(scored, fpr_targets)
        roc_points = [list(p) for p in result.points]
        auc = result.auc
        tpr_at = result.tpr_at_fpr
    map_score = mean_average_precision(scored) if "pos" in labels else None
    return MetricsReport(
        detection_rate_pos=rate_pos,
        detection_rate_neg=rate_neg,
        detection_rate_all=rate_all,
        roc_points=roc_points,
        auc=auc,
        tpr_at_fpr=tpr_at,
        map_score=map_score,
    )


def _print_report(report: MetricsReport) -> None:
    def fmt(x):
        return "n/a" if x is None else f"{x:.4f}"

    print(f"detection rate pos: {fmt(report.detection_rate_pos)}")
    print(f"detection rate neg: {fmt(report.detection_rate_neg)}")
    print(f"detection rate all: {fmt(report.detection_rate_all)}")
    print(f"auc: {fmt(report.auc)}")
    for target in sorted(report.tpr_at_fpr):
        print(f"tpr at fpr {target}: {report.tpr_at_fpr[target]:.4f}")
    print(f"map: {fmt(report.map_score)}")


def _cmd_eval(args) -> int:
    params = load_params(args.model)
    corpus = Corpus.from_manifest(args.manifest)
    verdicts, scored = _score_corpus(params, corpus, args.threshold, args.gray)
    report = _build_report(verdicts, scored, args.fpr_targets or [])
    _print_report(report)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_predict(args) -> int:
    params = load_params(args.model)
    img = load_image(args.image)
    verdict = classify(
        params, img, threshold=args.threshold, early_exit=not args.no_early_exit
    )
    print(f"label: {verdict.label}")
    print(f"score: {verdict.score:.6f}")
    print(f"regions_evaluated: {verdict.regions_evaluated}")
    if verdict.triggering_region is not None:
        r = verdict.triggering_region
        print(f"triggering_region: x={r.x:g} y={r.y:g} w={r.w:g} h={r.h:g}")
    else:
        print("triggering_region: none")
    return EXIT_OK


def _cmd_crossval(args) -> int:
    config = train_config_from_dict(parse_config_file(args.config))
    corpus = Corpus.from_manifest(args.manifest)
    labels = [e.label for e in corpus.entries]
    splits = kfold_split(labels, args.k, config.seed)
    all_rates = []
    for fold, (train_idx, val_idx) in enumerate(splits):
        fold_corpus = Corpus([corpus.entries[i] for i in train_idx])
        params, _ = train(fold_corpus, config)
        verdicts = []
        for i in val_idx:
            entry = corpus.entries[i]
            verdict = classify(params, corpus.image(entry), early_exit=False)
            verdicts.append((entry.label, verdict))
        rate_pos, rate_neg, rate_all = detection_rates(verdicts)
        all_rates.append(rate_all)
        def fmt(x):
            return "n/a" if x is None else f"{x:.4f}"
        print(f"fold {fold}: pos={fmt(rate_pos)} neg={fmt(rate_neg)} all={fmt(rate_all)}")
    mean = float(np.mean(all_rates))
    std = float(np.std(all_rates))
    print(f"overall detection rate: {mean:.4f} +/- {std:.4f} over {args.k} folds")
    return EXIT_OK


def _cmd_roc_dump(args) -> int:
    params = load_params(args.model)
    corpus = Corpus.from_manifest(args.manifest)
    _, scored = _score_corpus(params, corpus, 0.5, False)
    result = roc(scored)
    lines = ["fpr,tpr,threshold"]
    for (fpr, tpr), threshold in zip(result.points, result.thresholds):
        lines.append(f"{fpr!r},{tpr!r},{threshold!r}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(args.out)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="regionmil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="corpus spec file (key=value)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="training config file (key=value)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--mode", choices=MODES, help="override the config's mode")
    p.add_argument("--log", help="TrainLog CSV path (default: <out>.log.csv)")
    p.add_argument("--resume-from", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--gray", action="store_true", help="evaluate on grayscale copies")
    p.add_argument("--fpr-targets", type=_float_list, default=[])
    p.add_argument("--report", help="write the metrics report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-early-exit", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=_cmd_crossval)

    p = sub.add_parser("roc-dump", help="write the ROC sweep as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_roc_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
