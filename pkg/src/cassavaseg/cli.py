"""Command-line entry point: ``cassavaseg <command> ...``.

Commands: rasterize, synth, train, predict, score, baseline, evaluate.
Failures exit non-zero and print ``{"error": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .augment import AugmentSpec
from .baseline import baseline_score
from .errors import CassavaSegError
from .evaluate import evaluate_model, write_report
from .imgmask import (LabelMask, load_annotation, mask_to_color, rasterize, read_image, read_manifest,
                      read_mask, write_image, write_manifest, write_mask)
from .scoring import render_overlay, score_mask
from .synthgen import DEFAULT_NOISE, sample_category_suite
from .trainer import TrainConfig, load_samples, run_training
from .unet import UnetConfig, load_model, predict_mask

log = logging.getLogger("cassavaseg")


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_rasterize(args) -> None:
    mask = rasterize(load_annotation(args.annotation))
    write_mask(mask, args.out)
    if args.color:
        write_image(mask_to_color(mask), args.color)


def cmd_synth(args) -> None:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records, truth = [], []
    suite = sample_category_suite(args.seed, args.per_category, side=args.side, noise_stddev=args.noise)
    for i, (img, mask, category) in enumerate(suite):
        name = f"{category}_{i:04d}"
        write_image(img, out / "images" / f"{name}.png")
        write_mask(mask, out / "masks" / f"{name}.png")
        records.append({"id": name, "image": f"images/{name}.png", "mask": f"masks/{name}.png",
                        "category": category})
        pct = score_mask(mask).percentage
        truth.append((f"images/{name}.png", repr(pct), category))
    write_manifest(records, out / "manifest.jsonl")
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "true_percentage", "category"])
        w.writerows(truth)
    print(json.dumps({"samples": len(records), "manifest": str(out / "manifest.jsonl")}))


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_dict(args.config_doc) if args.config_doc else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs_max", "batch_size", "lr", "early_stop_patience",
                                               "improvement_delta", "val_fraction")
                 if getattr(args, k) is not None}
    if args.seed_given or "seed" not in (args.config_doc or {}):
        overrides["seed"] = args.seed
    aug = {k: v for k, v in (("flip_prob", args.flip_prob), ("max_rotation_deg", args.max_rot),
                             ("max_shift_frac", args.max_shift)) if v is not None}
    if aug:
        overrides["augment"] = replace(cfg.augment, **aug)
    net = {k: v for k, v in (("input_side", args.side), ("depth", args.depth),
                             ("base_channels", args.base)) if v is not None}
    if net:
        overrides["unet"] = replace(cfg.unet, **net)
    return replace(cfg, **overrides)


def cmd_train(args) -> None:
    cfg = _train_config(args)
    _, history = run_training(cfg, args.manifest, args.out)
    best = max(history, key=lambda r: r.val_dice)
    print(json.dumps({"epochs": len(history), "best_epoch": best.epoch, "best_val_dice": best.val_dice,
                      "out": str(args.out)}))


def cmd_predict(args) -> None:
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        img = read_image(path)
        mask = predict_mask(model, img, original_size=args.original_size)
        stem = Path(path).stem
        write_mask(mask, out / f"{stem}_mask.png")
        write_image(render_overlay(mask), out / f"{stem}_overlay.png")


def cmd_score(args) -> None:
    for path in args.masks:
        mask: LabelMask = read_mask(path)
        _emit(score_mask(mask).to_json(image=str(path)), args.out)


def cmd_baseline(args) -> None:
    for path in args.images:
        doc = baseline_score(read_image(path)).to_json(image=str(path))
        doc["method"] = "otsu"
        _emit(doc, args.out)


def cmd_evaluate(args) -> None:
    model = load_model(args.model)
    samples = load_samples(read_manifest(args.manifest))
    report = evaluate_model(model, samples)
    write_report(report, args.out)
    print(json.dumps(report.to_json()["methods"], sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads; 1 is the deterministic reference mode (default)")
    common.add_argument("--config", default=None, help="JSON file with training configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cassavaseg", parents=[common],
                                     description="Cassava root necrosis segmentation and scoring")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", parents=[common], help="annotation JSON -> class-index mask PNG")
    p.add_argument("annotation")
    p.add_argument("--out", required=True)
    p.add_argument("--color", help="also write a color-coded mask PNG")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic root-disc dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-category", type=int, default=1)
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a UNet from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", dest="epochs_max", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", dest="early_stop_patience", type=int)
    p.add_argument("--min-delta", dest="improvement_delta", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--side", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base", type=int)
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--max-rot", type=float)
    p.add_argument("--max-shift", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="segment images; writes mask and overlay PNGs")
    p.add_argument("images", nargs="+")
    p.add_argument("--model", required=True, help="best.ckpt (config.json must sit next to it)")
    p.add_argument("--out", required=True)
    p.add_argument("--original-size", action="store_true", help="upscale masks to the input image size")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", parents=[common], help="necrosis percentage and severity of mask PNGs")
    p.add_argument("masks", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("baseline", parents=[common], help="Otsu-threshold necrosis estimate")
    p.add_argument("images", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[common], help="compare UNet and Otsu against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed_given = args.seed is not None
    args.seed = 0 if args.seed is None else args.seed
    try:
        args.config_doc = json.loads(Path(args.config).read_text()) if args.config else None
        with threadpool_limits(limits=args.threads or 1):
            args.func(args)
    except (CassavaSegError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
