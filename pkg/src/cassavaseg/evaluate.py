"""UNet vs. Otsu comparison against ground-truth necrosis percentages."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .baseline import otsu_segment
from .errors import CassavaSegError, NoRootDetected
from .imgmask import NECROSIS, ROOT, LabelMask, RgbImage
from .metrics import RegressionStats, class_dice, class_iou, mean_iou, regression_stats
from .scoring import necrosis_percentage, severity_score
from .trainer import Sample
from .unet import UnetModel, predict_masks

METHODS = ("unet", "otsu")
METRICS_HEADER = ["image", "dice_root", "dice_necrosis", "iou_root", "iou_necrosis", "mean_iou", "pred_pct", "true_pct"]
PER_IMAGE_HEADER = ["image", "true_pct", "unet_pct", "baseline_pct",
                    "true_severity", "unet_severity", "baseline_severity", "status"]

Predictor = Callable[[Sequence[Sample]], list[LabelMask]]


@dataclass
class MaskScores:
    dice_root: float
    dice_necrosis: float
    iou_root: float | None
    iou_necrosis: float | None
    mean_iou: float


@dataclass
class EvalRow:
    image: str
    true_pct: float | None
    pct: dict[str, float | None] = field(default_factory=dict)
    masks: dict[str, MaskScores | None] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def severity(self, pct):
        return None if pct is None else severity_score(pct)

    @property
    def status(self) -> str:
        if not self.errors:
            return "ok"
        return ";".join(f"{k}:{v}" for k, v in sorted(self.errors.items()))


@dataclass
class EvalReport:
    rows: list[EvalRow]
    aggregate: dict[str, RegressionStats | None]
    mask_means: dict[str, dict[str, float]]
    excluded: dict[str, int]

    def to_json(self) -> dict:
        def stats(s):
            return None if s is None else {"mse": s.mse, "r2": s.r2, "r": s.r}

        return {
            "n_images": len(self.rows),
            "methods": {m: {"regression": stats(self.aggregate[m]),
                            "segmentation": self.mask_means[m],
                            "excluded": self.excluded[m]} for m in self.aggregate},
            "failures": [{"image": r.image, "status": r.status} for r in self.rows if r.errors],
        }


def _mask_scores(pred: LabelMask, truth: LabelMask) -> MaskScores:
    return MaskScores(class_dice(pred, truth, ROOT), class_dice(pred, truth, NECROSIS),
                      class_iou(pred, truth, ROOT), class_iou(pred, truth, NECROSIS), mean_iou(pred, truth))


def unet_predictor(model: UnetModel, batch_size: int = 8) -> Predictor:
    def predict(samples):
        return predict_masks(model, [s.image for s in samples], batch_size=batch_size, original_size=True)
    return predict


def otsu_predictor(samples: Sequence[Sample]) -> list[LabelMask | None]:
    out = []
    for s in samples:
        try:
            out.append(otsu_segment(s.image)[0])
        except NoRootDetected:
            out.append(None)
    return out


def _pct(mask: LabelMask | None) -> tuple[float | None, str | None]:
    if mask is None:
        return None, "NoRootDetected"
    try:
        return necrosis_percentage(mask), None
    except NoRootDetected:
        return None, "NoRootDetected"


def _nanmean(values) -> float | None:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


def evaluate_samples(samples: Sequence[Sample], predictors: dict[str, Callable]) -> EvalReport:
    """Score every sample with every predictor; rows come out sorted by image id."""
    samples = sorted(samples, key=lambda s: s.name)
    predicted = {name: list(fn(samples)) for name, fn in predictors.items()}
    rows = []
    for i, s in enumerate(samples):
        true_pct, err = _pct(s.mask)
        row = EvalRow(s.name, true_pct)
        if err:
            row.errors["truth"] = err
        for name in predictors:
            mask = predicted[name][i]
            pct, perr = _pct(mask)
            row.pct[name] = pct
            row.masks[name] = None if mask is None else _mask_scores(mask, s.mask)
            if perr:
                row.errors[name] = perr
        rows.append(row)

    aggregate, means, excluded = {}, {}, {}
    for name in predictors:
        usable = [r for r in rows if r.true_pct is not None and r.pct[name] is not None]
        excluded[name] = len(rows) - len(usable)
        try:
            aggregate[name] = regression_stats([r.pct[name] for r in usable], [r.true_pct for r in usable])
        except CassavaSegError:
            aggregate[name] = None
        scored = [r.masks[name] for r in rows if r.masks[name] is not None]
        means[name] = {
            "dice_root": _nanmean(m.dice_root for m in scored),
            "dice_necrosis": _nanmean(m.dice_necrosis for m in scored),
            "iou_root": _nanmean(m.iou_root for m in scored),
            "iou_necrosis": _nanmean(m.iou_necrosis for m in scored),
            "mean_iou": _nanmean(m.mean_iou for m in scored),
        }
    return EvalReport(rows, aggregate, means, excluded)


def evaluate_model(model: UnetModel, samples: Sequence[Sample], batch_size: int = 8) -> EvalReport:
    return evaluate_samples(samples, {"unet": unet_predictor(model, batch_size), "otsu": otsu_predictor})


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    """per_image.csv, metrics.csv (UNet masks), scatter.csv and report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_IMAGE_HEADER)
        for r in report.rows:
            u, b = r.pct.get("unet"), r.pct.get("otsu")
            w.writerow([_fmt(x) for x in (r.image, r.true_pct, u, b, r.severity(r.true_pct),
                                          r.severity(u), r.severity(b), r.status)])
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in report.rows:
            m = r.masks.get("unet")
            if m is None:
                w.writerow([r.image, "", "", "", "", "", _fmt(r.pct.get("unet")), _fmt(r.true_pct)])
                continue
            w.writerow([_fmt(x) for x in (r.image, m.dice_root, m.dice_necrosis, m.iou_root, m.iou_necrosis,
                                          None if math.isnan(m.mean_iou) else m.mean_iou,
                                          r.pct.get("unet"), r.true_pct)])
    with open(out_dir / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "image", "true_pct", "pred_pct"])
        for method in METHODS:
            for r in report.rows:
                if r.true_pct is not None and r.pct.get(method) is not None:
                    w.writerow([method, r.image, _fmt(r.true_pct), _fmt(r.pct[method])])
    (out_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def read_per_image(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
