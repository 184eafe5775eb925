"""Dice-loss training loop with best-checkpoint tracking and early stopping."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .augment import AugmentSpec, augment_pair
from .errors import DataError, DivergenceError, InsufficientData
from .imgmask import LabelMask, RgbImage, read_image, read_manifest, read_mask, resize_pair
from .metrics import DICE_SMOOTH, FOREGROUND_CLASSES, soft_dice_loss
from .nn.tensor import Tensor
from .unet import UnetConfig, UnetModel, build, forward, images_to_batch, save_model, sidecar_doc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 100
    batch_size: int = 8
    lr: float = 3e-4
    early_stop_patience: int = 20
    improvement_delta: float = 1e-4
    val_fraction: float = 0.1
    seed: int = 0
    include_background: bool = False
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    unet: UnetConfig = field(default_factory=UnetConfig)

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.epochs_max < 1 or self.batch_size < 1:
            raise ValueError("epochs_max and batch_size must be >= 1")

    @property
    def loss_classes(self) -> tuple[int, ...]:
        return (0, *FOREGROUND_CLASSES) if self.include_background else FOREGROUND_CLASSES

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "augment" in doc:
            doc["augment"] = AugmentSpec(**doc["augment"])
        if "unet" in doc:
            doc["unet"] = UnetConfig.from_dict(doc["unet"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_dice: float
    val_dice: float
    train_loss: float
    val_loss: float
    wall_seconds: float


@dataclass(frozen=True)
class Sample:
    name: str
    image: RgbImage
    mask: LabelMask


class EarlyStopping:
    """Tracks the best score and counts epochs without sufficient improvement.

    The best checkpoint follows the strict maximum, so the kept model always
    carries the highest recorded score; the patience counter only resets when
    the score beats the last reset point by more than ``delta``.
    """

    def __init__(self, patience: int, delta: float):
        self.patience = patience
        self.delta = delta
        self.best = -math.inf
        self.reference = -math.inf
        self.stale = 0

    def update(self, score: float) -> tuple[bool, bool]:
        """Returns (new_best, stop)."""
        is_best = score > self.best
        if is_best:
            self.best = score
        if score > self.reference + self.delta:
            self.reference = score
            self.stale = 0
        else:
            self.stale += 1
        return is_best, self.stale >= self.patience


def split_dataset(samples: Sequence, val_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ``round(n * val_fraction)`` (at least 1) go to validation."""
    n = len(samples)
    if n < 2:
        raise InsufficientData(f"need at least 2 samples to split, got {n}")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    order = np.random.default_rng(seed).permutation(n)
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]
    return train, val


def load_samples(records: Sequence[dict], side: int | None = None) -> list[Sample]:
    samples = []
    for rec in records:
        name = rec.get("id") or Path(rec["image"]).stem
        try:
            img, mask = read_image(rec["image"]), read_mask(rec["mask"])
        except (OSError, ValueError) as exc:
            raise DataError(f"sample {name}: {exc}") from exc
        if (img.width, img.height) != (mask.width, mask.height):
            raise DataError(f"sample {name}: image {img.width}x{img.height} vs mask {mask.width}x{mask.height}")
        if side is not None and (img.width, img.height) != (side, side):
            img, mask = resize_pair(img, mask, side)
        samples.append(Sample(name, img, mask))
    return samples


def _check(samples: Sequence[Sample], side: int) -> None:
    for s in samples:
        if (s.image.width, s.image.height) != (s.mask.width, s.mask.height):
            raise DataError(f"sample {s.name}: image and mask sizes differ")
        if (s.image.width, s.image.height) != (side, side):
            raise DataError(f"sample {s.name}: expected {side}x{side}, got {s.image.width}x{s.image.height}")


class _DiceAccumulator:
    """Pooled hard dice per class over many batches."""

    def __init__(self, classes):
        self.classes = list(classes)
        self.inter = np.zeros(len(self.classes))
        self.total = np.zeros(len(self.classes))

    def add(self, probs: np.ndarray, target: np.ndarray) -> None:
        pred = probs.argmax(axis=1)
        for i, c in enumerate(self.classes):
            p, t = pred == c, target == c
            self.inter[i] += np.count_nonzero(p & t)
            self.total[i] += np.count_nonzero(p) + np.count_nonzero(t)

    def dice(self) -> float:
        return float(np.mean((2 * self.inter + DICE_SMOOTH) / (self.total + DICE_SMOOTH)))


class _SoftDiceAccumulator:
    def __init__(self, classes):
        self.classes = list(classes)
        self.inter = np.zeros(len(self.classes))
        self.total = np.zeros(len(self.classes))

    def add(self, probs: np.ndarray, target: np.ndarray) -> None:
        for i, c in enumerate(self.classes):
            p = probs[:, c].astype(np.float64)
            t = target == c
            self.inter[i] += p[t].sum()
            self.total[i] += p.sum() + np.count_nonzero(t)

    def loss(self) -> float:
        return float(1.0 - np.mean((2 * self.inter + DICE_SMOOTH) / (self.total + DICE_SMOOTH)))


def evaluate_split(model: UnetModel, samples: Sequence[Sample], classes, batch_size: int = 8) -> tuple[float, float]:
    """(hard dice, soft dice loss) pooled over ``samples`` in eval mode."""
    hard, soft = _DiceAccumulator(classes), _SoftDiceAccumulator(classes)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        with nn.no_grad():
            probs = forward(model, Tensor(images_to_batch([s.image for s in chunk], model.input_scale)), "eval").data
        target = np.stack([s.mask.classes for s in chunk])
        hard.add(probs, target)
        soft.add(probs, target)
    return hard.dice(), soft.loss()


def train(config: TrainConfig, samples: Sequence[Sample], val_samples: Sequence[Sample] | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[UnetModel, list[EpochRecord]]:
    """Train a fresh UNet; returns the best-validation-dice model and the epoch history.

    Without ``val_samples`` the input is split by ``config.val_fraction``.
    """
    if val_samples is None:
        train_set, val_set = split_dataset(list(samples), config.val_fraction, config.seed)
    else:
        train_set, val_set = list(samples), list(val_samples)
    side = config.unet.input_side
    _check(train_set, side)
    _check(val_set, side)
    if not train_set or not val_set:
        raise InsufficientData("training and validation sets must both be non-empty")

    model = build(config.unet, config.seed)
    params = model.parameters()
    opt = nn.AdamState(lr=config.lr)
    stopper = EarlyStopping(config.early_stop_patience, config.improvement_delta)
    classes = config.loss_classes
    best_state = None
    history: list[EpochRecord] = []

    for epoch in range(1, config.epochs_max + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(len(train_set))
        hard = _DiceAccumulator(classes)
        losses, weights = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            pairs = [augment_pair(train_set[i].image, train_set[i].mask, config.augment,
                                  np.random.SeedSequence([config.seed, epoch, int(i)]))
                     for i in idx]
            x = Tensor(images_to_batch([p[0] for p in pairs], model.input_scale))
            target = np.stack([p[1].classes for p in pairs])

            probs = forward(model, x, "train")
            loss = soft_dice_loss(probs, target, classes)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            hard.add(probs.data, target)
            loss.backward()
            nn.adam_step(params, opt)
            nn.zero_grads(params)
            losses.append(value)
            weights.append(len(idx))

        val_dice, val_loss = evaluate_split(model, val_set, classes, config.batch_size)
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, "validation loss became NaN")
        record = EpochRecord(epoch, hard.dice(), val_dice, float(np.average(losses, weights=weights)),
                             val_loss, time.perf_counter() - t0)
        history.append(record)
        log.info("epoch %d: train_loss=%.4f train_dice=%.4f val_loss=%.4f val_dice=%.4f (%.1fs)",
                 epoch, record.train_loss, record.train_dice, val_loss, val_dice, record.wall_seconds)
        if on_epoch is not None:
            on_epoch(record)

        is_best, stop = stopper.update(val_dice)
        if is_best:
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        if stop:
            log.info("early stop after epoch %d (best val dice %.4f)", epoch, stopper.best)
            break

    model.load_state_dict(best_state)
    return model, history


HISTORY_FIELDS = [f.name for f in fields(EpochRecord)]


def write_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow([getattr(rec, name) for name in HISTORY_FIELDS])


def read_history(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in HISTORY_FIELDS[1:])) for r in rows]


def run_training(config: TrainConfig, manifest: str | Path, out_dir: str | Path) -> tuple[UnetModel, list[EpochRecord]]:
    """Train from a manifest and write best.ckpt, history.csv and config.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_samples(read_manifest(manifest), config.unet.input_side)
    model, history = train(config, samples)
    save_model(model, out_dir / "best.ckpt", write_sidecar=False)
    write_history(history, out_dir / "history.csv")
    doc = sidecar_doc(model)
    doc["train"] = config.to_dict()
    (out_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return model, history
