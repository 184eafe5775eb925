"""Paired image/mask augmentation: horizontal flip, rotation, width/height shift."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .imgmask import LabelMask, RgbImage


@dataclass(frozen=True)
class AugmentSpec:
    flip_prob: float = 0.5
    max_rotation_deg: float = 25.0
    max_shift_frac: float = 0.1

    def __post_init__(self):
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")
        if not 0 <= self.max_rotation_deg <= 180:
            raise ValueError("max_rotation_deg must lie in [0, 180]")
        if not 0 <= self.max_shift_frac <= 0.5:
            raise ValueError("max_shift_frac must lie in [0, 0.5]")


NO_AUGMENT = AugmentSpec(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Transform:
    flip: bool = False
    angle_deg: float = 0.0
    shift_x: int = 0
    shift_y: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle_deg == 0 and self.shift_x == 0 and self.shift_y == 0


def sample_transform(spec: AugmentSpec, width: int, height: int, seed) -> Transform:
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < spec.flip_prob)
    angle = float(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg)) if spec.max_rotation_deg else 0.0
    sx = int(round(rng.uniform(-spec.max_shift_frac, spec.max_shift_frac) * width)) if spec.max_shift_frac else 0
    sy = int(round(rng.uniform(-spec.max_shift_frac, spec.max_shift_frac) * height)) if spec.max_shift_frac else 0
    return Transform(flip, angle, sx, sy)


def _source_coords(tf: Transform, width: int, height: int):
    """Inverse map: for each output pixel, where to sample in the (flipped) input.

    Positive angles rotate counter-clockwise as displayed, matching ``np.rot90``.
    """
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs -= tf.shift_x + cx
    ys -= tf.shift_y + cy
    rad = math.radians(tf.angle_deg)
    # exact values at right angles keep 90-degree turns a pure permutation
    cos_t, sin_t = round(math.cos(rad), 15), round(math.sin(rad), 15)
    src_x = cos_t * xs - sin_t * ys + cx
    src_y = sin_t * xs + cos_t * ys + cy
    return src_x, src_y


def _warp_nearest(arr: np.ndarray, src_x, src_y, fill) -> np.ndarray:
    h, w = arr.shape[:2]
    ix = np.floor(src_x + 0.5).astype(np.intp)
    iy = np.floor(src_y + 0.5).astype(np.intp)
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.full_like(arr, fill)
    out[valid] = arr[iy[valid], ix[valid]]
    return out


def _warp_bilinear(arr: np.ndarray, src_x, src_y) -> np.ndarray:
    h, w = arr.shape[:2]
    x0 = np.floor(src_x).astype(np.intp)
    y0 = np.floor(src_y).astype(np.intp)
    fx = (src_x - x0)[..., None]
    fy = (src_y - y0)[..., None]
    pad = np.zeros((h + 2, w + 2, arr.shape[2]), dtype=np.float64)
    pad[1:-1, 1:-1] = arr
    # shift into the zero-padded frame; anything further out samples zeros
    xa = np.clip(x0 + 1, 0, w + 1)
    xb = np.clip(x0 + 2, 0, w + 1)
    ya = np.clip(y0 + 1, 0, h + 1)
    yb = np.clip(y0 + 2, 0, h + 1)
    out = (pad[ya, xa] * (1 - fx) * (1 - fy) + pad[ya, xb] * fx * (1 - fy)
           + pad[yb, xa] * (1 - fx) * fy + pad[yb, xb] * fx * fy)
    far = (src_x < -1) | (src_x > w) | (src_y < -1) | (src_y > h)
    out[far] = 0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_transform(img: RgbImage, mask: LabelMask, tf: Transform) -> tuple[RgbImage, LabelMask]:
    if (img.width, img.height) != (mask.width, mask.height):
        raise ShapeError(f"image {img.width}x{img.height} and mask {mask.width}x{mask.height} differ")
    if tf.is_identity:
        return img, mask
    px, cl = img.pixels, mask.classes
    if tf.flip:
        px, cl = px[:, ::-1], cl[:, ::-1]
    if tf.angle_deg == 0 and tf.shift_x == 0 and tf.shift_y == 0:
        return RgbImage(px), LabelMask(cl)
    src_x, src_y = _source_coords(tf, img.width, img.height)
    return (RgbImage(_warp_bilinear(px, src_x, src_y)),
            LabelMask(_warp_nearest(cl, src_x, src_y, 0)))


def augment_pair(img: RgbImage, mask: LabelMask, spec: AugmentSpec, seed) -> tuple[RgbImage, LabelMask]:
    """Apply one randomly drawn transform to both image and mask.

    ``seed`` may be an int or anything ``np.random.default_rng`` accepts.
    Out-of-frame regions become black / background.
    """
    if (img.width, img.height) != (mask.width, mask.height):
        raise ShapeError(f"image {img.width}x{img.height} and mask {mask.width}x{mask.height} differ")
    return apply_transform(img, mask, sample_transform(spec, img.width, img.height, seed))
