"""Classical necrosis estimate: two-stage Otsu thresholding plus blob filtering.

This reconstructs the kind of threshold pipeline used by earlier CBSD tools;
it is a methodological stand-in, not a copy of any particular program.

1. luma grayscale (0.299 R + 0.587 G + 0.114 B);
2. Otsu on the whole image, brighter class = root; keep the largest
   4-connected component and fill its holes;
3. Otsu again on the root pixels only; the darker class is lesion tissue,
   provided the two classes are actually separated (``min_contrast``);
4. lesion blobs smaller than ``min_blob_px`` are dropped;
5. percentage via :func:`scoring.necrosis_percentage`.

The "root is the brighter class" assumption breaks on dark-fleshed roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogram, NoRootDetected
from .imgmask import BACKGROUND, NECROSIS, ROOT, LabelMask, RgbImage
from .scoring import NecrosisScore, score_mask

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
MIN_BLOB_PX = 16
MIN_CONTRAST = 40.0


@dataclass(frozen=True)
class OtsuResult:
    threshold: int
    between_class_variance: float
    necrosis_mask: LabelMask


def otsu_threshold(histogram) -> tuple[int, float]:
    """Threshold t maximizing w0 * w1 * (mu0 - mu1)^2, class 0 being levels <= t.

    The comparison is done on exact integers, so ties resolve to the smallest t.
    """
    hist = [int(c) for c in histogram]
    if len(hist) != 256:
        raise ValueError(f"histogram needs 256 bins, got {len(hist)}")
    if any(c < 0 for c in hist):
        raise ValueError("histogram counts must be non-negative")
    total = sum(hist)
    if total < 1:
        raise ValueError("histogram is empty")
    if sum(1 for c in hist if c) < 2:
        raise DegenerateHistogram("all pixels share one gray level; threshold undefined")

    total_sum = sum(i * c for i, c in enumerate(hist))
    best_t, best_num, best_den = -1, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * total^2 = (s0 * total - total_sum * n0)^2 / (n0 * n1)
        num = (s0 * total - total_sum * n0) ** 2
        den = n0 * n1
        if best_t < 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t, best_num / (best_den * total * total)


def grayscale(img: RgbImage) -> np.ndarray:
    px = img.pixels.astype(np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def _histogram(values: np.ndarray) -> np.ndarray:
    levels = np.clip(np.rint(values), 0, 255).astype(np.int64)
    return np.bincount(levels.ravel(), minlength=256)


def label_components(binary: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected component labels (0 = not set) and the component count."""
    return ndimage.label(binary, structure=FOUR_CONNECTED)


def remove_small_blobs(binary: np.ndarray, min_px: int) -> np.ndarray:
    labels, count = label_components(binary)
    if count == 0:
        return binary.copy()
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    keep = sizes >= min_px
    keep[0] = False
    return keep[labels]


def segment_root(gray: np.ndarray) -> np.ndarray:
    try:
        t, _ = otsu_threshold(_histogram(gray))
    except DegenerateHistogram:
        raise NoRootDetected("image has a single gray level") from None
    bright = np.rint(gray) > t
    labels, count = label_components(bright)
    if count == 0:
        raise NoRootDetected("no bright region found")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    root = labels == int(np.argmax(sizes))
    return ndimage.binary_fill_holes(root, structure=FOUR_CONNECTED)


def otsu_segment(img: RgbImage, min_blob_px: int = MIN_BLOB_PX,
                 min_contrast: float = MIN_CONTRAST) -> tuple[LabelMask, OtsuResult | None]:
    """Three-class mask from the threshold pipeline, plus the lesion-stage Otsu result."""
    gray = grayscale(img)
    if gray.max() <= 0:
        raise NoRootDetected("image is black")
    root = segment_root(gray)
    classes = np.full(gray.shape, BACKGROUND, dtype=np.uint8)
    classes[root] = ROOT

    inner = np.rint(gray[root])
    result = None
    try:
        t, var = otsu_threshold(_histogram(inner))
    except DegenerateHistogram:
        t = None
    if t is not None:
        dark, light = inner[inner <= t], inner[inner > t]
        if light.mean() - dark.mean() >= min_contrast:
            lesion = np.zeros_like(root)
            lesion[root] = inner <= t
            lesion = remove_small_blobs(lesion, min_blob_px)
            classes[lesion] = NECROSIS
            result = OtsuResult(t, var, LabelMask(np.where(lesion, NECROSIS, BACKGROUND).astype(np.uint8)))
    return LabelMask(classes), result


def baseline_score(img: RgbImage, min_blob_px: int = MIN_BLOB_PX,
                   min_contrast: float = MIN_CONTRAST) -> NecrosisScore:
    mask, _ = otsu_segment(img, min_blob_px, min_contrast)
    return score_mask(mask)
